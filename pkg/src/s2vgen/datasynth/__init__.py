from .filters import FilterConfig, Verdict, blur_score, filter_sample, iou, laplacian_variance, luminance
from .reference import Reference, ReferenceMode, make_reference
from .scene import RenderedScene, SceneError, SceneSpec, SubjectSpec, background_texture, render_scene, tight_box
from .taxonomy import DEFAULT_TAXONOMY, Match, Taxonomy, match_taxonomy

"""Run configuration: a versioned JSON document validated in one pass.

Unknown keys are errors. Relative paths resolve against the directory that
holds the config file.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..datasynth.corpus import SceneConfig
from ..datasynth.filters import FilterConfig
from ..dit import DiTConfig
from ..flowmatch import Phase, SamplerConfig, TrainConfig
from ..metrics import EXTRACTORS, MASK_SOURCES
from ..rope import RopeVariant

SCHEMA = "s2vgen.run/1"


class ConfigError(ValueError):
    """Every problem found in a config, reported together."""

    def __init__(self, problems: list[str]):
        super().__init__("invalid config:\n" + "\n".join(f"  - {p}" for p in problems))
        self.problems = problems


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SceneSection(_Strict):
    frames: int = Field(8, ge=1)
    resolution: tuple[int, int] = (32, 32)
    ref_size: tuple[int, int] | None = None
    max_subjects: int = Field(2, ge=1, le=3)
    p_still: float = Field(0.25, ge=0, le=1)
    size_range: tuple[float, float] = (0.25, 0.38)
    spins: tuple[float, ...] = (0.0, 0.0, 5.0, -5.0, 10.0, -10.0)
    layout: Literal["canonical", "random"] = "canonical"

    def build(self) -> SceneConfig:
        return SceneConfig(**self.model_dump())


class FilterSection(_Strict):
    min_area: float = 0.01
    max_area: float = 0.5
    max_iou: float = 0.3
    min_brightness: float = 0.05
    max_brightness: float = 0.95
    min_blur: float = 1e-3

    def build(self) -> FilterConfig:
        return FilterConfig(**self.model_dump())


Mix = tuple[float, float, float]


def _check_mix(mix: Mix) -> Mix:
    if any(m < 0 for m in mix) or sum(mix) <= 0:
        raise ValueError("mix weights must be non-negative with a positive sum")
    return mix


class DatasetSection(_Strict):
    path: str
    count: int = Field(256, ge=1)
    mix: Mix = (1.0, 0.0, 0.0)
    seed: int
    eval_count: int = Field(16, ge=1)
    eval_mix: Mix = (1.0, 0.0, 0.0)
    eval_seed: int
    scene: SceneSection = SceneSection()
    filters: FilterSection = FilterSection()

    _mix = field_validator("mix", "eval_mix")(_check_mix)


class ModelSection(_Strict):
    model_dim: int = 128
    depth: int = 4
    heads: int = 4
    head_dim: int = 32
    patch_t: int = 1
    patch_s: int = 4
    text_dim: int = 64
    max_refs: int = 3
    mlp_ratio: int = 4
    rope_axis_split: tuple[int, int, int] | None = None
    rope_base: float = 10000.0
    modulate_refs: bool = True
    per_image_t_zero: bool = False
    precondition: bool = True
    sigma_data: float = Field(0.5, gt=0)
    precision: Literal["single", "double"] = "single"
    init_seed: int

    @model_validator(mode="after")
    def _consistent(self):
        self.build(RopeVariant.SHIFT_WH)
        return self

    def build(self, variant: RopeVariant) -> DiTConfig:
        fields = self.model_dump(exclude={"init_seed"})
        return DiTConfig(**fields, variant=variant)


class PhaseSection(_Strict):
    name: str
    steps: int = Field(ge=0)
    lr: float = Field(gt=0)


class TrainingSection(_Strict):
    phases: tuple[PhaseSection, ...] = (
        PhaseSection(name="pretrain", steps=1500, lr=1e-3),
        PhaseSection(name="sft", steps=500, lr=5e-4),
    )
    batch_size: int = Field(1, ge=1)
    seed: int
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    weight_decay: float = Field(0.0, ge=0)
    clip_norm: float = Field(1.0, gt=0)
    warmup: int = Field(50, ge=0)
    decay: Literal["none", "cosine"] = "none"
    min_lr_ratio: float = Field(0.0, ge=0, le=1)

    def build(self) -> TrainConfig:
        d = self.model_dump()
        d["phases"] = tuple(Phase(**p) for p in d["phases"])
        return TrainConfig(**d)


class SamplerSection(_Strict):
    steps: int = Field(32, ge=1)
    seed: int
    guidance_scale: float = Field(0.0, ge=0)

    def build(self) -> SamplerConfig:
        return SamplerConfig(**self.model_dump())


class MetricSection(_Strict):
    extractor: str = "hist-rgb4-ori8"
    mask_source: str = "oracle"

    @field_validator("extractor")
    @classmethod
    def _known_extractor(cls, v):
        if v not in EXTRACTORS:
            raise ValueError(f"unknown extractor {v!r}; known: {sorted(EXTRACTORS)}")
        return v

    @field_validator("mask_source")
    @classmethod
    def _known_source(cls, v):
        if v not in MASK_SOURCES:
            raise ValueError(f"unknown mask source {v!r}; known: {sorted(MASK_SOURCES)}")
        return v


class AblationSection(_Strict):
    seeds: tuple[int, ...] = Field((0, 1, 2), min_length=3)


class RunConfig(_Strict):
    schema_: Literal["s2vgen.run/1"] = Field(alias="schema")
    dataset: DatasetSection
    model: ModelSection
    variant: RopeVariant = RopeVariant.SHIFT_WH
    training: TrainingSection
    sampler: SamplerSection
    metric: MetricSection = MetricSection()
    ablation: AblationSection = AblationSection()
    base_dir: str = Field(".", exclude=True)

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    @property
    def dit(self) -> DiTConfig:
        return self.model.build(self.variant)

    def resolve(self, path: str | Path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def dataset_dir(self) -> Path:
        return self.resolve(self.dataset.path)

    def snapshot(self) -> dict:
        """Plain JSON form; feeding it back through ``parse_config`` gives an equal config."""
        return self.model_dump(mode="json", by_alias=True, exclude={"base_dir"})

    def require_paths(self, *paths: Path) -> None:
        missing = [f"path does not exist: {p}" for p in paths if not Path(p).exists()]
        if missing:
            raise ConfigError(missing)


def _problems(err: ValidationError) -> list[str]:
    out = []
    for e in err.errors():
        where = ".".join(str(x) for x in e["loc"]) or "<root>"
        out.append(f"{where}: {e['msg']}")
    return out


def parse_config(raw: dict, base_dir: str | Path = ".") -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a JSON object"])
    try:
        return RunConfig.model_validate({**raw, "base_dir": str(base_dir)})
    except ValidationError as err:
        raise ConfigError(_problems(err)) from None


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read and validate a config file. ``overrides`` maps dotted keys to values."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: not valid JSON ({exc})"]) from None
    for key, value in (overrides or {}).items():
        set_dotted(raw, key, value)
    return parse_config(raw, path.parent)


def set_dotted(raw: dict, key: str, value) -> None:
    node = raw
    *parents, leaf = key.split(".")
    for p in parents:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError([f"cannot override {key}: {p} is not an object"])
    node[leaf] = value


def default_config(dataset_path: str = "data", seed: int = 0) -> dict:
    """A complete config document with every seed set to ``seed``."""
    return {
        "schema": SCHEMA,
        "dataset": {"path": dataset_path, "count": 256, "mix": [1, 0, 0], "seed": seed, "eval_seed": seed + 1},
        "model": {"init_seed": seed},
        "variant": RopeVariant.SHIFT_WH.value,
        "training": {"seed": seed},
        "sampler": {"seed": seed},
    }

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from s2vgen import dit
from s2vgen.dit import Conditioning, DiTConfig, PromptTokens, VideoTokens, forward, image_patches, init_params, patchify, unpatchify


def small(**kw):
    base = dict(model_dim=16, depth=2, heads=2, head_dim=8, text_dim=8, precision="double")
    return DiTConfig(**{**base, **kw})


def perturbed(config, seed=0, scale=0.3):
    """Initial parameters with the zero-initialized projections filled in, so every path is live."""
    store = init_params(config, seed)
    rng = np.random.default_rng(seed)
    for k, p in store.params.items():
        p += scale * rng.standard_normal(p.shape)
    return store


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.sampled_from([(1, 2), (2, 1), (1, 4), (2, 2)]))
def test_patchify_roundtrip(t, h, w, patch):
    pt, ps = patch
    x = np.random.default_rng(t * 100 + h * 10 + w).standard_normal((t * pt, 3, h * ps, w * ps))
    tok = patchify(x, patch)
    assert tok.grid == (t, h, w)
    assert tok.tokens.shape == (t * h * w, 3 * pt * ps * ps)
    np.testing.assert_array_equal(unpatchify(tok, patch, 3), x)


def test_patchify_reports_padding():
    with pytest.raises(ValueError, match="height 30 needs 2 more"):
        patchify(np.zeros((8, 3, 30, 32)), (1, 4))


def test_patchify_token_layout():
    x = np.arange(2 * 1 * 4 * 4, dtype=float).reshape(2, 1, 4, 4)
    tok = patchify(x, (1, 2))
    # second token of frame 0 is the top-right 2x2 patch
    np.testing.assert_array_equal(tok.tokens[1], [2, 3, 6, 7])


def test_default_config_size():
    cfg = DiTConfig()
    count = init_params(cfg, 0).count()
    assert 1_000_000 < count < 2_000_000
    assert cfg.patch_dim == 48


def test_config_validation():
    with pytest.raises(ValueError, match="model_dim"):
        DiTConfig(model_dim=100)
    with pytest.raises(ValueError, match="precision"):
        DiTConfig(precision="half")


def test_init_is_seeded_and_zeroes_outputs():
    a, b, c = init_params(small(), 0), init_params(small(), 0), init_params(small(), 1)
    for k in a.params:
        np.testing.assert_array_equal(a[k], b[k])
    assert not np.array_equal(a["blocks.0.attn.wqkv"], c["blocks.0.attn.wqkv"])
    for k in ("final.w", "final.b", "blocks.1.attn.wo", "blocks.0.cross.wo"):
        assert not a[k].any()


def _inputs(config, n_refs=2, seed=0):
    rng = np.random.default_rng(seed)
    video = VideoTokens(2, 2, 2, rng.standard_normal((8, config.patch_dim)))
    refs = [image_patches(rng.standard_normal((3, 8, 8)), config) for _ in range(n_refs)]
    return video, refs, PromptTokens([1, 2, 3])


def test_forward_shape_and_fresh_model_output():
    cfg = small()
    video, refs, prompt = _inputs(cfg)
    out = forward(video, refs, prompt, 0.5, init_params(cfg, 0), cfg)
    assert out.shape == video.tokens.shape
    # zero-initialized output layer: only the preconditioning skip remains
    skip, _, _ = dit.precondition(0.5, cfg.sigma_data)
    np.testing.assert_allclose(out.data, skip * video.tokens, rtol=1e-12)


def test_precondition_endpoints():
    s = 0.5
    assert dit.precondition(1.0, s) == pytest.approx((1.0, s, 1.0))
    assert dit.precondition(0.0, s) == pytest.approx((-1.0, 1.0, 1 / s))


def test_forward_depends_on_refs_prompt_and_variant():
    cfg = small()
    P = perturbed(cfg)
    video, refs, prompt = _inputs(cfg)
    base = forward(video, refs, prompt, 0.3, P, cfg).data
    assert not np.allclose(base, forward(video, refs[:1], prompt, 0.3, P, cfg).data)
    assert not np.allclose(base, forward(video, refs, PromptTokens([4, 2, 3]), 0.3, P, cfg).data)
    concat = cfg.with_(variant="Concat")
    assert not np.allclose(base, forward(video, refs, prompt, 0.3, P, concat).data)


def test_reference_order_is_irrelevant_when_positions_coincide():
    cfg = small(per_image_t_zero=True)
    P = perturbed(cfg)
    video, refs, prompt = _inputs(cfg)
    a = forward(video, refs, prompt, 0.4, P, cfg).data
    b = forward(video, refs[::-1], prompt, 0.4, P, cfg).data
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_too_many_refs_and_bad_timestep():
    cfg = small(max_refs=1)
    video, refs, prompt = _inputs(cfg)
    with pytest.raises(ValueError, match="max_refs"):
        Conditioning(refs, prompt, video.grid, cfg)
    with pytest.raises(ValueError, match="timestep"):
        forward(video, refs[:1], prompt, 1.5, init_params(cfg, 0), cfg)


def test_prompt_validation():
    with pytest.raises(ValueError):
        PromptTokens([])
    with pytest.raises(ValueError, match="outside"):
        PromptTokens([999]).validate(10)


def test_unmodulated_refs_see_clean_timestep():
    cfg = small(modulate_refs=False)
    P = perturbed(cfg)
    video, refs, prompt = _inputs(cfg)
    a = forward(video, refs, prompt, 0.2, P, cfg).data
    b = forward(video, refs, prompt, 0.2, P, small()).data
    assert not np.allclose(a, b)

import numpy as np
import pytest

from sebsfv.metrics import entropy
from sebsfv.pipeline import ForegroundStack, PipelineConfig, finalize, render, run_pipeline, se_bsfv_stream
from sebsfv.synth import SceneSpec, ShadowTrack, generate_scene
from sebsfv.videodata import VideoMatrix, quantize_u8


def test_config_defaults_and_validation():
    cfg = PipelineConfig()
    assert (cfg.chunk, cfg.K, cfg.eta, cfg.forgetting) == (100, 5, 0.98, 0.98)
    for bad in (dict(K=0), dict(chunk=1), dict(rank=0), dict(forgetting=0.0), dict(eta=-1.0), dict(chunk=10, rank=10)):
        with pytest.raises(ValueError):
            PipelineConfig(**bad).validate()
    assert PipelineConfig(**cfg.to_dict()) == cfg


def test_static_noise_free_low_rank_input_gives_empty_stack():
    sc = generate_scene(SceneSpec(width=32, height=32, n_frames=40, shadows=[], noise_sigma=(0.0, 0.0)))
    stack, diags, ranks = se_bsfv_stream(sc.video, PipelineConfig(chunk=20, rank=3))
    assert ranks == [3, 3]
    assert np.abs(stack.residual).max() <= 1e-6
    assert not any(d["failed"] for d in diags)


def test_chunk_boundaries_every_hundred_frames():
    rng = np.random.default_rng(0)
    X = rng.random((6, 2)) @ rng.random((2, 250)) + 0.01 * rng.standard_normal((6, 250))
    stack, diags, ranks = se_bsfv_stream(VideoMatrix(X, None, 2, 3), PipelineConfig(rank=2, K=2))
    assert stack.boundaries == [0, 100, 200]
    assert stack.chunks() == [(0, 100), (100, 200), (200, 250)]
    assert len(diags) == 250 and [d["frame"] for d in diags] == list(range(250))
    assert len(ranks) == 3


@pytest.fixture(scope="module")
def moving_shadow():
    spec = SceneSpec(width=64, height=64, n_frames=60, shadows=[ShadowTrack((5, 20), (0.8, 0.2), (12, 8))])
    sc = generate_scene(spec)
    res = run_pipeline(sc.video, PipelineConfig(chunk=60, K=2, rank=3))
    return spec, sc, res


def _box_mask(spec, boxes):
    m = np.zeros((spec.height * spec.width, spec.n_frames), bool)
    for b in boxes:
        img = np.zeros((spec.height, spec.width), bool)
        img[b.y : b.y + b.h, b.x : b.x + b.w] = True
        m[:, b.frame] |= img.ravel()
    return m


def test_residual_concentrates_in_shadow_boxes(moving_shadow):
    spec, sc, res = moving_shadow
    inside = _box_mask(spec, sc.boxes)
    R = np.abs(res.stack.residual)
    assert R[inside].mean() >= 5 * R[~inside].mean()


def test_shadow_residual_is_negative(moving_shadow):
    spec, sc, res = moving_shadow
    inside = _box_mask(spec, sc.boxes)
    assert np.median(res.stack.residual[inside]) < 0


def test_enhanced_output_shape_and_range(moving_shadow):
    spec, sc, res = moving_shadow
    out = res.enhanced
    assert (out.height, out.width, out.n) == (64, 64, 60)
    assert out.data.min() >= 0.0 and out.data.max() <= 1.0
    assert res.timings.total > 0
    assert set(res.timings.to_dict()) == {"registration", "online", "admm", "total"}


def test_enhancement_lowers_entropy(moving_shadow):
    spec, sc, res = moving_shadow
    raw = np.mean([entropy(quantize_u8(f.pixels)) for f in sc.video.frames()])
    enh = np.mean([entropy(quantize_u8(f.pixels)) for f in res.enhanced.frames()])
    assert enh < raw


def test_diagnostics_content(moving_shadow):
    _, _, res = moving_shadow
    d = res.diagnostics[10]
    assert {"frame", "chunk", "failed", "inner_iterations", "converged", "log_likelihood", "mixture", "v"} <= set(d)
    assert 1 <= d["inner_iterations"] <= 20
    assert len(d["mixture"]["pi"]) == 2 and abs(sum(d["mixture"]["pi"]) - 1) < 1e-9


def test_zero_stack_renders_black():
    stack = ForegroundStack(np.zeros((12, 10)), np.ones((12, 10), bool), [0], 3, 4)
    out, reports = finalize(stack)
    assert not out.data.any() and len(reports) == 1


def test_render_negates_clamps_and_masks():
    shadow = np.array([[-2.0, 1.0], [-1.0, -4.0]])
    mask = np.array([[True, True], [True, False]])
    out = render(shadow, mask, percentile=100)
    # positives clamp to 0, the invalid pixel renders 0, the largest valid negation maps to 1
    np.testing.assert_allclose(out, [[1.0, 0.0], [0.5, 0.0]])


def test_failed_frame_is_masked_and_recorded():
    rng = np.random.default_rng(1)
    X = rng.random((20, 2)) @ rng.random((2, 12))
    mask = np.ones_like(X, bool)
    mask[:, 7] = False
    stack, diags, _ = se_bsfv_stream(VideoMatrix(X, mask, 4, 5), PipelineConfig(chunk=12, rank=2, K=1))
    assert diags[7]["failed"] and not stack.mask[:, 7].any()
    assert not diags[6]["failed"]


def test_pipeline_deterministic():
    sc = generate_scene(SceneSpec(width=40, height=40, n_frames=30, shadows=[ShadowTrack((4, 10), (0.5, 0.2), (10, 8))]))
    cfg = PipelineConfig(chunk=30, K=2, rank=2)
    a = run_pipeline(sc.video, cfg)
    b = run_pipeline(sc.video, cfg)
    assert np.array_equal(a.enhanced.data, b.enhanced.data)
    assert np.array_equal(a.stack.residual, b.stack.residual)


def test_carry_state_keeps_rank():
    rng = np.random.default_rng(2)
    X = rng.random((30, 2)) @ rng.random((2, 60)) + 0.01 * rng.standard_normal((30, 60))
    _, _, ranks = se_bsfv_stream(VideoMatrix(X, None, 5, 6), PipelineConfig(chunk=20, rank=2, K=2, carry_state=True))
    assert ranks == [2, 2, 2]

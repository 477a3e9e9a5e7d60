import numpy as np
import pytest

from staa.attribution import (
    EnhancementParams, ExplanationRecord, SpatialMap, attribute,
    dynamic_threshold, explain, focus, normalize, normalize_map,
)
from staa.errors import AttributionInputError, DegenerateInputError, InvalidSpecError
from staa.model import forward, init_model, plant_key_bias, ModelConfig
from staa.videoio import ClipSpec, generate_clip


def test_uniform_attention_gives_uniform_maps(zero_model, clip):
    out = forward(zero_model, clip)
    m_t, m_s = attribute(out, 8, 4)
    assert m_t.values.shape == (8,)
    assert m_s.values.shape == (4, 8)
    assert np.allclose(m_s.values, 1.0 / 33, atol=1e-12)
    assert np.allclose(m_t.values, 1.0 / 33, atol=1e-12)


def test_conservation_between_maps(model):
    for seed in range(5):
        clip = generate_clip(ClipSpec(8, 32, 32, seed=seed))
        out = forward(model, clip)
        m_t, m_s = attribute(out, 8, 4)
        assert np.allclose(m_s.values.sum(axis=0), 4 * m_t.values, atol=1e-9)


def test_planted_bias_wins_argmax(model, clip):
    planted = plant_key_bias(model, 2, 5, 50.0)
    out = forward(planted, clip)
    m_t, m_s = attribute(out, 8, 4)
    assert np.unravel_index(np.argmax(m_s.values), m_s.values.shape) == (2, 5)
    assert np.argmax(m_t.values) == 5


def test_attribute_rejects_space_only(model, clip):
    from staa.model import forward_frame
    out = forward_frame(model, clip.frames[0])
    with pytest.raises(AttributionInputError):
        attribute(out, 8, 4)


def test_attribute_cls_row_mode(model, clip):
    out = forward(model, clip)
    m_t, m_s = attribute(out, 8, 4, query_mode="cls-row")
    stacked = np.mean([t.weights for t in out.final_attention], axis=0)
    assert np.allclose(m_s.values.T.reshape(-1), stacked[0, 1:], atol=1e-12)


def test_dynamic_threshold_hand_case():
    theta = dynamic_threshold(np.array([0.1, 0.2, 0.3, 0.4]), 1.0)
    assert theta == pytest.approx(0.25 + np.sqrt(0.0125), abs=1e-12)
    assert theta == pytest.approx(0.3618, abs=5e-4)


def test_dynamic_threshold_lambda_zero_is_mean():
    values = np.array([0.3, 0.9, 0.1])
    assert dynamic_threshold(values, 0.0) == pytest.approx(values.mean())


def test_dynamic_threshold_constant_vector():
    assert dynamic_threshold(np.full(6, 0.7), 0.8) == pytest.approx(0.7)


def test_dynamic_threshold_empty():
    with pytest.raises(DegenerateInputError):
        dynamic_threshold(np.array([]), 1.0)


def test_focus_hand_case():
    sm = SpatialMap(values=np.array([[0.1], [0.2], [0.3], [0.4]]))
    focused = focus(sm, 1.0)
    assert np.allclose(focused.values[:, 0], [0, 0, 0, 0.4])


def test_focus_constant_frame_retained():
    sm = SpatialMap(values=np.full((4, 2), 0.25))
    assert np.array_equal(focus(sm, 1.0).values, sm.values)


def test_focus_non_increasing_and_support_shrinks():
    rng = np.random.default_rng(2)
    values = rng.random((4, 8))
    sm = SpatialMap(values=values)
    focused = focus(sm, 0.5)
    assert np.all(focused.values <= values)
    assert np.all((focused.values > 0) <= (values > 0))


def test_focus_monotone_in_lambda():
    rng = np.random.default_rng(3)
    sm = SpatialMap(values=rng.random((4, 8)))
    lams = [0.0, 0.25, 0.5, 0.75, 1.0]
    supports = [np.count_nonzero(focus(sm, lam).values) for lam in lams]
    assert supports == sorted(supports, reverse=True)
    for l1, l2 in zip(lams, lams[1:]):
        s1 = focus(sm, l1).values > 0
        s2 = focus(sm, l2).values > 0
        assert np.all(s2 <= s1)


def test_normalize_endpoints():
    assert np.allclose(normalize(np.array([0.0, 2.0, 4.0])), [0, 0.5, 1])


def test_normalize_constant_is_zeros():
    assert np.array_equal(normalize(np.full(5, 3.3)), np.zeros(5))


def test_normalize_focused_output():
    assert np.allclose(normalize(np.array([0, 0, 0, 0.4])), [0, 0, 0, 1])


def test_normalize_range_and_argmax_preserved():
    rng = np.random.default_rng(5)
    for _ in range(20):
        frame = rng.random(6)
        out = normalize(frame)
        assert out.min() == 0.0 and out.max() == 1.0
        assert np.argmax(out) == np.argmax(frame)


def test_lambda_bounds():
    with pytest.raises(InvalidSpecError):
        EnhancementParams(lam=1.5)
    with pytest.raises(InvalidSpecError):
        EnhancementParams(lam=-0.1)


def test_explain_record(model, clip):
    rec = explain(model, clip, EnhancementParams())
    assert rec.model_evals == 1
    assert rec.num_frames == 8 and rec.patches == 4
    assert len(rec.temporal) == 8
    assert len(rec.spatial) == 4 and len(rec.spatial[0]) == 8
    rec2 = explain(model, clip, EnhancementParams())
    assert rec.spatial == rec2.spatial
    assert rec.temporal == rec2.temporal


def test_explain_planted_top_patch(clip):
    model = plant_key_bias(init_model(ModelConfig(seed=9)), 3, 1, 60.0)
    rec = explain(model, clip, EnhancementParams(enhance=False))
    values = np.asarray(rec.spatial)
    assert np.unravel_index(np.argmax(values), values.shape) == (3, 1)


def test_record_json_round_trip(model, clip):
    rec = explain(model, clip, keep_raw=True)
    back = ExplanationRecord.from_json(rec.to_json())
    assert back.spatial == rec.spatial
    assert back.clip_id == rec.clip_id
    assert back.raw_spatial == rec.raw_spatial

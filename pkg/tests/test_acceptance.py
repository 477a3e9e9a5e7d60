"""Acceptance suite: one test per criterion, each printing a pass line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
report.
"""

import math
import time

import numpy as np
import pytest

from staa import service
from staa.attribution import (
    EnhancementParams, SpatialMap, attribute, dynamic_threshold, explain,
    focus, normalize,
)
from staa.baselines import (
    CountingPredictor, FunctionPredictor, exact_shapley, lime_spatial,
    permutation_shapley, segment, shap_exact,
)
from staa.errors import ProtocolError
from staa.metrics import (
    ScoreOraclePredictor, faithfulness, kendall_tau, monotonicity,
    rank_spatial,
)
from staa.model import ModelConfig, forward, init_model, plant_key_bias
from staa.videoio import ClipSpec, VideoClip, generate_clip


def _report(number, name):
    print(f"ACCEPTANCE {number:2d} {name}: PASS")


def test_criterion_1_shapley_axioms():
    """Efficiency, symmetry (players 0/1), dummy (last player) within 1e-9
    over 200 random 3-8 player games."""
    rng = np.random.default_rng(20)
    start = time.perf_counter()
    for _ in range(200):
        n = int(rng.integers(3, 9))
        # value depends on |S ∩ {0,1}| and on S minus the dummy last player,
        # making 0/1 interchangeable and player n-1 null by construction
        table = {}

        def value(s):
            s = frozenset(s)
            key = (len(s & {0, 1}), frozenset(i for i in s if 2 <= i < n - 1))
            if key not in table:
                table[key] = float(rng.random())
            return table[key]

        phi = exact_shapley(value, n)
        assert abs(phi.sum() - (value(frozenset(range(n))) - value(frozenset()))) < 1e-9
        assert abs(phi[0] - phi[1]) < 1e-9
        assert abs(phi[n - 1]) < 1e-9
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, f"axiom sweep took {elapsed:.1f}s"
    _report(1, "shapley axioms over 200 random games")


def test_criterion_2_monte_carlo_convergence():
    synergy = lambda s: 1.0 if {0, 1} <= set(s) else 0.0
    exact = exact_shapley(synergy, 3)
    assert np.allclose(exact, [0.5, 0.5, 0.0], atol=1e-12)

    est = permutation_shapley(synergy, 3, 2000, seed=0)
    assert np.abs(est - exact).max() < 0.05

    errors = [np.abs(permutation_shapley(synergy, 3, k, seed=0) - exact).max()
              for k in (50, 500, 5000)]
    for e1, e2 in zip(errors, errors[1:]):
        assert e2 <= e1 + 0.02, f"error sequence not non-increasing: {errors}"
    _report(2, "monte carlo convergence on synergy game")


def test_criterion_3_kendall_tau_oracle():
    def brute(a, b):
        n = len(a)
        s = ta = tb = 0
        for i in range(n):
            for j in range(i + 1, n):
                da, db = a[i] - a[j], b[i] - b[j]
                ta += int(da == 0)
                tb += int(db == 0)
                s += int(da * db > 0) - int(da * db < 0)
        n0 = n * (n - 1) // 2
        return s / math.sqrt((n0 - ta) * (n0 - tb))

    rng = np.random.default_rng(21)
    checked = 0
    while checked < 500:
        n = int(rng.integers(2, 51))
        a = np.round(rng.random(n) * 4) / 4  # quarter grid forces ties
        b = np.round(rng.random(n) * 4) / 4
        if np.all(a == a[0]) or np.all(b == b[0]):
            continue
        assert abs(kendall_tau(a, b) - brute(a, b)) < 1e-12
        checked += 1
    _report(3, "kendall tau vs brute-force pair counting (500 vectors)")


def test_criterion_4_staa_aggregation(zero_model, model):
    clip = generate_clip(ClipSpec(8, 32, 32, seed=1))
    m_t, m_s = attribute(forward(zero_model, clip), 8, 4)
    assert np.abs(m_s.values - 1 / 33).max() < 1e-9
    assert np.abs(m_t.values - 1 / 33).max() < 1e-9

    for seed in range(100):
        c = generate_clip(ClipSpec(8, 32, 32, seed=seed))
        m_t, m_s = attribute(forward(model, c), 8, 4)
        assert np.abs(m_s.values.sum(axis=0) - 4 * m_t.values).max() < 1e-9
    _report(4, "aggregation: uniform maps + conservation on 100 clips")


def test_criterion_5_enhancement_semantics():
    frame = np.array([0.1, 0.2, 0.3, 0.4])
    theta = dynamic_threshold(frame, 1.0)
    assert theta == pytest.approx(0.25 + math.sqrt(0.0125), abs=1e-12)
    focused = focus(SpatialMap(values=frame[:, None]), 1.0).values[:, 0]
    assert np.allclose(focused, [0, 0, 0, 0.4])
    assert np.allclose(normalize(focused), [0, 0, 0, 1])

    rng = np.random.default_rng(22)
    sm = SpatialMap(values=rng.random((4, 8)))
    prev_support = None
    for lam in (0.0, 0.25, 0.5, 0.75, 1.0):
        support = focus(sm, lam).values > 0
        if prev_support is not None:
            assert np.all(support <= prev_support)
        prev_support = support
    _report(5, "enhancement hand cases + monotone lambda sweep")


def test_criterion_6_planted_signal_oracle():
    hits = 0
    rng = np.random.default_rng(23)
    for trial in range(100):
        cfg = ModelConfig(seed=trial)
        patch = int(rng.integers(0, 4))
        frame = int(rng.integers(0, 8))
        planted = plant_key_bias(init_model(cfg), patch, frame, 50.0)
        clip = generate_clip(ClipSpec(8, 32, 32, seed=1000 + trial))
        _, m_s = attribute(forward(planted, clip), 8, 4)
        top = np.unravel_index(np.argmax(m_s.values), m_s.values.shape)
        hits += top == (patch, frame)
    assert hits >= 95, f"planted unit recovered in only {hits}/100 trials"

    # perfect monotonicity of the attention ranking under the oracle predictor
    planted = plant_key_bias(init_model(ModelConfig(seed=3)), 1, 4, 50.0)
    clip = generate_clip(ClipSpec(8, 32, 32, seed=9))
    _, m_s = attribute(forward(planted, clip), 8, 4)
    assert np.all(m_s.values > 0)
    oracle = ScoreOraclePredictor(clip, m_s.values, (2, 2))
    result = monotonicity(oracle, clip, rank_spatial(m_s.values, (2, 2)))
    assert result.tau == 1.0
    _report(6, f"planted signal recovered {hits}/100; oracle monotonicity 1.0")


def test_criterion_7_relative_cost(model):
    clip = generate_clip(ClipSpec(8, 32, 32, seed=2))
    start = time.perf_counter()

    staa_walls = []
    for _ in range(3):
        t0 = time.perf_counter()
        explain(model, clip, EnhancementParams())
        staa_walls.append(time.perf_counter() - t0)
    staa_wall = float(np.mean(staa_walls))

    predictor = CountingPredictor(model)
    target = int(np.argmax(predictor.predict(clip)))
    partition = segment(8, 8)
    before = predictor.eval_count
    t0 = time.perf_counter()
    shap = shap_exact(predictor, clip, partition, target)
    shap_wall = time.perf_counter() - t0
    shap_evals = predictor.eval_count - before
    assert shap_evals == 256

    before = predictor.eval_count
    t0 = time.perf_counter()
    lime_spatial(predictor, clip, 8, 1000, (2, 2), seed=0)
    lime_wall = time.perf_counter() - t0
    lime_evals = predictor.eval_count - before
    assert lime_evals == 8000

    assert staa_wall <= 0.03 * shap_wall, (
        f"attention pass {staa_wall*1e3:.2f}ms vs 3% of SHAP "
        f"{shap_wall*1e3:.2f}ms")
    assert staa_wall <= 0.005 * lime_wall, (
        f"attention pass {staa_wall*1e3:.2f}ms vs 0.5% of LIME "
        f"{lime_wall*1e3:.2f}ms")
    total = time.perf_counter() - start
    assert total < 120.0
    _report(7, f"cost: staa/shap={staa_wall/shap_wall:.3%} "
               f"staa/lime={staa_wall/lime_wall:.3%} evals 1/256, 1/8000")


def test_criterion_8_serving_latency(model, tmp_path):
    clip = generate_clip(ClipSpec(8, 32, 32, seed=4))
    offline = explain(model, VideoClip(frames=clip.frames, clip_id="ref"),
                      EnhancementParams())
    srv = service.ExplanationServer(model, EnhancementParams(), queue_capacity=16)
    srv.start()
    try:
        log = service.stream_client(srv.address, clip, batch_size=8, repeats=200)
    finally:
        srv.stop()

    assert len(log.records) == 200
    assert log.drop_count == 0
    assert srv.dropped == 0
    for record in log.records:
        assert np.array_equal(record.explanation.spatial, np.asarray(offline.spatial))
        assert np.array_equal(record.explanation.temporal, np.asarray(offline.temporal))

    lat = np.sort(np.asarray(log.latencies_ms))
    from staa.viz import emit_cdf, percentile
    p95 = percentile(lat, 0.95)
    assert p95 < 150.0, f"p95 latency {p95:.1f}ms"

    cdf_path = tmp_path / "cdf.csv"
    emit_cdf(lat, cdf_path)
    rows = [line.split(",") for line in cdf_path.read_text().strip().splitlines()[1:]]
    lats = [float(r[0]) for r in rows]
    fracs = [float(r[1]) for r in rows]
    assert lats == sorted(lats) and fracs == sorted(fracs)
    assert fracs[-1] == 1.0
    _report(8, f"serving: 200/200 bitwise-equal explanations, p95={p95:.2f}ms")


def test_criterion_9_faithfulness_contracts(noise_clip):
    rng = np.random.default_rng(24)
    ranking = rank_spatial(rng.random((4, 8)), (2, 2))
    clips = [noise_clip, generate_clip(ClipSpec(8, 32, 32, seed=31))]

    unchanged = faithfulness(FunctionPredictor(lambda c: [0.8, 0.2]),
                             clips, [ranking, ranking])
    assert unchanged.score == 1.0

    seq = iter([0.9, 0.1, 0.5, 0.5])
    pooled = faithfulness(FunctionPredictor(lambda c: [next(seq), 0.0]),
                          clips, [ranking, ranking])
    assert pooled.score == pytest.approx(0.5)

    for _ in range(100):
        values = iter(rng.random(4))
        result = faithfulness(FunctionPredictor(lambda c: [next(values), 0.0]),
                              clips, [ranking, ranking])
        assert 0.0 <= result.score <= 1.0
    _report(9, "faithfulness: literal=1 unchanged, 0.5 pooled case, bounded")


def test_criterion_10_protocol():
    rng = np.random.default_rng(25)
    for msg_type in (service.MSG_BATCH, service.MSG_EXPLANATION,
                     service.MSG_ERROR, service.MSG_SHUTDOWN):
        for _ in range(1000):
            payload = rng.bytes(int(rng.integers(0, 64)))
            msg = service.WireMessage(msg_type, payload)
            decoded, _ = service.decode_message(service.encode_message(msg))
            assert decoded == msg

    good = service.encode_message(service.WireMessage(service.MSG_BATCH, b"abc"))
    with pytest.raises(ProtocolError) as err:
        service.decode_message(b"ZZZZ" + good[4:])
    assert err.value.code == service.ERR_BAD_MAGIC
    with pytest.raises(ProtocolError) as err:
        service.decode_message(good[:-2])
    assert err.value.code == service.ERR_TRUNCATED
    _report(10, "protocol round-trip x4000 + malformed rejection codes")

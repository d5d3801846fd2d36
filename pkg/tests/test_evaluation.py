import threading

import numpy as np
import pytest

from strata import design_space as ds
from strata.evaluation import (EvaluationError, Evaluator, FrequencyGrid, MockAntenna, MockParams,
                               Response, linear_test_response, mock_reflection, quadratic_test_response)

from conftest import X0, random_designs

# away from the gap clamp: l_f - Y * mean(x_g) = 8 - 17.2 * 0.4125 > 0.1
X_SMOOTH = np.array([12, 8, 16, 0.5, 1.2, 0.2, 0.4, 0.5, 0.45, 0.35, 0.6, 0.7, 0.55, 0.5])


def test_grid_points():
    g = FrequencyGrid()
    f = g.points
    assert f.size == 101 and f[0] == 3.1 and f[-1] == pytest.approx(10.6)
    np.testing.assert_allclose(np.diff(f), 0.075, atol=1e-12)
    with pytest.raises(ValueError):
        FrequencyGrid(5, 4)
    with pytest.raises(ValueError):
        FrequencyGrid(n=1)


def test_response_shape_contract():
    with pytest.raises(ValueError):
        Response(np.zeros(3), np.zeros(4))


class Counting:
    thread_safe = True

    def __init__(self, fn):
        self.fn, self.calls = fn, 0
        self._lock = threading.Lock()

    def __call__(self, x):
        with self._lock:
            self.calls += 1
        return self.fn(x)


def test_cache_hit_leaves_total_unchanged():
    model = Counting(lambda x: np.asarray(x) * 2.0)
    ev = Evaluator(model)
    a = ev.evaluate([1.0, 2.0])
    b = ev.evaluate([1.0, 2.0])
    assert a is b
    assert ev.ledger.total == 1 and ev.ledger.cache_hits == 1 and model.calls == 1


def test_quantized_key_merges_tiny_differences():
    ev = Evaluator(Counting(lambda x: np.asarray(x)))
    ev.evaluate([0.1, 0.2])
    ev.evaluate([0.1 + 1e-12, 0.2])
    assert ev.ledger.total == 1
    ev.evaluate([0.1 + 1e-8, 0.2])
    assert ev.ledger.total == 2


def test_ledger_identity_and_phases(rng):
    model = Counting(lambda x: np.asarray(x))
    ev = Evaluator(model, threads=3)
    calls = 0
    points = [rng.integers(0, 5, 3).astype(float) for _ in range(40)]
    with ev.in_phase("a"):
        for p in points[:20]:
            ev.evaluate(p)
            calls += 1
    with ev.in_phase("b"):
        ev.evaluate_many(points[20:])
        calls += 20
    distinct = {tuple(p) for p in points}
    assert ev.ledger.total == len(distinct) == model.calls
    assert ev.ledger.total + ev.ledger.cache_hits == calls
    assert sum(ev.ledger.per_phase.values()) == ev.ledger.total
    assert ev.phase == "default"


def test_failures_counted_and_not_cached():
    def model(x):
        if x[0] < 0:
            raise ds.InfeasibleGeometryError("negative")
        return np.asarray(x)

    ev = Evaluator(model)
    with pytest.raises(EvaluationError):
        ev.evaluate([-1.0])
    out = ev.evaluate_many([[1.0], [-1.0], [2.0]], errors="none")
    assert out[1] is None and out[0] is not None
    assert ev.ledger.failures == 2 and ev.ledger.total == 2
    assert ev.cached([-1.0]) is None


def test_malformed_response_rejected():
    ev = Evaluator(lambda x: np.array([np.nan, 1.0]))
    with pytest.raises(EvaluationError):
        ev.evaluate([0.0])


def test_parallel_trace_matches_serial(rng):
    xs = random_designs(rng, 2, 12)
    xs += xs[:3]
    traces = []
    for threads in (1, 4):
        events = []
        ev = Evaluator(MockAntenna(), FrequencyGrid(), threads=threads, sink=events.append)
        out = ev.evaluate_many(xs)
        traces.append((events, [r.values.tobytes() for r in out], ev.ledger.snapshot()))
    assert traces[0] == traces[1]


def test_mock_formula_oracle():
    grid = FrequencyGrid()
    feats = {"perimeter": 18.85, "feed_length": 6.0, "mean_ground_height": 5.95, "footprint_bb": 170.0}
    r = mock_reflection(feats, grid)
    p = MockParams()
    f = grid.points
    base = -1.5 - 10 * 170 / 450
    assert base == pytest.approx(-5.278, abs=1e-3)
    d = 14 * np.exp(-abs(0.1 - 1.5) / 2)
    assert d == pytest.approx(6.95, abs=1e-2)
    assert 150 / 18.85 == pytest.approx(7.96, abs=1e-2)
    oracle = np.full_like(f, base)
    for k in range(1, p.k_max + 1):
        sig = 0.35 + 0.15 * k
        oracle -= d * np.exp(-(f - k * 150 / 18.85) ** 2 / (2 * sig**2))
    np.testing.assert_allclose(r.values, oracle, rtol=0, atol=1e-12)
    assert np.all(r.values < 0)


def test_mock_base_and_maximal_coupling():
    grid = FrequencyGrid()
    # base term alone (dips switched off)
    feats = {"perimeter": 20.0, "feed_length": 6.0, "mean_ground_height": 4.5, "footprint_bb": 450.0}
    np.testing.assert_allclose(mock_reflection(feats, grid, MockParams(d0=1e-300)).values, -11.5, atol=1e-12)
    # and the dipped response never rises above it
    assert np.all(mock_reflection(feats, grid).values <= -11.5)
    # gap = g_star -> dip depth d0 at a resonance placed exactly on a grid point
    grid = FrequencyGrid(3.0, 9.0, 61)
    feats = {"perimeter": 150 / 6.0, "feed_length": 6.0, "mean_ground_height": 4.5, "footprint_bb": 0.0}
    p = MockParams(k_max=1)
    r = mock_reflection(feats, grid, p)
    i = int(np.argmin(np.abs(grid.points - 6.0)))
    assert r.values[i] == pytest.approx(p.base0 - p.d0, abs=1e-12)


def test_mock_size_monotonicity():
    grid = FrequencyGrid()
    feats = {"perimeter": 20.0, "feed_length": 6.0, "mean_ground_height": 5.0}
    prev = None
    for a in np.linspace(50, 800, 16):
        v = mock_reflection({**feats, "footprint_bb": a}, grid).values
        if prev is not None:
            assert np.all(v < prev)
        prev = v


def test_mock_deterministic_and_shaped(rng):
    m = MockAntenna()
    for x in random_designs(rng, 8, 5):
        a, b = m(x), m(x.copy())
        assert a.shape == (101,) and a.tobytes() == b.tobytes()


def test_mock_second_order_smoothness():
    m = MockAntenna()
    x = X_SMOOTH
    checked = 0
    for k in range(x.size):
        h = 0.04 if k >= 6 else (0.05 if k in (3, 4) else 0.2)

        def cd(step):
            e = np.zeros_like(x)
            e[k] = step
            return (m(x + e) - m(x - e)) / (2 * step)

        ref = (4 * cd(h / 8) - cd(h / 4)) / 3
        e1, e2 = np.max(np.abs(cd(h) - ref)), np.max(np.abs(cd(h / 2) - ref))
        if e1 < 1e-8:
            continue  # response is affine (or constant) in this coordinate
        checked += 1
        assert 2.5 <= e1 / e2 <= 6, (k, e1 / e2)
    assert checked >= 8


def test_mock_params_validation():
    with pytest.raises(ValueError):
        MockParams(d0=0)
    with pytest.raises(ValueError):
        MockParams(k_max=0)


def test_linear_response(rng):
    A, b = rng.normal(size=(4, 3)), rng.normal(size=4)
    fn = linear_test_response(A, b)
    np.testing.assert_array_equal(fn(np.zeros(3)), b)
    for k in range(3):
        np.testing.assert_allclose(fn(np.eye(3)[k]), b + A[:, k], atol=1e-15)
    u = rng.random(3)
    oracle = [sum(A[i, j] * u[j] for j in range(3)) + b[i] for i in range(4)]
    np.testing.assert_allclose(fn(u), oracle, atol=1e-12)
    with pytest.raises(ValueError):
        fn(np.zeros(2))
    with pytest.raises(ValueError):
        linear_test_response(A, np.zeros(3))


def test_quadratic_response():
    c = np.full(5, 0.5)
    fn = quadratic_test_response(c)
    np.testing.assert_array_equal(fn(c), np.zeros(5))
    np.testing.assert_array_equal(fn(np.zeros(5)), -0.5 * np.ones(5))


def test_mock_initial_design_is_infeasible():
    r = Evaluator(MockAntenna(), FrequencyGrid()).evaluate(X0)
    assert -6.5 < r.values.max() < -4.0

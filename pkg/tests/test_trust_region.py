import numpy as np
import pytest
from scipy.optimize import linprog

from strata import design_space as ds
from strata.evaluation import EvaluationError, Evaluator, Response, linear_test_response, quadratic_test_response
from strata.trust_region import (EVAL_BUDGET, RADIUS_TOL, STEP_TOL, LinearSurrogate, TrConfig, fd_jacobian,
                                 gain_ratio, solve_subproblem, surrogate_predict, tr_optimize, update_radius)


def linear_objective(values, freqs, u):
    return np.sum(values, axis=-1)


def sq_objective(values, freqs, u):
    return np.sum(np.asarray(values) ** 2, axis=-1)


def max_objective(values, freqs, u):
    return np.max(values, axis=-1)


class Recorder:
    """Evaluator model wrapper remembering every input it was called with."""
    thread_safe = True

    def __init__(self, fn):
        self.fn, self.seen = fn, []

    def __call__(self, u):
        self.seen.append(np.array(u))
        return self.fn(u)


def test_config_validation():
    with pytest.raises(ValueError):
        TrConfig(rho_accept=0.8)
    with pytest.raises(ValueError):
        TrConfig(delta0=0.001)
    with pytest.raises(ValueError):
        TrConfig(fd_step=0.0)


# -- finite differences -------------------------------------------------------------

@pytest.mark.parametrize("D", [2, 8])
def test_fd_exact_on_affine(D, rng):
    A, b = rng.normal(size=(5, D)), rng.normal(size=5)
    ev = Evaluator(linear_test_response(A, b))
    u = rng.random(D)
    u[0] = 0.99  # forces a backward column
    center = ev.evaluate(u)
    J = fd_jacobian(ev, u, center, 0.05)
    np.testing.assert_allclose(J, A, rtol=0, atol=1e-10)


def test_fd_costs_D_with_cached_center(rng):
    A, b = rng.normal(size=(3, 8)), rng.normal(size=3)
    ev = Evaluator(linear_test_response(A, b))
    u = rng.random(8) * 0.9
    center = ev.evaluate(u)
    assert ev.ledger.total == 1
    fd_jacobian(ev, u, center)
    assert ev.ledger.total == 9


def test_fd_backward_at_upper_bound():
    rec = Recorder(lambda u: np.array([np.sum(u)]))
    ev = Evaluator(rec)
    u = np.array([0.98, 0.2])
    fd_jacobian(ev, u, ev.evaluate(u), 0.05)
    pts = np.array(rec.seen[1:])
    assert np.all(pts <= 1.0)
    assert pts[0, 0] == pytest.approx(0.93)


def test_fd_retries_half_step_then_opposite():
    def model(u):
        if u[0] > 0.53 or u[1] > 0.3:
            raise ds.InfeasibleGeometryError("outside")
        return np.array([2 * u[0] + 3 * u[1]])

    ev = Evaluator(model)
    u = np.array([0.5, 0.3])
    J = fd_jacobian(ev, u, ev.evaluate(u), 0.05)
    np.testing.assert_allclose(J, [[2, 3]], atol=1e-12)
    assert ev.ledger.failures == 3  # col 0 at h (h/2 works); col 1 at h and h/2 (backward works)
    assert ev.ledger.total == 3


def test_fd_gives_up_when_all_directions_fail():
    def model(u):
        if abs(u[0] - 0.5) > 1e-12:
            raise ds.InfeasibleGeometryError("pinned")
        return np.array([u[0]])

    ev = Evaluator(model)
    with pytest.raises(EvaluationError):
        fd_jacobian(ev, np.array([0.5]), ev.evaluate([0.5]))


# -- surrogate --------------------------------------------------------------------------

def test_surrogate_anchor_and_affine_exactness(rng):
    A, b = rng.normal(size=(4, 3)), rng.normal(size=4)
    fn = linear_test_response(A, b)
    c = rng.random(3)
    s = LinearSurrogate(c, Response(fn(c), np.arange(4.0)), A)
    assert s.predict(c).tobytes() == fn(c).tobytes()
    U = rng.random((50, 3))
    np.testing.assert_allclose(s.predict(U), U @ A.T + b, atol=1e-12)
    assert surrogate_predict(s, c).values.tobytes() == fn(c).tobytes()
    with pytest.raises(ValueError):
        s.predict(np.zeros(2))


def test_surrogate_first_order_error_on_smooth_response(rng):
    fn = lambda u: np.array([np.sin(3 * u[0]) + u[1] ** 2, np.cos(2 * u[1])])  # noqa: E731
    ev = Evaluator(fn)
    c = np.array([0.4, 0.6])
    center = ev.evaluate(c)
    s = LinearSurrogate(c, center, fd_jacobian(ev, c, center, 1e-6))
    for _ in range(20):
        d = rng.normal(size=2)
        u = c + 0.01 * d / np.linalg.norm(d)
        # second-order remainder: 0.5 * max|Hessian| * r^2 with |H| <= 9
        assert np.max(np.abs(s.predict(u) - fn(u))) <= 0.5 * 9 * 0.01**2 + 1e-6


# -- subproblem ---------------------------------------------------------------------------

def _lp_minimax(A, b):
    """Exact minimizer of max_i (A u + b)_i over the unit box."""
    m, D = A.shape
    c = np.r_[np.zeros(D), 1.0]
    res = linprog(c, A_ub=np.c_[A, -np.ones(m)], b_ub=-b, bounds=[(0, 1)] * D + [(None, None)])
    return res.x[:D], res.fun


@pytest.mark.parametrize("D", [1, 2, 3])
def test_subproblem_matches_dense_oracle(D):
    rng = np.random.default_rng(100 + D)
    target = rng.uniform(0.35, 0.65, D)
    # V-shaped max of affine pieces with a unique interior minimizer at `target`
    dirs = np.vstack([np.eye(D), -np.ones((1, D))]) * rng.uniform(1, 3, (D + 1, 1))
    A, b = dirs, -dirs @ target
    fn = lambda U: np.max(U @ A.T + b, axis=-1)  # noqa: E731
    u_c, delta = np.full(D, 0.5), 0.4
    cand = solve_subproblem(fn, u_c, delta, rng=np.random.default_rng(0))
    exact, _ = _lp_minimax(A, b)
    assert np.linalg.norm(exact - u_c) < delta  # ball inactive
    samples = u_c + delta * (rng.random((1_000_000, D)) * 2 - 1)
    samples = samples[np.linalg.norm(samples - u_c, axis=1) <= delta]
    dense = samples[np.argmin(fn(samples))]
    assert fn(cand[None])[0] <= fn(dense[None])[0] + 1e-12
    assert np.linalg.norm(cand - exact) <= 1e-4
    assert np.linalg.norm(cand - dense) <= 3e-2


def test_subproblem_respects_ball_and_box(rng):
    g = rng.normal(size=4)
    fn = lambda U: U @ g  # noqa: E731
    u_c = np.array([0.9, 0.1, 0.5, 0.5])
    cand = solve_subproblem(fn, u_c, 0.3)
    assert np.linalg.norm(cand - u_c) <= 0.3 + 1e-12
    assert np.all((cand >= 0) & (cand <= 1))
    assert fn(cand[None])[0] < fn(u_c[None])[0]


def test_subproblem_degenerate_cases():
    u_c = np.array([0.3, 0.7])
    assert np.array_equal(solve_subproblem(lambda U: U[:, 0], u_c, 0.0), u_c)
    assert np.array_equal(solve_subproblem(lambda U: np.zeros(len(U)), u_c, 0.5), u_c)
    tiny = solve_subproblem(lambda U: U[:, 0], u_c, 1e-12)
    assert np.linalg.norm(tiny - u_c) <= 1e-12


# -- gain ratio and radius ---------------------------------------------------------------------

def test_gain_ratio_examples():
    assert gain_ratio(9.0, 10.0, 9.0, 10.0) == 1.0
    assert gain_ratio(9.5, 10.0, 9.0, 10.0) == 0.5
    assert gain_ratio(11.0, 10.0, 9.0, 10.0) < 0
    assert gain_ratio(9.0, 10.0, 10.0, 10.0) == -1.0
    assert gain_ratio(np.inf, 10.0, 9.0, 10.0) == -np.inf


def test_update_radius_examples():
    assert update_radius(1, 0.8) == 2
    assert update_radius(1, 0.5) == pytest.approx(1 / 3)
    assert update_radius(1, 0.75) == 1
    assert update_radius(1, -3) == pytest.approx(1 / 3)


def test_rejected_step_when_model_overshoots():
    ev = Evaluator(lambda u: np.array([(u[0] - 0.6) ** 2]))
    res = tr_optimize(ev, linear_objective, [0.5], TrConfig(delta0=0.5))
    first = res.history[1]
    assert first.rho < 0 and not first.accepted
    assert first.delta == pytest.approx(0.5 / 3)


# -- driver ---------------------------------------------------------------------------------

def _check_trace(res, rec, cfg):
    """Shared invariants over a finished run."""
    assert all(np.all((p >= 0) & (p <= 1)) for p in rec.seen)
    D = res.dimension
    assert res.evals_used == 1 + D * res.n_models + res.n_accepted + res.n_rejected \
        - res.n_cached_candidates + res.n_fd_extra
    assert res.evals_used == res.expected_cost()
    prev_delta = cfg.delta0
    for h in res.history[1:]:
        # candidate within the ball of the radius in force when it was proposed
        assert h.step <= prev_delta + 1e-12
        prev_delta = h.delta
    # accepted objective values never increase within a constant-alpha run
    acc = [h.objective for h in res.history if h.accepted]
    assert all(b <= a + 1e-12 for a, b in zip(acc, acc[1:]))


@pytest.mark.parametrize("D", [2, 8])
def test_affine_run_exact(D, rng):
    A, b = rng.normal(size=(3, D)), rng.normal(size=3)
    rec = Recorder(linear_test_response(A, b))
    ev = Evaluator(rec)
    cfg = TrConfig()
    res = tr_optimize(ev, linear_objective, np.full(D, 0.5), cfg)
    steps = res.history[1:]
    assert steps and all(h.accepted and abs(h.rho - 1) <= 1e-9 for h in steps)
    assert [h.delta for h in steps] == [2.0 ** (i + 1) for i in range(len(steps))]
    assert res.termination_reason == STEP_TOL
    _check_trace(res, rec, cfg)


def test_quadratic_run_converges():
    c = np.random.default_rng(7).uniform(0.2, 0.8, 5)
    rec = Recorder(quadratic_test_response(c))
    ev = Evaluator(rec)
    cfg = TrConfig(epsilon=1e-6)
    res = tr_optimize(ev, sq_objective, np.full(5, 0.1), cfg)
    assert np.linalg.norm(res.best_u - c) <= 1e-3
    assert ev.ledger.total <= 200
    _check_trace(res, rec, cfg)


def test_first_iteration_costs_D_plus_one():
    A = np.random.default_rng(3).normal(size=(2, 8))
    ev = Evaluator(linear_test_response(A, np.zeros(2)))
    events = []
    res = tr_optimize(ev, linear_objective, np.full(8, 0.5), sink=events.append)
    assert events[0]["evals_total"] == 1
    # center + 8 columns before the first candidate, candidate is the 10th
    assert events[1]["evals_total"] == 10
    assert res.history[1].evals_total == 10


def test_eval_budget_returns_result():
    c = np.full(6, 0.77)
    ev = Evaluator(quadratic_test_response(c))
    res = tr_optimize(ev, sq_objective, np.zeros(6), TrConfig(max_true_evals=20, epsilon=1e-9))
    assert res.termination_reason == EVAL_BUDGET
    assert ev.ledger.total <= 20 and res.evals_used == res.expected_cost()


def test_radius_termination():
    # pure noise-like response: the model is never trusted, delta collapses
    ev = Evaluator(lambda u: np.array([np.sin(400 * u[0]) + np.sin(377 * u[1])]))
    res = tr_optimize(ev, linear_objective, [0.5, 0.5], TrConfig())
    assert res.termination_reason in (RADIUS_TOL, STEP_TOL)
    assert res.evals_used == res.expected_cost()


def test_best_objective_is_min_over_accepted():
    c = np.array([0.3, 0.6, 0.2])
    ev = Evaluator(quadratic_test_response(c))
    res = tr_optimize(ev, sq_objective, np.full(3, 0.9))
    scores = [sq_objective(r.values, r.freqs, u) for u, r in res.iterates]
    assert res.best_objective == min(scores)


def test_runs_are_reproducible():
    c = np.array([0.3, 0.6, 0.2, 0.5])
    out = []
    for threads in (1, 4):
        ev = Evaluator(quadratic_test_response(c), threads=threads)
        events = []
        tr_optimize(ev, max_objective, np.full(4, 0.9), sink=events.append)
        out.append(events)
    assert out[0] == out[1]


class Switching:
    """Objective with an observable mode, to check re-scoring after a switch."""

    def __init__(self):
        self.alpha = 0

    def __call__(self, values, freqs, u):
        v = np.sum(np.asarray(values) ** 2, axis=-1)
        return v if self.alpha == 0 else 10 * v

    def observe(self, values, freqs, u, eval_index=None):
        if self.alpha == 0 and np.sum(np.asarray(values) ** 2) < 0.01:
            self.alpha = 1
            return True
        return False


def test_mode_recorded_when_scored():
    obj = Switching()
    ev = Evaluator(quadratic_test_response(np.full(2, 0.5)))
    res = tr_optimize(ev, obj, np.zeros(2), TrConfig())
    alphas = [h.alpha for h in res.history]
    assert alphas[0] == 0 and obj.alpha == 1
    assert sorted(alphas) == alphas

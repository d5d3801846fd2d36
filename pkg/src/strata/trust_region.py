"""Trust-region optimization with first-order (Jacobian) response surrogates.

All arithmetic happens in normalized coordinates ``u`` in ``[0, 1]^D``.  At each
center the vector response is linearized with one-sided finite differences and
the scalar objective of the linearized response is minimized over the
intersection of the box and a Euclidean ball of radius ``delta``.

Cost per iteration: ``D`` evaluations to build a model at a new center plus one
evaluation per candidate, i.e. ``D + 1`` per accepted step and ``1`` per
rejected step.  The center response is reused from the evaluator cache.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .evaluation import EvaluationError, Evaluator, Response

log = logging.getLogger(__name__)

STEP_TOL = "step_tol"
RADIUS_TOL = "radius_tol"
EVAL_BUDGET = "eval_budget"


@dataclass(frozen=True)
class TrConfig:
    delta0: float = 1.0
    epsilon: float = 1e-2
    rho_accept: float = 0.0
    rho_expand: float = 0.75
    expand_factor: float = 2.0
    shrink_divisor: float = 3.0
    fd_step: float = 0.05
    max_true_evals: int = 5000
    subproblem_budget: int = 5000
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.rho_accept < self.rho_expand < 1:
            raise ValueError("need 0 <= rho_accept < rho_expand < 1")
        if not self.delta0 > self.epsilon > 0:
            raise ValueError("need delta0 > epsilon > 0")
        if self.expand_factor <= 1 or self.shrink_divisor <= 1:
            raise ValueError("expand_factor and shrink_divisor must exceed 1")
        if not 0 < self.fd_step <= 0.5:
            raise ValueError("fd_step must lie in (0, 0.5]")
        if self.max_true_evals < 1 or self.subproblem_budget < 1:
            raise ValueError("budgets must be positive")


@dataclass
class LinearSurrogate:
    center_u: np.ndarray
    center_response: Response
    jacobian: np.ndarray  # (n responses, D)

    def predict(self, u) -> np.ndarray:
        """Linearized response values; ``u`` may be a ``(m, D)`` batch."""
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.center_u.size:
            raise ValueError(f"expected inputs of dimension {self.center_u.size}")
        return self.center_response.values + (u - self.center_u) @ self.jacobian.T


def surrogate_predict(s: LinearSurrogate, u) -> Response:
    return Response(s.predict(u), s.center_response.freqs)


@dataclass
class TrStep:
    i: int
    u: np.ndarray
    delta: float
    rho: float | None
    accepted: bool
    objective: float
    alpha: int | None
    evals_total: int
    step: float
    candidate: np.ndarray | None = None


@dataclass
class OptResult:
    best_u: np.ndarray
    best_objective: float
    best_response: Response
    termination_reason: str
    ledger: dict
    history: list = field(default_factory=list)
    dimension: int = 0
    n_models: int = 0
    n_accepted: int = 0
    n_rejected: int = 0
    n_cached_candidates: int = 0
    n_fd_extra: int = 0  # retried/cached finite-difference columns, net of D per model
    evals_used: int = 0
    iterates: list = field(default_factory=list)  # accepted (u, response) pairs, initial point first

    def expected_cost(self) -> int:
        """Evaluation count implied by the iteration record."""
        return (1 + self.dimension * self.n_models + self.n_accepted + self.n_rejected
                - self.n_cached_candidates + self.n_fd_extra)


# -- building blocks ---------------------------------------------------------------

def _identity(u):
    return u


def _fd_point(u_c, h, k, sign):
    p = u_c.copy()
    p[k] += sign * h
    return p


def fd_jacobian(evaluator: Evaluator, u_c, center: Response, h: float = 0.05, to_input=_identity):
    """One-sided finite-difference Jacobian of the response at ``u_c``.

    Forward steps, switched to backward where ``u_c[k] + h`` would leave the unit
    box.  A column whose perturbed design cannot be evaluated is retried with
    ``h / 2`` and then in the opposite direction before giving up.
    """
    u_c = np.asarray(u_c, dtype=float)
    D = u_c.size
    signs = np.where(u_c + h > 1.0, -1.0, 1.0)
    points = [_fd_point(u_c, h, k, signs[k]) for k in range(D)]
    responses = evaluator.evaluate_many([to_input(p) for p in points], errors="none")
    J = np.empty((center.values.size, D))
    for k in range(D):
        resp, step, sign = responses[k], h, signs[k]
        if resp is None:
            for step, sign in ((h / 2, signs[k]), (h, -signs[k])):
                if not 0.0 <= u_c[k] + sign * step <= 1.0:
                    continue
                resp = evaluator.evaluate_many([to_input(_fd_point(u_c, step, k, sign))], errors="none")[0]
                if resp is not None:
                    break
        if resp is None:
            raise EvaluationError(f"finite-difference column {k} could not be evaluated")
        J[:, k] = (resp.values - center.values) / (sign * step)
    return J


def gain_ratio(true_new, true_old, model_new, model_old) -> float:
    predicted = model_new - model_old
    if abs(predicted) < 1e-14:
        return -1.0
    actual = true_new - true_old
    if not np.isfinite(actual):
        return -np.inf
    return float(actual / predicted)


def update_radius(delta: float, rho: float, cfg: TrConfig = TrConfig()) -> float:
    if rho > cfg.rho_expand:
        return delta * cfg.expand_factor
    if rho < cfg.rho_expand:
        return delta / cfg.shrink_divisor
    return delta


def _project(points, u_c, delta):
    d = points - u_c
    norm = np.linalg.norm(d, axis=-1, keepdims=True)
    scale = np.where(norm > delta, delta / np.maximum(norm, 1e-300), 1.0)
    return np.clip(u_c + d * scale, 0.0, 1.0)


def solve_subproblem(scalar_fn, u_c, delta: float, budget: int = 5000, rng=None):
    """Minimize ``scalar_fn`` over ``[0,1]^D`` intersected with ``||u - u_c|| <= delta``.

    ``scalar_fn`` maps a ``(m, D)`` batch to ``m`` objective values and is meant
    to be cheap (a surrogate).  Multi-start pattern search: the center and the
    ``2D`` axis points at radius ``delta`` seed polls of step ``delta / 4`` that
    halve down to ``delta * 1e-6``; when the coordinate poll fails a few random
    directions are tried before halving.  Returns ``u_c`` itself unless a
    strictly better point was found.
    """
    u_c = np.asarray(u_c, dtype=float)
    D = u_c.size
    rng = rng if rng is not None else np.random.default_rng(0)
    f_c = float(scalar_fn(u_c[None, :])[0])
    if delta <= 0:
        return u_c.copy()
    eye = np.eye(D)
    axes = np.vstack([eye, -eye])
    starts = _project(u_c + delta * axes, u_c, delta)
    f_starts = scalar_fn(starts)
    probes = 1 + 2 * D
    best_u, best_f = u_c.copy(), f_c
    seeds = [(f_c, u_c)] + [(float(f), s) for f, s in zip(f_starts, starts)]
    seeds.sort(key=lambda t: t[0])
    for f0, s in seeds:
        if f0 < best_f:
            best_u, best_f = s.copy(), f0

    min_step = delta * 1e-6
    for f0, x in seeds:
        if probes >= budget:
            break
        if not np.isfinite(f0):
            continue
        x, fx, step = x.copy(), f0, delta / 4
        while step >= min_step and probes < budget:
            polls = _project(x + step * axes, u_c, delta)
            fp = scalar_fn(polls)
            probes += len(polls)
            j = int(np.argmin(fp))
            if fp[j] < fx:
                move = polls[j] - x
                x, fx = polls[j], float(fp[j])
                # pattern move along the successful direction
                while probes < budget:
                    y = _project(x + move, u_c, delta)[None, :]
                    fy = float(scalar_fn(y)[0])
                    probes += 1
                    if not fy < fx:
                        break
                    move = y[0] - x
                    x, fx = y[0], fy
                continue
            dirs = rng.standard_normal((min(D, 8), D))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            polls = _project(x + step * np.vstack([dirs, -dirs]), u_c, delta)
            fp = scalar_fn(polls)
            probes += len(polls)
            j = int(np.argmin(fp))
            if fp[j] < fx:
                x, fx = polls[j], float(fp[j])
            else:
                step /= 2
        if fx < best_f:
            best_u, best_f = x.copy(), fx
    return best_u if best_f < f_c else u_c.copy()


# -- driver ---------------------------------------------------------------------------

def _scalar(objective, response: Response, u) -> float:
    return float(np.asarray(objective(response.values[None, :], response.freqs, np.asarray(u)[None, :]))[0])


def tr_optimize(evaluator: Evaluator, objective, u0, cfg: TrConfig = TrConfig(), *,
                to_input=_identity, sink=None, rng=None) -> OptResult:
    """Run the trust-region loop from ``u0``.

    ``objective(values, freqs, u)`` scores ``(m, n)`` response batches at
    ``(m, D)`` inputs.  If it has an ``observe(values, freqs, u, eval_index)``
    method, that is called on every accepted true response (and the starting
    point) and may switch the objective's mode; the incumbent is then re-scored.
    ``sink`` receives one dict per iteration.
    """
    u = np.clip(np.asarray(u0, dtype=float), 0.0, 1.0)
    D = u.size
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    start_total = evaluator.ledger.total
    observe = getattr(objective, "observe", None)

    def used():
        return evaluator.ledger.total - start_total

    def alpha():
        return getattr(objective, "alpha", None)

    r = evaluator.evaluate(to_input(u))
    if observe is not None:
        observe(r.values, r.freqs, u, evaluator.ledger.total)
    f = _scalar(objective, r, u)
    delta = cfg.delta0
    history = [TrStep(0, u.copy(), delta, None, True, f, alpha(), evaluator.ledger.total, 0.0)]
    iterates = [(u.copy(), r)]
    model = None
    n_models = n_acc = n_rej = n_cached = n_fd_extra = 0
    reason = None
    i = 0

    def emit(step: TrStep):
        history.append(step)
        if sink is not None:
            sink({
                "event": "iteration",
                "i": step.i,
                "delta": step.delta,
                "rho": step.rho,
                "accepted": step.accepted,
                "objective": step.objective,
                "alpha": step.alpha,
                "evals_total": step.evals_total,
            })

    if sink is not None:
        h0 = history[0]
        sink({"event": "iteration", "i": 0, "delta": delta, "rho": None, "accepted": True,
              "objective": f, "alpha": h0.alpha, "evals_total": h0.evals_total})

    while True:
        if model is None:
            if used() + D > cfg.max_true_evals:
                reason = EVAL_BUDGET
                break
            before = evaluator.ledger.total
            J = fd_jacobian(evaluator, u, r, cfg.fd_step, to_input)
            model = LinearSurrogate(u.copy(), r, J)
            n_models += 1
            n_fd_extra += evaluator.ledger.total - before - D

        def surrogate_objective(U, model=model):
            return objective(model.predict(U), r.freqs, U)

        cand = solve_subproblem(surrogate_objective, u, delta, cfg.subproblem_budget, rng)
        step = float(np.linalg.norm(cand - u))
        if step <= cfg.epsilon:
            reason = STEP_TOL
            break
        if used() + 1 > cfg.max_true_evals:
            reason = EVAL_BUDGET
            break
        i += 1
        x_cand = to_input(cand)
        was_cached = evaluator.cached(x_cand) is not None
        n_cached += was_cached
        try:
            r_new = evaluator.evaluate(x_cand)
            f_new = _scalar(objective, r_new, cand)
        except EvaluationError as exc:
            log.debug("candidate evaluation failed: %s", exc)
            r_new, f_new = None, np.inf
        m_old = float(surrogate_objective(u[None, :])[0])
        m_new = float(surrogate_objective(cand[None, :])[0])
        rho = gain_ratio(f_new, f, m_new, m_old)
        accepted = rho > cfg.rho_accept
        delta = update_radius(delta, rho, cfg)
        step_alpha = alpha()
        if accepted:
            u, r, f = cand, r_new, f_new
            n_acc += 1
            model = None
            iterates.append((u.copy(), r))
        else:
            n_rej += 1
        # recorded under the mode in force when the candidate was scored
        emit(TrStep(i, u.copy(), delta, rho, accepted, f, step_alpha, evaluator.ledger.total, step,
                    cand.copy()))
        if accepted and observe is not None and observe(r.values, r.freqs, u, evaluator.ledger.total):
            f = _scalar(objective, r, u)
        if delta <= cfg.epsilon:
            reason = RADIUS_TOL
            break

    # best accepted iterate under the final mode
    scores = [_scalar(objective, resp, uu) for uu, resp in iterates]
    k = int(np.argmin(scores))
    best_u, best_r = iterates[k]
    result = OptResult(
        best_u=best_u.copy(),
        best_objective=float(scores[k]),
        best_response=best_r,
        termination_reason=reason,
        ledger=evaluator.ledger.snapshot(),
        history=history,
        dimension=D,
        n_models=n_models,
        n_accepted=n_acc,
        n_rejected=n_rej,
        n_cached_candidates=n_cached,
        n_fd_extra=n_fd_extra,
        evals_used=used(),
        iterates=iterates,
    )
    log.info("TR finished (%s) after %d evaluations: objective %.6g", reason, result.evals_used,
             result.best_objective)
    return result

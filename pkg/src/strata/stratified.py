"""Coarse-to-fine meta-loop over increasing spline knot counts."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import design_space as ds
from .evaluation import Evaluator
from .objective import ModeSwitchingObjective, ObjectiveConfig, ObjectiveState
from .trust_region import EVAL_BUDGET, OptResult, TrConfig, tr_optimize

log = logging.getLogger(__name__)

SCHEDULE_END = "schedule_end"
NO_IMPROVEMENT = "no_improvement"
REL_IMPROVEMENT = 1e-6


@dataclass(frozen=True)
class MetaSchedule:
    knot_counts: tuple = (1, 8, 16, 24, 32)

    def __post_init__(self):
        counts = tuple(int(k) for k in self.knot_counts)
        if not counts:
            raise ValueError("schedule needs at least one knot count")
        if min(counts) < 1 or any(b <= a for a, b in zip(counts, counts[1:])):
            raise ValueError(f"knot counts must be >= 1 and strictly increasing, got {counts}")
        object.__setattr__(self, "knot_counts", counts)


class DesignProblem:
    """Maps normalized optimizer coordinates onto raw designs with ``L`` knots."""

    def __init__(self, L: int, convention: str = "bounding_box"):
        self.L = L
        self.bounds = ds.default_bounds(L)
        self.convention = convention

    @property
    def dimension(self) -> int:
        return ds.dimension(self.L)

    def to_design(self, u) -> np.ndarray:
        return ds.denormalize(u, self.bounds)

    def to_unit(self, x) -> np.ndarray:
        return ds.normalize(x, self.bounds)

    def area(self, u):
        u = np.asarray(u, dtype=float)
        a = ds.footprint_raw(self.to_design(u).reshape(-1, u.shape[-1]), self.convention)
        return a.reshape(u.shape[:-1])


@dataclass
class MetaStep:
    L: int
    result: OptResult
    cost: int
    x_opt: np.ndarray
    canonical: float
    max_db: float
    footprint: float
    alpha: int


@dataclass
class MetaResult:
    per_step: list
    final_x: np.ndarray
    final_index: int
    total_cost: int
    stop_reason: str
    state: ObjectiveState = field(default_factory=ObjectiveState)

    @property
    def final_step(self) -> MetaStep:
        return self.per_step[self.final_index]

    def summary(self) -> dict:
        return {
            "steps": [
                {"L": s.L, "cost": s.cost, "best_objective": s.canonical, "max_db": s.max_db,
                 "footprint": s.footprint, "termination": s.result.termination_reason,
                 "alpha": s.alpha}
                for s in self.per_step
            ],
            "total_cost": self.total_cost,
            "stop_reason": self.stop_reason,
            "final_step": self.final_index,
        }


def lift_design(x_opt, L_new: int) -> np.ndarray:
    """Re-express a design with more knots; core parameters are copied verbatim."""
    x_c, x_g, x_r = ds.split_vector(x_opt)
    if L_new <= len(x_g):
        raise ValueError(f"lift target L'={L_new} must exceed current L={len(x_g)}")
    return ds.join_vector(
        x_c,
        ds.interpolate_knots(x_g, L_new, "open"),
        ds.interpolate_knots(x_r, L_new, "periodic"),
    )


def compare_meta(U_prev: float, U_new: float) -> bool:
    """True when the new meta-step optimum strictly improves on the previous one."""
    return U_new < U_prev - REL_IMPROVEMENT * abs(U_prev)


def stratified_optimize(schedule: MetaSchedule, x0, evaluator: Evaluator,
                        obj_cfg: ObjectiveConfig = ObjectiveConfig(), tr_cfg: TrConfig = TrConfig(), *,
                        state: ObjectiveState | None = None, max_total_evals: int | None = None,
                        sink=None) -> MetaResult:
    """Run one TR optimization per knot count, lifting each optimum to the next.

    The mode selector (and its recorded area) carries over between meta-steps.
    Meta-steps are compared with the mode-1 objective; the loop stops at the
    first step that fails to improve and keeps the previous optimum.
    """
    state = state if state is not None else ObjectiveState()
    budget = tr_cfg.max_true_evals if max_total_evals is None else max_total_evals
    x = np.asarray(x0, dtype=float)
    if ds.knot_count(x) != schedule.knot_counts[0]:
        raise ValueError(f"x0 has L={ds.knot_count(x)}, schedule starts at {schedule.knot_counts[0]}")
    start_total = evaluator.ledger.total
    steps: list[MetaStep] = []
    stop_reason, final_index = SCHEDULE_END, 0

    for j, L in enumerate(schedule.knot_counts):
        if j > 0:
            x = lift_design(steps[-1].x_opt, L)
        problem = DesignProblem(L, obj_cfg.footprint_convention)
        objective = ModeSwitchingObjective(problem.area, obj_cfg, state, sink=sink)
        remaining = budget - (evaluator.ledger.total - start_total)
        phase = f"meta-{j}"
        if sink is not None:
            sink({"event": "meta_start", "j": j, "L": L, "x0": x.tolist()})
        with evaluator.in_phase(phase):
            result = tr_optimize(
                evaluator, objective, problem.to_unit(x),
                replace(tr_cfg, max_true_evals=max(remaining, 1), seed=tr_cfg.seed + j),
                to_input=problem.to_design, sink=sink,
            )
        r = result.best_response
        step = MetaStep(
            L=L,
            result=result,
            cost=evaluator.ledger.per_phase.get(phase, 0),
            x_opt=problem.to_design(result.best_u),
            canonical=float(objective.canonical(r.values, r.freqs, result.best_u)),
            max_db=float(objective.max_db(r.values, r.freqs)),
            footprint=float(problem.area(result.best_u)),
            alpha=state.alpha,
        )
        steps.append(step)
        log.info("meta-step %d (L=%d): cost %d, canonical %.6g, max %.3f dB, area %.2f mm2",
                 j, L, step.cost, step.canonical, step.max_db, step.footprint)
        if sink is not None:
            sink({"event": "meta_end", "j": j, "L": L, "cost": step.cost, "best_objective": step.canonical,
                  "max_db": step.max_db, "footprint": step.footprint, "evals_total": evaluator.ledger.total})
        if j > 0 and not compare_meta(steps[-2].canonical, step.canonical):
            stop_reason, final_index = NO_IMPROVEMENT, j - 1
            break
        final_index = j
        if result.termination_reason == EVAL_BUDGET:
            stop_reason = EVAL_BUDGET
            break

    return MetaResult(
        per_step=steps,
        final_x=steps[final_index].x_opt,
        final_index=final_index,
        total_cost=sum(s.cost for s in steps),
        stop_reason=stop_reason,
        state=state,
    )

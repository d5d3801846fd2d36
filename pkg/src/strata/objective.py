"""Composite size/performance objective with a three-mode selector.

Modes:
    0  drive the worst in-band reflection below ``S1``
    1  shrink the footprint, heavily penalizing any ``S1`` violation
    2  recover reflection, penalizing growth beyond the recorded area ``A1``

Switching happens only on true (not surrogate) responses of accepted iterates:
0 -> 1 once ``U1 < 0``, 1 -> 2 once the in-band maximum exceeds ``S2``, and
2 -> 1 once it falls below ``S1`` again.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .design_space import FOOTPRINT_CONVENTIONS

BAND_TOL = 1e-9
FEASIBILITY_TOL = 1e-3  # dB; optimizers converge onto the S1 boundary from either side


class ObjectiveStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class ObjectiveConfig:
    S1: float = -10.0
    S2: float = -9.5
    gamma1: float = 1000.0
    gamma2: float = 500.0
    footprint_convention: str = "bounding_box"
    f_lo: float = 3.1
    f_hi: float = 10.6

    def __post_init__(self):
        if not self.S2 > self.S1:
            raise ValueError("S2 must exceed S1")
        if self.gamma1 <= 0 or self.gamma2 <= 0:
            raise ValueError("penalty coefficients must be positive")
        if self.footprint_convention not in FOOTPRINT_CONVENTIONS:
            raise ValueError(f"footprint_convention must be one of {FOOTPRINT_CONVENTIONS}")
        if not self.f_lo < self.f_hi:
            raise ValueError("band needs f_lo < f_hi")


@dataclass
class ObjectiveState:
    alpha: int = 0
    A1: float | None = None
    transition_log: list = field(default_factory=list)

    def __post_init__(self):
        if self.alpha not in (0, 1, 2):
            raise ObjectiveStateError(f"alpha must be 0, 1 or 2, got {self.alpha}")


def band_mask(freqs, cfg: ObjectiveConfig = ObjectiveConfig()) -> np.ndarray:
    freqs = np.asarray(freqs, dtype=float)
    mask = (freqs >= cfg.f_lo - BAND_TOL) & (freqs <= cfg.f_hi + BAND_TOL)
    if not mask.any():
        raise ValueError(f"no grid point inside the band [{cfg.f_lo}, {cfg.f_hi}] GHz")
    return mask


def max_in_band(values, freqs, cfg: ObjectiveConfig = ObjectiveConfig()):
    """Worst (highest) reflection over the band; works on ``(..., n)`` batches."""
    return np.max(np.asarray(values, dtype=float)[..., band_mask(freqs, cfg)], axis=-1)


def is_feasible(max_db, cfg: "ObjectiveConfig" = None) -> bool:
    cfg = cfg or ObjectiveConfig()
    return bool(max_db <= cfg.S1 + FEASIBILITY_TOL)


def u1(max_db, cfg: ObjectiveConfig = ObjectiveConfig()):
    return np.asarray(max_db) - cfg.S1


def composite_objective(max_db, area, state: ObjectiveState, cfg: ObjectiveConfig = ObjectiveConfig(),
                        alpha: int | None = None):
    """Scalar objective for the given mode; vectorized over ``max_db``/``area``.

    The mode-1 penalty is scaled by ``|S1|`` so that it is positive exactly when
    the reflection threshold is violated.
    """
    alpha = state.alpha if alpha is None else alpha
    max_db = np.asarray(max_db, dtype=float)
    if alpha == 0:
        return u1(max_db, cfg)
    area = np.asarray(area, dtype=float)
    if alpha == 1:
        return area + cfg.gamma1 * np.maximum(u1(max_db, cfg) / abs(cfg.S1), 0.0)
    if alpha == 2:
        if state.A1 is None:
            raise ObjectiveStateError("mode 2 requires a recorded area threshold A1")
        return max_db + cfg.gamma2 * np.maximum((area - state.A1) / state.A1, 0.0)
    raise ObjectiveStateError(f"alpha must be 0, 1 or 2, got {alpha}")


def update_mode(state: ObjectiveState, max_db: float, area: float,
                cfg: ObjectiveConfig = ObjectiveConfig(), eval_index: int | None = None) -> ObjectiveState:
    """Advance the mode selector on a true response; mutates and returns ``state``."""
    old = state.alpha
    if old == 0 and u1(max_db, cfg) < 0:
        state.alpha, state.A1 = 1, float(area)
    elif old == 1 and max_db > cfg.S2:
        state.alpha, state.A1 = 2, float(area)
    elif old == 2 and max_db < cfg.S1:
        state.alpha = 1
    if state.alpha != old:
        state.transition_log.append((eval_index, old, state.alpha, state.A1))
    return state


class ModeSwitchingObjective:
    """Binds the composite objective to a footprint map over optimizer inputs.

    ``area_fn(u)`` maps a ``(..., D)`` batch of optimizer coordinates to
    footprints; NaN marks inputs with no buildable geometry, which score +inf.
    With ``adaptive=False`` the mode is frozen (used by the fixed mode-1
    benchmark).  ``sink`` receives a ``mode_switch`` event per transition.
    """

    def __init__(self, area_fn, cfg: ObjectiveConfig = ObjectiveConfig(),
                 state: ObjectiveState | None = None, adaptive: bool = True, sink=None):
        self.area_fn = area_fn
        self.sink = sink
        self.cfg = cfg
        self.state = state if state is not None else ObjectiveState()
        self.adaptive = adaptive
        self._mask = None
        self._mask_key = None

    @property
    def alpha(self) -> int:
        return self.state.alpha

    def _band(self, freqs):
        key = (len(freqs), float(freqs[0]), float(freqs[-1]))
        if key != self._mask_key:
            self._mask, self._mask_key = band_mask(freqs, self.cfg), key
        return self._mask

    def max_db(self, values, freqs):
        return np.max(np.asarray(values)[..., self._band(freqs)], axis=-1)

    def area(self, u):
        return self.area_fn(u)

    def evaluate(self, values, freqs, u, alpha: int | None = None):
        area = self.area_fn(u)
        out = composite_objective(self.max_db(values, freqs), area, self.state, self.cfg, alpha)
        return np.where(np.isnan(area), np.inf, out)

    def __call__(self, values, freqs, u):
        return self.evaluate(values, freqs, u)

    def canonical(self, values, freqs, u):
        """Mode-independent comparator (the mode-1 form)."""
        return self.evaluate(values, freqs, u, alpha=1)

    def observe(self, values, freqs, u, eval_index=None) -> bool:
        if not self.adaptive:
            return False
        before = self.state.alpha
        update_mode(self.state, float(self.max_db(values, freqs)), float(self.area_fn(u)),
                    self.cfg, eval_index)
        changed = self.state.alpha != before
        if changed and self.sink is not None:
            self.sink({"event": "mode_switch", "from": before, "to": self.state.alpha,
                       "A1": self.state.A1, "eval_index": eval_index})
        return changed

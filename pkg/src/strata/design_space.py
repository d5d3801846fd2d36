"""Spline-parameterized monopole: design vector layout, bounds and geometry.

The raw design vector is laid out as ``[x_c | x_g | x_r]`` where

    x_c = [X, l_f, l1, l2r, w1, o_r]      (mm, except l2r which is a ratio)
    x_g = ground-plane knot heights         (fractions of Y)
    x_r = radiator knot radii               (fractions of S)

so a design with ``L`` knots has ``2L + 6`` entries.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

N_CORE = 6
FEED_WIDTH = 1.8  # mm, fixed for a 50 Ohm line

CORE_NAMES = ("X", "l_f", "l1", "l2r", "w1", "o_r")
CORE_LOWER = np.array([6.0, 4.0, 10.0, 0.05, 0.5, -1.0])
CORE_UPPER = np.array([30.0, 15.0, 30.0, 1.0, 2.5, 1.0])
GROUND_KNOT_BOUNDS = (0.2, 0.8)
RADIATOR_KNOT_BOUNDS = (0.1, 1.0)

FOOTPRINT_CONVENTIONS = ("bounding_box", "paper_sy")


class DesignError(ValueError):
    """Structurally malformed design vector or bounds."""


class InfeasibleGeometryError(ValueError):
    """Design decodes to a geometry that cannot be built."""

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class OutOfBoundsError(ValueError):
    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = tuple(indices)


def dimension(L: int) -> int:
    return 2 * L + N_CORE


def knot_count(x) -> int:
    """Infer ``L`` from the length of a raw design vector."""
    n = len(x) - N_CORE
    if n < 2 or n % 2:
        raise DesignError(f"design vector of length {len(x)} is not of the form 2L+6 with L >= 1")
    return n // 2


@dataclass(frozen=True)
class DesignVector:
    values: np.ndarray
    knot_count: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if self.knot_count < 1:
            raise DesignError("knot count must be >= 1")
        if values.shape != (dimension(self.knot_count),):
            raise DesignError(
                f"expected 2L+6 = {dimension(self.knot_count)} entries for L={self.knot_count}, "
                f"got {values.size}"
            )
        object.__setattr__(self, "values", values)

    @classmethod
    def from_values(cls, values) -> "DesignVector":
        return cls(np.asarray(values, dtype=float), knot_count(values))


@dataclass(frozen=True)
class DesignBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.shape != upper.shape:
            raise DesignError("lower and upper bounds differ in length")
        if not np.all(lower < upper):
            raise DesignError("bounds must satisfy lower < upper elementwise")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def span(self) -> np.ndarray:
        return self.upper - self.lower

    def violations(self, x, tol: float = 1e-12) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        slack = tol * np.maximum(1.0, np.abs(self.span))
        return np.flatnonzero((x < self.lower - slack) | (x > self.upper + slack))


@dataclass(frozen=True)
class DerivedParams:
    X: float
    Y: float
    l2: float
    l_fr: float
    S: float
    o: float
    l_f: float
    l1: float
    w1: float
    w_f: float = FEED_WIDTH


@dataclass
class Outline:
    points: np.ndarray
    closed: bool

    @property
    def perimeter(self) -> float:
        pts = self.points
        if self.closed:
            pts = np.vstack([pts, pts[:1]])
        return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))

    @property
    def area(self) -> float:
        if not self.closed:
            return 0.0
        x, y = self.points.T
        return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


@dataclass
class GeometryModel:
    params: DerivedParams
    radiator: Outline
    ground_profile: Outline
    feed: Outline
    extension: Outline
    features: dict = field(default_factory=dict)


def split_vector(x, L: int | None = None):
    """Return ``(x_c, x_g, x_r)`` views of a raw design vector."""
    x = np.asarray(x, dtype=float)
    if L is None:
        L = knot_count(x)
    if x.ndim != 1 or x.size != dimension(L):
        raise DesignError(f"expected 2L+6 = {dimension(L)} entries for L={L}, got {x.size}")
    return x[:N_CORE], x[N_CORE:N_CORE + L], x[N_CORE + L:]


def join_vector(x_c, x_g, x_r) -> np.ndarray:
    if len(x_g) != len(x_r):
        raise DesignError("ground and radiator knot vectors differ in length")
    return np.concatenate([np.asarray(x_c, float), np.asarray(x_g, float), np.asarray(x_r, float)])


def derive_params(x_c) -> DerivedParams:
    X, l_f, l1, l2r, w1, o_r = (float(v) for v in np.asarray(x_c, dtype=float)[:N_CORE])
    Y = l1 + w1
    if Y - l_f <= 0:
        raise InfeasibleGeometryError(f"Y - l_f = {Y - l_f:g} <= 0 (feed longer than the board)", Y - l_f)
    S = min(X - o_r, Y - l_f) / 2
    if S <= 0:
        raise InfeasibleGeometryError(f"S = {S:g} <= 0", S)
    return DerivedParams(
        X=X,
        Y=Y,
        l2=(X - w1) * l2r,
        l_fr=min(X, Y - l_f) / 2,
        S=S,
        o=0.5 * X + o_r,
        l_f=l_f,
        l1=l1,
        w1=w1,
    )


def default_bounds(L: int) -> DesignBounds:
    if L < 1:
        raise ValueError(f"knot count must be >= 1, got {L}")
    ones = np.ones(L)
    lower = np.concatenate([CORE_LOWER, GROUND_KNOT_BOUNDS[0] * ones, RADIATOR_KNOT_BOUNDS[0] * ones])
    upper = np.concatenate([CORE_UPPER, GROUND_KNOT_BOUNDS[1] * ones, RADIATOR_KNOT_BOUNDS[1] * ones])
    return DesignBounds(lower, upper)


def check_bounds(x, bounds: DesignBounds, tol: float = 1e-12) -> None:
    bad = bounds.violations(x, tol)
    if bad.size:
        x = np.asarray(x, float)
        detail = ", ".join(
            f"[{k}]={x[k]:g} not in [{bounds.lower[k]:g}, {bounds.upper[k]:g}]" for k in bad
        )
        raise OutOfBoundsError(f"design outside bounds: {detail}", bad)


def normalize(x, bounds: DesignBounds) -> np.ndarray:
    check_bounds(x, bounds)
    u = (np.asarray(x, dtype=float) - bounds.lower) / bounds.span
    return np.clip(u, 0.0, 1.0)


def denormalize(u, bounds: DesignBounds) -> np.ndarray:
    return bounds.lower + np.asarray(u, dtype=float) * bounds.span


# -- splines -----------------------------------------------------------------

def _open_spline(values):
    """Natural cubic through equally spaced samples on [0, 1]; callable on [0, 1]."""
    values = np.asarray(values, dtype=float)
    if values.size == 1:
        c = values[0]
        return lambda t: np.full(np.shape(t), c)
    sites = np.linspace(0.0, 1.0, values.size)
    return CubicSpline(sites, values, bc_type="natural")


def _periodic_spline(values):
    """Periodic cubic through samples at angles 2*pi*l/L; callable on angles."""
    values = np.asarray(values, dtype=float)
    if values.size == 1:
        c = values[0]
        return lambda t: np.full(np.shape(t), c)
    sites = 2 * np.pi * np.arange(values.size + 1) / values.size
    spline = CubicSpline(sites, np.append(values, values[0]), bc_type="periodic")
    return lambda t: spline(np.mod(t, 2 * np.pi))


def interpolate_knots(k, L_new: int, kind: str = "open", clip: bool = True) -> np.ndarray:
    """Resample a knot vector onto ``L_new`` equidistant sites of the same layout."""
    k = np.asarray(k, dtype=float)
    if k.size < 1 or L_new < 1:
        raise ValueError("knot vectors need at least one entry")
    if kind == "open":
        sites = np.linspace(0.0, 1.0, L_new) if L_new > 1 else np.zeros(1)
        out = _open_spline(k)(sites)
        lo, hi = GROUND_KNOT_BOUNDS
    elif kind == "periodic":
        out = _periodic_spline(k)(2 * np.pi * np.arange(L_new) / L_new)
        lo, hi = RADIATOR_KNOT_BOUNDS
    else:
        raise ValueError(f"unknown interpolation kind {kind!r}")
    return np.clip(out, lo, hi) if clip else out


def _positive_floor(r, floor):
    # C1 continuous: identity above the floor, exponential tail below it
    r = np.asarray(r, dtype=float)
    with np.errstate(over="ignore"):
        tail = floor * np.exp(np.minimum(r - floor, 0.0) / floor)
    return np.where(r >= floor, r, tail)


def radiator_radius(p: DerivedParams, x_r, theta) -> np.ndarray:
    radii = p.S * np.asarray(x_r, dtype=float)
    if np.any(radii <= 0):
        raise InfeasibleGeometryError("radiator knot radius must be positive", float(radii.min()))
    r = _periodic_spline(radii)(theta)
    return _positive_floor(r, 0.5 * radii.min())


def radiator_outline(p: DerivedParams, x_r, samples: int = 512) -> Outline:
    L = len(x_r)
    samples = max(samples, 16, 4 * L)
    theta = 2 * np.pi * np.arange(samples) / samples
    r = radiator_radius(p, x_r, theta)
    dx, dy = r * np.cos(theta), r * np.sin(theta)
    cy = p.l_f - dy.min()
    return Outline(np.column_stack([p.o + dx, cy + dy]), closed=True)


def ground_outline(p: DerivedParams, x_g, samples: int = 512) -> Outline:
    L = len(x_g)
    samples = max(samples, 16, 4 * L)
    t = np.linspace(0.0, 1.0, samples)
    y = _open_spline(p.Y * np.asarray(x_g, dtype=float))(t)
    return Outline(np.column_stack([p.X * t, y]), closed=False)


def feed_outline(p: DerivedParams) -> Outline:
    half = p.w_f / 2
    pts = [(p.o - half, 0.0), (p.o + half, 0.0), (p.o + half, p.l_f), (p.o - half, p.l_f)]
    return Outline(np.array(pts), closed=True)


def extension_outline(p: DerivedParams) -> Outline:
    # vertical l1 x w1 strip on the right edge, w1 x l2 arm along the top edge
    x0 = p.X - p.w1
    pts = [
        (x0, 0.0),
        (p.X, 0.0),
        (p.X, p.Y),
        (x0 - p.l2, p.Y),
        (x0 - p.l2, p.l1),
        (x0, p.l1),
    ]
    return Outline(np.array(pts), closed=True)


def footprint(p: DerivedParams, convention: str = "bounding_box") -> float:
    if convention == "bounding_box":
        return p.X * p.Y
    if convention == "paper_sy":
        return p.S * p.Y
    raise ValueError(f"unknown footprint convention {convention!r}")


def footprint_raw(x, convention: str = "bounding_box") -> np.ndarray:
    """Vectorized footprint over raw design rows; NaN where the design is infeasible."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    X, l_f, l1, w1, o_r = x[:, 0], x[:, 1], x[:, 2], x[:, 4], x[:, 5]
    Y = l1 + w1
    S = np.minimum(X - o_r, Y - l_f) / 2
    if convention == "bounding_box":
        area = X * Y
    elif convention == "paper_sy":
        area = S * Y
    else:
        raise ValueError(f"unknown footprint convention {convention!r}")
    return np.where((Y - l_f > 0) & (S > 0), area, np.nan)


def build_geometry(x, samples: int = 512, bounds: DesignBounds | None = None) -> GeometryModel:
    x = np.asarray(x, dtype=float)
    L = knot_count(x)
    check_bounds(x, bounds if bounds is not None else default_bounds(L))
    x_c, x_g, x_r = split_vector(x, L)
    p = derive_params(x_c)
    radiator = radiator_outline(p, x_r, samples)
    features = {
        "perimeter": radiator.perimeter,
        "enclosed_area": radiator.area,
        "mean_ground_height": p.Y * float(np.mean(x_g)),
        "feed_length": p.l_f,
        "footprint_bb": p.X * p.Y,
    }
    return GeometryModel(
        params=p,
        radiator=radiator,
        ground_profile=ground_outline(p, x_g, samples),
        feed=feed_outline(p),
        extension=extension_outline(p),
        features=features,
    )


# -- simplicity test -----------------------------------------------------------

def _segments_cross(p1, p2, q1, q2) -> np.ndarray:
    """Vectorized proper-or-touching intersection test for segment arrays."""

    def orient(a, b, c):
        return np.sign((b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1])
                       - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0]))

    def on_segment(a, b, c):
        return ((np.minimum(a[..., 0], b[..., 0]) <= c[..., 0]) & (c[..., 0] <= np.maximum(a[..., 0], b[..., 0]))
                & (np.minimum(a[..., 1], b[..., 1]) <= c[..., 1]) & (c[..., 1] <= np.maximum(a[..., 1], b[..., 1])))

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    hit = (o1 != o2) & (o3 != o4) & (o1 != 0) & (o2 != 0) & (o3 != 0) & (o4 != 0)
    hit |= (o1 == 0) & on_segment(p1, p2, q1)
    hit |= (o2 == 0) & on_segment(p1, p2, q2)
    hit |= (o3 == 0) & on_segment(q1, q2, p1)
    hit |= (o4 == 0) & on_segment(q1, q2, p2)
    return hit


def is_simple(outline: Outline) -> bool:
    pts = np.asarray(outline.points, dtype=float)
    if len(pts) < 3:
        raise ValueError("need at least 3 points")
    ends = np.vstack([pts, pts[:1]]) if outline.closed else pts
    a, b = ends[:-1], ends[1:]
    m = len(a)
    i, j = np.triu_indices(m, k=2)
    if outline.closed:
        keep = ~((i == 0) & (j == m - 1))
        i, j = i[keep], j[keep]
    return not bool(np.any(_segments_cross(a[i], b[i], a[j], b[j])))

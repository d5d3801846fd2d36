"""Expensive-evaluator contract, evaluation ledger/cache and analytic responses.

Anything mapping a real vector to a vector of reflection values (dB) over a
frequency grid can serve as a model.  :class:`Evaluator` wraps such a model
with a quantized-key cache and a per-phase evaluation ledger; only cache misses
count as true evaluations.
"""
from __future__ import annotations

import contextlib
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import design_space as ds


class EvaluationError(RuntimeError):
    """The model could not produce a response for the given input."""


@dataclass(frozen=True)
class FrequencyGrid:
    f_lo: float = 3.1
    f_hi: float = 10.6
    n: int = 101

    def __post_init__(self):
        if not self.f_lo < self.f_hi:
            raise ValueError("frequency grid needs f_lo < f_hi")
        if self.n < 2:
            raise ValueError("frequency grid needs at least 2 points")

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.f_lo, self.f_hi, self.n)


@dataclass(frozen=True)
class Response:
    values: np.ndarray
    freqs: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.freqs.shape:
            raise ValueError(f"response has {self.values.size} values for {self.freqs.size} frequencies")


@dataclass
class EvaluationLedger:
    total: int = 0
    per_phase: dict = field(default_factory=dict)
    cache_hits: int = 0
    failures: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def count(self, phase: str) -> None:
        with self._lock:
            self.total += 1
            self.per_phase[phase] = self.per_phase.get(phase, 0) + 1

    def hit(self) -> None:
        with self._lock:
            self.cache_hits += 1

    def fail(self) -> None:
        with self._lock:
            self.failures += 1

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "total": self.total,
                "per_phase": dict(self.per_phase),
                "cache_hits": self.cache_hits,
                "failures": self.failures,
            }


class Evaluator:
    """Cached, counted front end to an expensive model.

    ``model(x)`` returns a 1-D array of dB values on ``grid`` (or, with no grid,
    any fixed-length vector indexed by position).  A model that can
    be called from several threads at once should carry ``thread_safe = True``;
    otherwise batched calls are serialized regardless of ``threads``.

    ``sink`` receives one dict per :meth:`evaluate` call
    (``{"event": "eval", "phase", "x", "max_db", "cached"}``), always in input
    order, so traces are reproducible under parallel dispatch.
    """

    def __init__(self, model, grid: FrequencyGrid | None = None, *, quantum: float = 1e-9,
                 threads: int = 1, sink=None, max_db=None):
        self.model = model
        self.grid = grid
        self.quantum = quantum
        self.threads = max(1, int(threads))
        self.sink = sink
        self.ledger = EvaluationLedger()
        self.phase = "default"
        self._freqs = grid.points if grid is not None else None
        self._cache: dict[bytes, Response] = {}
        self._lock = threading.Lock()
        self._max_db = max_db or (lambda r: float(np.max(r.values)))

    @contextlib.contextmanager
    def in_phase(self, label: str):
        previous, self.phase = self.phase, label
        try:
            yield self
        finally:
            self.phase = previous

    def key(self, x) -> bytes:
        return np.round(np.asarray(x, dtype=float) / self.quantum).astype(np.int64).tobytes()

    def cached(self, x) -> Response | None:
        return self._cache.get(self.key(x))

    def _call_model(self, x) -> Response:
        try:
            values = np.asarray(self.model(np.array(x, dtype=float)), dtype=float)
        except (ds.InfeasibleGeometryError, ds.OutOfBoundsError, ds.DesignError) as exc:
            raise EvaluationError(str(exc)) from exc
        freqs = self._freqs if self._freqs is not None else np.arange(values.size, dtype=float)
        if values.ndim != 1 or values.shape != freqs.shape or not np.all(np.isfinite(values)):
            raise EvaluationError(f"model returned malformed response of shape {values.shape}")
        return Response(values, freqs)

    def evaluate(self, x) -> Response:
        return self.evaluate_many([x])[0]

    def evaluate_many(self, xs, errors: str = "raise") -> list:
        """Evaluate several inputs; cache misses may run concurrently.

        With ``errors="raise"`` the first failure is raised after every
        successful input has been recorded; with ``errors="none"`` failed
        entries come back as ``None``.
        """
        xs = [np.asarray(x, dtype=float) for x in xs]
        keys = [self.key(x) for x in xs]
        with self._lock:
            hits = [self._cache.get(k) for k in keys]
        todo = {}
        for k, x, hit in zip(keys, xs, hits):
            if hit is None and k not in todo:
                todo[k] = x

        def run(x):
            try:
                return self._call_model(x)
            except EvaluationError as exc:
                return exc

        parallel = self.threads > 1 and len(todo) > 1 and getattr(self.model, "thread_safe", False)
        if parallel:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                outcomes = list(pool.map(run, todo.values()))
        else:
            outcomes = [run(x) for x in todo.values()]
        fresh = dict(zip(todo.keys(), outcomes))

        results, error, seen = [], None, set()
        for k, x, hit in zip(keys, xs, hits):
            out = hit if hit is not None else fresh[k]
            cached = hit is not None or k in seen
            if isinstance(out, EvaluationError):
                self.ledger.fail()
                error = error or out
                results.append(None)
                continue
            if cached:
                self.ledger.hit()
            else:
                seen.add(k)
                with self._lock:
                    self._cache[k] = out
                self.ledger.count(self.phase)
            if self.sink is not None:
                self.sink({
                    "event": "eval",
                    "phase": self.phase,
                    "x": x.tolist(),
                    "max_db": self._max_db(out),
                    "cached": cached,
                })
            results.append(out)
        if error is not None and errors == "raise":
            raise error
        return results


# -- analytic mock antenna ------------------------------------------------------

@dataclass(frozen=True)
class MockParams:
    d0: float = 14.0
    g_star: float = 1.5
    g0: float = 2.0
    c_half: float = 150.0
    base0: float = -1.5
    base_gain: float = -10.0
    A_ref: float = 450.0
    k_max: int = 4
    sigma_base: float = 0.35
    sigma_slope: float = 0.15

    def __post_init__(self):
        if self.d0 <= 0 or self.g0 <= 0 or self.c_half <= 0 or self.A_ref <= 0:
            raise ValueError("d0, g0, c_half and A_ref must be positive")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")


def mock_reflection(features: dict, grid: FrequencyGrid, params: MockParams = MockParams()) -> Response:
    """Smooth stand-in for a full-wave reflection response.

    Resonance dips sit at harmonics of ``c_half / perimeter``; their depth is set
    by the feed/ground gap and the baseline deepens with the bounding-box area.
    """
    P = features["perimeter"]
    if not np.isfinite(P) or P <= 0:
        raise ValueError(f"perimeter must be positive, got {P}")
    f = grid.points
    gap = max(features["feed_length"] - features["mean_ground_height"], 0.1)
    base = params.base0 + params.base_gain * features["footprint_bb"] / params.A_ref
    depth = params.d0 * np.exp(-abs(gap - params.g_star) / params.g0)
    k = np.arange(1, params.k_max + 1)[:, None]
    centers = k * params.c_half / P
    sigma = params.sigma_base + params.sigma_slope * k
    dips = depth * np.exp(-((f - centers) ** 2) / (2 * sigma**2))
    return Response(base - dips.sum(axis=0), f)


class MockAntenna:
    """Raw design vector -> mock S11 (dB) on a frequency grid."""

    thread_safe = True

    def __init__(self, grid: FrequencyGrid | None = None, params: MockParams | None = None,
                 samples: int = 512):
        self.grid = grid or FrequencyGrid()
        self.params = params or MockParams()
        self.samples = samples

    def geometry(self, x):
        return ds.build_geometry(x, self.samples)

    def __call__(self, x) -> np.ndarray:
        return mock_reflection(self.geometry(x).features, self.grid, self.params).values


# -- exact test responses -----------------------------------------------------------

def linear_test_response(A, b):
    """Affine response ``u -> A u + b``; its first-order surrogate is exact."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    if b.shape != (A.shape[0],):
        raise ValueError(f"offset of shape {b.shape} does not match matrix {A.shape}")

    def response(u):
        u = np.asarray(u, dtype=float)
        if u.shape != (A.shape[1],):
            raise ValueError(f"expected input of length {A.shape[1]}, got {u.shape}")
        return A @ u + b

    response.thread_safe = True
    return response


def quadratic_test_response(c):
    """Residual response ``u -> u - c``; squared-norm scalarization is minimized at ``c``."""
    c = np.asarray(c, dtype=float)
    if c.ndim != 1 or c.size < 1:
        raise ValueError("target must be a non-empty vector")

    def response(u):
        return np.asarray(u, dtype=float) - c

    response.thread_safe = True
    return response

"""Run configuration: a single JSON document with defaults for every constant."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import design_space as ds
from .evaluation import FrequencyGrid, MockParams
from .objective import ObjectiveConfig
from .stratified import MetaSchedule
from .trust_region import TrConfig

# initial design of the reference experiment (L = 1)
DEFAULT_X0 = (10.0, 6.0, 16.0, 0.8, 1.0, 0.0, 0.35, 0.6)
DEFAULT_SCHEDULE = (1, 4, 8)
REFERENCE_SCHEDULE = (1, 8, 16, 24, 32)


class ConfigError(ValueError):
    """Schema or syntax problem in a run configuration."""


@dataclass
class RunConfig:
    schedule: MetaSchedule = field(default_factory=lambda: MetaSchedule(DEFAULT_SCHEDULE))
    x0: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_X0))
    grid: FrequencyGrid = field(default_factory=FrequencyGrid)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    tr: TrConfig = field(default_factory=TrConfig)
    mock: MockParams = field(default_factory=MockParams)
    max_total_evals: int = 5000
    geometry_samples: int = 512
    seed: int = 0
    output_dir: str = "out"

    @property
    def tr_config(self) -> TrConfig:
        return dataclasses.replace(self.tr, seed=self.seed)

    def check_x0(self) -> None:
        """Raise design-space errors if ``x0`` is not a buildable design."""
        L = self.schedule.knot_counts[0]
        ds.check_bounds(self.x0, ds.default_bounds(L))
        ds.derive_params(self.x0[:ds.N_CORE])

    def to_dict(self) -> dict:
        return {
            "schedule": list(self.schedule.knot_counts),
            "x0": [float(v) for v in self.x0],
            "grid": dataclasses.asdict(self.grid),
            "objective": dataclasses.asdict(self.objective),
            "tr": {k: v for k, v in dataclasses.asdict(self.tr).items() if k != "seed"},
            "mock": dataclasses.asdict(self.mock),
            "max_total_evals": self.max_total_evals,
            "geometry_samples": self.geometry_samples,
            "seed": self.seed,
            "output_dir": self.output_dir,
        }


_SECTIONS = {"grid": FrequencyGrid, "objective": ObjectiveConfig, "tr": TrConfig, "mock": MockParams}
# the run-level seed drives the optimizer; it is not repeated inside "tr"
_EXCLUDED = {"tr": ("seed",)}
_SCALARS = {"max_total_evals": int, "geometry_samples": int, "seed": int, "output_dir": str}


def _section(name, cls, raw):
    if not isinstance(raw, dict):
        raise ConfigError(f"field '{name}': expected an object")
    known = {f.name: f.type for f in dataclasses.fields(cls) if f.name not in _EXCLUDED.get(name, ())}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"field '{name}': unknown keys {unknown}; allowed {sorted(known)}")
    kwargs = {}
    for key, value in raw.items():
        kind = known[key]
        where = f"field '{name}.{key}'"
        if kind == "str":
            if not isinstance(value, str):
                raise ConfigError(f"{where}: expected a string, got {value!r}")
        elif isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        elif kind == "int" and not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        kwargs[key] = float(value) if kind == "float" else value
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"field '{name}': {exc}") from exc


def from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected a JSON object")
    allowed = {"schedule", "x0", *_SECTIONS, *_SCALARS}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"top level: unknown keys {unknown}; allowed {sorted(allowed)}")
    cfg = RunConfig()
    if "schedule" in raw:
        sched = raw["schedule"]
        if not isinstance(sched, list) or not all(isinstance(k, int) and not isinstance(k, bool) for k in sched):
            raise ConfigError("field 'schedule': expected a list of integers")
        try:
            cfg.schedule = MetaSchedule(tuple(sched))
        except ValueError as exc:
            raise ConfigError(f"field 'schedule': {exc}") from exc
    if "x0" in raw:
        x0 = raw["x0"]
        if not isinstance(x0, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in x0):
            raise ConfigError("field 'x0': expected a list of numbers")
        cfg.x0 = np.array(x0, dtype=float)
    L0 = cfg.schedule.knot_counts[0]
    if cfg.x0.size != ds.dimension(L0):
        raise ConfigError(
            f"field 'x0': expected 2L+6 = {ds.dimension(L0)} entries for the first knot count L={L0}, "
            f"got {cfg.x0.size}"
        )
    for name, cls in _SECTIONS.items():
        if name in raw:
            setattr(cfg, name, _section(name, cls, raw[name]))
    for name, typ in _SCALARS.items():
        if name in raw:
            value = raw[name]
            if typ is int and (isinstance(value, bool) or not isinstance(value, int)):
                raise ConfigError(f"field '{name}': expected an integer, got {value!r}")
            if typ is str and not isinstance(value, str):
                raise ConfigError(f"field '{name}': expected a string, got {value!r}")
            setattr(cfg, name, value)
    if cfg.max_total_evals < 1:
        raise ConfigError("field 'max_total_evals': must be positive")
    if cfg.geometry_samples < 16:
        raise ConfigError("field 'geometry_samples': must be >= 16")
    return cfg


def loads(text: str, source: str = "<config>") -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return from_dict(raw)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    return loads(text, str(path))


def dumps(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2)

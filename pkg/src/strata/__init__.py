"""Stratified trust-region optimization of spline-parameterized antenna geometries."""

from .design_space import build_geometry, default_bounds, derive_params, split_vector
from .evaluation import Evaluator, FrequencyGrid, MockAntenna, MockParams
from .objective import ModeSwitchingObjective, ObjectiveConfig, ObjectiveState
from .stratified import MetaSchedule, stratified_optimize
from .trust_region import TrConfig, tr_optimize

__version__ = "0.1.0"

"""Verified continuous-time ellipsoidal reachtubes for nonlinear ODEs."""

from .algorithm import ClrtConfig, Tube, TubeSegment, advance, run
from .ball import Ball
from .errors import ClrtError, ConfigError
from .interval import Interval
from .linalg import Metric
from .systems import OdeSystem, builtin, builtin_names, system_from_equations

__all__ = [
    "Ball",
    "ClrtConfig",
    "ClrtError",
    "ConfigError",
    "Interval",
    "Metric",
    "OdeSystem",
    "Tube",
    "TubeSegment",
    "advance",
    "builtin",
    "builtin_names",
    "run",
    "system_from_equations",
]

__version__ = "0.1.0"

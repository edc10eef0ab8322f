"""Single-cell models: TP06 ionic currents, active tension and pacing protocols."""

from .protocols import CaptureError, PaceResult, RestitutionCurve, apd90, dynamic_restitution, pace_cell
from .tension import TensionParams, normalised_voltage, step_tension, tension_rate, tension_trace
from .tp06 import *  # noqa: F401,F403
from .tp06 import __all__ as _tp06_all

__all__ = list(_tp06_all) + [
    "CaptureError", "PaceResult", "RestitutionCurve", "apd90", "dynamic_restitution", "pace_cell",
    "TensionParams", "normalised_voltage", "step_tension", "tension_rate", "tension_trace",
]

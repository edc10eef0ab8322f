"""Voltage-driven active tension."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TensionParams:
    k_ta: float = 9.58  # kPa
    eps0: float = 1.0  # 1/ms
    threshold: float = 0.005  # on normalised voltage
    v_rest: float = -86.0  # mV, maps to V_t = 0
    v_peak: float = 40.0  # mV, maps to V_t = 1

    def __post_init__(self):
        if self.k_ta <= 0:
            raise ValueError("k_ta must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.v_peak <= self.v_rest:
            raise ValueError("v_peak must exceed v_rest")


def normalised_voltage(V, tp: TensionParams = TensionParams()):
    return np.clip((np.asarray(V, dtype=np.float64) - tp.v_rest) / (tp.v_peak - tp.v_rest), 0.0, 1.0)


def tension_rate(Ta, V, tp: TensionParams = TensionParams()):
    """dTa/dt = eps(V_t) (k_ta V_t - Ta), with eps = 10 eps0 below the threshold."""
    vt = normalised_voltage(V, tp)
    eps = np.where(vt < tp.threshold, 10.0 * tp.eps0, tp.eps0)
    return eps * (tp.k_ta * vt - Ta)


def step_tension(Ta, V, dt: float, tp: TensionParams = TensionParams()):
    """One forward-Euler step of the tension ODE (scalar or array)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    out = Ta + dt * tension_rate(Ta, V, tp)
    return float(out) if np.ndim(out) == 0 else out


def tension_trace(V, dt: float, tp: TensionParams = TensionParams(), Ta0: float = 0.0) -> np.ndarray:
    """Integrate Ta along a sampled voltage trace."""
    V = np.asarray(V, dtype=np.float64)
    out = np.empty_like(V)
    ta = Ta0
    for k, v in enumerate(V):
        out[k] = ta
        ta = step_tension(ta, v, dt, tp)
    return out

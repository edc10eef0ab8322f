"""Single-cell pacing and dynamic restitution."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .tension import TensionParams, tension_trace
from .tp06 import N_STATES, RESTING_STATE, IonicParams, _integrate_single

log = logging.getLogger(__name__)

STIM_AMPLITUDE = 52.0  # mV/ms, i.e. a 52 mV depolarisation over 1 ms
STIM_DURATION = 1.0
DV_MAX = 0.5  # mV per substep during fast depolarisation


class CaptureError(RuntimeError):
    def __init__(self, beat: int, message: str = "no action potential elicited"):
        super().__init__(f"beat {beat}: {message}")
        self.beat = beat


@dataclass
class PaceResult:
    t: np.ndarray  # final-beat trace, time from the final stimulus (ms)
    V: np.ndarray
    Cai: np.ndarray
    Ta: np.ndarray
    apd90: np.ndarray  # one entry per beat, nan if the cell never repolarised
    peaks: np.ndarray
    rest: np.ndarray  # V at each stimulus
    state: np.ndarray  # final 19-vector


def apd90(t, V, v_rest=None):
    """APD90 of one beat: time spent above 90% repolarisation.

    Returns ``(apd, peak)``; ``apd`` is nan if the trace never falls back
    below the threshold.
    """
    t = np.asarray(t)
    V = np.asarray(V)
    v0 = V[0] if v_rest is None else v_rest
    ip = int(np.argmax(V))
    peak = V[ip]
    thr = peak - 0.9 * (peak - v0)
    up = np.flatnonzero(V[: ip + 1] >= thr)
    down = np.flatnonzero(V[ip:] < thr)
    if len(up) == 0 or len(down) == 0:
        return np.nan, peak
    i = up[0]
    t_up = t[i] if i == 0 else t[i - 1] + (thr - V[i - 1]) * (t[i] - t[i - 1]) / (V[i] - V[i - 1])
    k = ip + down[0]
    t_dn = t[k - 1] + (V[k - 1] - thr) * (t[k] - t[k - 1]) / (V[k - 1] - V[k])
    return t_dn - t_up, peak


def pace_cell(params: IonicParams, cycle_length: float, beats: int, dt: float = 0.02,
              initial=None, stim_amplitude: float = STIM_AMPLITUDE, stim_duration: float = STIM_DURATION,
              tension: TensionParams = TensionParams(), dv_max: float = DV_MAX) -> PaceResult:
    """Pace a single cell and report APD90 of every beat.

    The stimulus is a current of ``-stim_amplitude`` for ``stim_duration`` ms at
    the start of each cycle. Raises :class:`CaptureError` if a beat does not
    overshoot 0 mV.
    """
    if beats < 1:
        raise ValueError("beats must be >= 1")
    if cycle_length <= stim_duration:
        raise ValueError("cycle length shorter than the stimulus")
    y = np.array(RESTING_STATE if initial is None else initial, dtype=np.float64)
    if y.shape != (N_STATES,):
        raise ValueError("initial state must have 19 entries")
    per_beat = int(round(cycle_length / dt))
    n = per_beat * beats
    t = np.empty(n)
    V = np.empty(n)
    ca = np.empty(n)
    _integrate_single(y, params.to_array(), dt, n, cycle_length, 0.0, stim_duration, stim_amplitude, dv_max, t, V, ca)
    apds = np.empty(beats)
    peaks = np.empty(beats)
    rests = np.empty(beats)
    for b in range(beats):
        sl = slice(b * per_beat, (b + 1) * per_beat)
        # t == 0 of the beat is the stimulus onset; exclude the stimulus artefact from "rest"
        rests[b] = V[sl][0]
        apds[b], peaks[b] = apd90(t[sl], V[sl])
        if peaks[b] < 0.0:
            raise CaptureError(b)
    last = slice((beats - 1) * per_beat, beats * per_beat)
    tl = t[last] - t[last][0]
    ta = tension_trace(V[last], dt, tension)
    return PaceResult(tl, V[last].copy(), ca[last].copy(), ta, apds, peaks, rests, y)


@dataclass
class RestitutionCurve:
    cycle_lengths: np.ndarray
    di: np.ndarray
    apd: np.ndarray
    captured: np.ndarray  # False where 1:1 capture was lost (pair excluded from the slope)
    max_slope: float
    slopes: np.ndarray = field(default=None)


def dynamic_restitution(params: IonicParams, cycle_lengths, beats: int = 20, dt: float = 0.02,
                        settle_beats: int = 10, settle_cl: float | None = None) -> RestitutionCurve:
    """Dynamic restitution: pace ``beats`` times at each cycle length in turn.

    The cell is first paced ``settle_beats`` times at ``settle_cl`` (default:
    the first cycle length); the state then carries over from one cycle length
    to the next. A repeated cycle length re-runs from the state its first
    occurrence started from, so duplicates give identical points. The APD of
    the last beat and the diastolic interval preceding it form one point. A
    cycle length loses 1:1 capture if any of its beats fails to depolarise or
    to repolarise within the cycle; such points are excluded from the slope.
    """
    cls = np.asarray(cycle_lengths, dtype=np.float64)
    if len(cls) == 0:
        raise ValueError("no cycle lengths")
    if np.any(np.diff(cls) > 0):
        raise ValueError("cycle lengths must be non-increasing")
    y = RESTING_STATE.copy()
    if settle_beats:
        y = pace_cell(params, settle_cl or cls[0], settle_beats, dt, initial=y).state
    di = np.full(len(cls), np.nan)
    apd = np.full(len(cls), np.nan)
    ok = np.zeros(len(cls), bool)
    start = y
    for k, cl in enumerate(cls):
        if k == 0 or cl != cls[k - 1]:
            start = y
        try:
            res = pace_cell(params, cl, beats, dt, initial=start)
        except CaptureError:
            log.info("capture lost at CL %.1f ms", cl)
            break
        y = res.state
        a = res.apd90
        if beats >= 2 and np.all(np.isfinite(a)) and np.all(a < cl):
            apd[k] = a[-1]
            di[k] = cl - a[-2]
            ok[k] = True
        else:
            log.info("no 1:1 response at CL %.1f ms", cl)
    d, ap = di[ok], apd[ok]
    order = np.argsort(d, kind="stable")
    d, ap = d[order], ap[order]
    with np.errstate(divide="ignore", invalid="ignore"):
        slopes = np.diff(ap) / np.diff(d) if len(d) >= 2 else np.array([])
    fin = slopes[np.isfinite(slopes)]
    return RestitutionCurve(cls, di, apd, ok, float(fin.max()) if len(fin) else np.nan, slopes)

"""
The ten Tusscher-Panfilov (2006) human ventricular epicardial cell model.

States are stored structure-of-arrays, shape ``(19, n_cells)``, in the order of
:data:`STATE_NAMES`, so that the voltage row is contiguous for the tissue
solver. Units: mV, ms, mM; currents in pA/pF (equivalently uA/uF).

Time stepping uses Rush-Larsen for the twelve gates and forward Euler for the
membrane potential, the concentrations and the RyR state R'.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np
from numba import njit

STATE_NAMES = (
    "V", "Xr1", "Xr2", "Xs", "m", "h", "j", "d", "f", "f2", "fCass", "s", "r",
    "Cai", "CaSR", "CaSS", "Rprime", "Nai", "Ki",
)
N_STATES = len(STATE_NAMES)
IDX = {name: k for k, name in enumerate(STATE_NAMES)}
GATE_SLICE = slice(1, 13)

# published epicardial initial conditions
RESTING_STATE = np.array([
    -85.23, 0.00621, 0.4712, 0.0095, 0.00172, 0.7444, 0.7045, 3.373e-5, 0.7888,
    0.9755, 0.9953, 0.999998, 2.42e-8, 0.000126, 3.64, 0.00036, 0.9073, 8.604, 136.89,
])

VARIANTS = ("control-1.1", "control-1.4", "control-1.8", "hf-1.1", "hf-1.4", "hf-1.8")

# conductance sets giving dynamic restitution slopes 1.1 / 1.4 / 1.8
_RESTITUTION = {
    "1.1": dict(g_Kr=0.153, g_Ks=0.392, g_pCa=0.1238, g_pK=0.0146, tau_f_scale=1.0),
    "1.4": dict(g_Kr=0.172, g_Ks=0.441, g_pCa=0.3714, g_pK=0.0073, tau_f_scale=1.5),
    "1.8": dict(g_Kr=0.172, g_Ks=0.441, g_pCa=0.8666, g_pK=0.00219, tau_f_scale=2.0),
}

HF_SCALES = dict(s_to=0.52, s_K1=0.56, s_NaK=0.60, s_NaCa=1.80, s_up=0.70)


class CellModelError(ValueError):
    pass


@dataclass(frozen=True)
class IonicParams:
    restitution: str = "1.1"
    # membrane and geometry (pF, um^3)
    Cm: float = 185.0
    V_c: float = 16404.0
    V_sr: float = 1094.0
    V_ss: float = 54.68
    F: float = 96.4853415
    R: float = 8.314472
    T: float = 310.0
    # extracellular
    K_o: float = 5.4
    Na_o: float = 140.0
    Ca_o: float = 2.0
    P_kna: float = 0.03
    # maximal conductances
    g_Na: float = 14.838
    g_K1: float = 5.405
    g_to: float = 0.294
    g_Kr: float = 0.153
    g_Ks: float = 0.392
    g_CaL: float = 0.0398
    g_bna: float = 0.00029
    g_bca: float = 0.000592
    g_pCa: float = 0.1238
    K_pCa: float = 0.0005
    g_pK: float = 0.0146
    # pumps and exchangers
    P_NaK: float = 2.724
    K_mk: float = 1.0
    K_mNa: float = 40.0
    K_NaCa: float = 1000.0
    Km_Nai: float = 87.5
    Km_Ca: float = 1.38
    K_sat: float = 0.1
    alpha: float = 2.5
    gamma: float = 0.35
    # calcium handling
    Vmax_up: float = 0.006375
    K_up: float = 0.00025
    V_rel: float = 0.102
    k1_prime: float = 0.15
    k2_prime: float = 0.045
    k3: float = 0.06
    k4: float = 0.005
    EC: float = 1.5
    max_sr: float = 2.5
    min_sr: float = 1.0
    V_leak: float = 0.00036
    V_xfer: float = 0.0038
    Buf_c: float = 0.2
    K_buf_c: float = 0.001
    Buf_sr: float = 10.0
    K_buf_sr: float = 0.3
    Buf_ss: float = 0.4
    K_buf_ss: float = 0.00025
    tau_f_scale: float = 1.0
    # heart-failure remodelling factors
    s_to: float = 1.0
    s_K1: float = 1.0
    s_NaK: float = 1.0
    s_NaCa: float = 1.0
    s_up: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if f.name.startswith(("g_", "s_")) and getattr(self, f.name) < 0:
                raise CellModelError(f"{f.name} must be non-negative")

    @property
    def is_control(self) -> bool:
        return all(getattr(self, k) == 1.0 for k in HF_SCALES)

    @property
    def name(self) -> str:
        return f"{'control' if self.is_control else 'hf'}-{self.restitution}"

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in _PARAM_ORDER], dtype=np.float64)


_PARAM_ORDER = tuple(f.name for f in fields(IonicParams) if f.name != "restitution")
assert len(_PARAM_ORDER) == 55  # unpacked positionally by _model


def restitution_params(slope: str | float) -> IonicParams:
    key = f"{float(slope):.1f}"
    if key not in _RESTITUTION:
        raise CellModelError(f"unknown restitution variant {slope!r}")
    return IonicParams(restitution=key, **_RESTITUTION[key])


def apply_hf_remodelling(params: IonicParams) -> IonicParams:
    """Heart-failure ionic remodelling of a control parameter set."""
    if not params.is_control:
        raise CellModelError("remodelling applies to control parameters only")
    return replace(params, **HF_SCALES)


def params_for_variant(name: str) -> IonicParams:
    """Parameters by name, e.g. ``"control-1.1"`` or ``"hf-1.8"``."""
    try:
        kind, slope = name.split("-")
    except ValueError:
        raise CellModelError(f"bad variant name {name!r}") from None
    p = restitution_params(slope)
    if kind == "hf":
        return apply_hf_remodelling(p)
    if kind != "control":
        raise CellModelError(f"bad variant name {name!r}")
    return p


@dataclass
class CellState:
    """One cell: the 19 TP06 states plus the active tension Ta (kPa)."""

    y: np.ndarray
    Ta: float = 0.0

    def __post_init__(self):
        self.y = np.array(self.y, dtype=np.float64)
        if self.y.shape != (N_STATES,):
            raise CellModelError(f"expected {N_STATES} states")

    @classmethod
    def resting(cls) -> "CellState":
        return cls(RESTING_STATE.copy(), 0.0)

    def __getattr__(self, name):
        if name in IDX:
            return float(self.y[IDX[name]])
        raise AttributeError(name)

    def validate(self) -> None:
        check_states(self.y[:, None])
        if not np.isfinite(self.Ta):
            raise CellModelError("non-finite active tension")


def resting_states(n: int) -> np.ndarray:
    return np.repeat(RESTING_STATE[:, None], n, axis=1)


def check_states(Y: np.ndarray) -> None:
    if not np.all(np.isfinite(Y)):
        bad = np.unique(np.nonzero(~np.isfinite(Y))[1])
        raise CellModelError(f"non-finite cell state at {len(bad)} cells (first {bad[0]})")
    g = Y[GATE_SLICE]
    if g.min() < -1e-12 or g.max() > 1.0 + 1e-12:
        raise CellModelError("gating variable outside [0, 1]")
    if np.any(Y[13:] <= 0.0):
        raise CellModelError("non-positive concentration")


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

# state rows of the eleven voltage-gated gates, in the order used by _gate_rates
_VGATE_ROWS = np.array([1, 2, 3, 4, 5, 6, 7, 8, 9, 11, 12])
_N_VG = 11
_N_VF = 6  # voltage factors returned by _v_factors
TABLE_V_RANGE = (-110.0, 70.0)
TABLE_DVK_RANGE = (-120.0, 200.0)
TABLE_STEP = 0.01  # mV


@njit(cache=True, inline="always")
def _gate_rates(V, tau_f_scale):
    """Steady states and time constants of the voltage-gated gates."""
    xr1_inf = 1.0 / (1.0 + np.exp((-26.0 - V) / 7.0))
    tau_xr1 = (450.0 / (1.0 + np.exp((-45.0 - V) / 10.0))) * (6.0 / (1.0 + np.exp((V + 30.0) / 11.5)))
    xr2_inf = 1.0 / (1.0 + np.exp((V + 88.0) / 24.0))
    tau_xr2 = (3.0 / (1.0 + np.exp((-60.0 - V) / 20.0))) * (1.12 / (1.0 + np.exp((V - 60.0) / 20.0)))
    xs_inf = 1.0 / (1.0 + np.exp((-5.0 - V) / 14.0))
    tau_xs = (1400.0 / np.sqrt(1.0 + np.exp((5.0 - V) / 6.0))) * (1.0 / (1.0 + np.exp((V - 35.0) / 15.0))) + 80.0
    m_inf = 1.0 / (1.0 + np.exp((-56.86 - V) / 9.03)) ** 2
    tau_m = (1.0 / (1.0 + np.exp((-60.0 - V) / 5.0))) * (
        0.1 / (1.0 + np.exp((V + 35.0) / 5.0)) + 0.1 / (1.0 + np.exp((V - 50.0) / 200.0)))
    hj_inf = 1.0 / (1.0 + np.exp((V + 71.55) / 7.43)) ** 2
    if V < -40.0:
        a_h = 0.057 * np.exp(-(V + 80.0) / 6.8)
        b_h = 2.7 * np.exp(0.079 * V) + 3.1e5 * np.exp(0.3485 * V)
        a_j = (-25428.0 * np.exp(0.2444 * V) - 6.948e-6 * np.exp(-0.04391 * V)) * (V + 37.78) / (
            1.0 + np.exp(0.311 * (V + 79.23)))
        b_j = 0.02424 * np.exp(-0.01052 * V) / (1.0 + np.exp(-0.1378 * (V + 40.14)))
    else:
        a_h = 0.0
        b_h = 0.77 / (0.13 * (1.0 + np.exp(-(V + 10.66) / 11.1)))
        a_j = 0.0
        b_j = 0.6 * np.exp(0.057 * V) / (1.0 + np.exp(-0.1 * (V + 32.0)))
    tau_h = 1.0 / (a_h + b_h)
    tau_j = 1.0 / (a_j + b_j)
    d_inf = 1.0 / (1.0 + np.exp((-8.0 - V) / 7.5))
    tau_d = (1.4 / (1.0 + np.exp((-35.0 - V) / 13.0)) + 0.25) * (1.4 / (1.0 + np.exp((V + 5.0) / 5.0))) \
        + 1.0 / (1.0 + np.exp((50.0 - V) / 20.0))
    f_inf = 1.0 / (1.0 + np.exp((V + 20.0) / 7.0))
    tau_f = tau_f_scale * (1102.5 * np.exp(-((V + 27.0) ** 2) / 225.0) + 200.0 / (1.0 + np.exp((13.0 - V) / 10.0))
                           + 180.0 / (1.0 + np.exp((V + 30.0) / 10.0)) + 20.0)
    f2_inf = 0.67 / (1.0 + np.exp((V + 35.0) / 7.0)) + 0.33
    tau_f2 = 562.0 * np.exp(-((V + 27.0) ** 2) / 240.0) + 31.0 / (1.0 + np.exp((25.0 - V) / 10.0)) \
        + 80.0 / (1.0 + np.exp((V + 30.0) / 10.0))
    s_inf = 1.0 / (1.0 + np.exp((V + 20.0) / 5.0))
    tau_s = 85.0 * np.exp(-((V + 45.0) ** 2) / 320.0) + 5.0 / (1.0 + np.exp((V - 20.0) / 5.0)) + 3.0
    r_inf = 1.0 / (1.0 + np.exp((20.0 - V) / 6.0))
    tau_r = 9.5 * np.exp(-((V + 40.0) ** 2) / 1800.0) + 0.8
    return (xr1_inf, xr2_inf, xs_inf, m_inf, hj_inf, hj_inf, d_inf, f_inf, f2_inf, s_inf, r_inf,
            tau_xr1, tau_xr2, tau_xs, tau_m, tau_h, tau_j, tau_d, tau_f, tau_f2, tau_s, tau_r)


@njit(cache=True, inline="always")
def _v_factors(V, p):
    """Purely voltage-dependent factors of I_NaK, I_NaCa, I_CaL and I_pK."""
    F, R, T, Ca_o, gamma = p[4], p[5], p[6], p[9], p[30]
    FRT = F / (R * T)
    nak = 1.0 / (1.0 + 0.1245 * np.exp(-0.1 * V * FRT) + 0.0353 * np.exp(-V * FRT))
    e1 = np.exp(gamma * V * FRT)
    e2 = np.exp((gamma - 1.0) * V * FRT)
    x = 2.0 * (V - 15.0) * FRT
    if abs(x) < 1e-6:  # removable singularity at V = 15 mV
        ex = 1.0 + x
        ratio = 1.0 - 0.5 * x
    else:
        ex = np.exp(x)
        ratio = x / (ex - 1.0)
    cal_a = 2.0 * F * ratio * 0.25 * ex
    cal_b = 2.0 * F * ratio * Ca_o
    pk = 1.0 / (1.0 + np.exp((25.0 - V) / 5.98))
    return nak, e1, e2, cal_a, cal_b, pk


@njit(cache=True, inline="always")
def _xk1(dvk):
    a = 0.1 / (1.0 + np.exp(0.06 * (dvk - 200.0)))
    b = (3.0 * np.exp(0.0002 * (dvk + 100.0)) + np.exp(0.1 * (dvk - 10.0))) / (1.0 + np.exp(-0.5 * dvk))
    return a / (a + b)


@njit(cache=True, inline="always")
def _currents(V, Xr1, Xr2, Xs, m, h, j, d, f, f2, fCass, s, r, Cai, CaSR, CaSS, Rp, Nai, Ki,
              nak_f, e1, e2, cal_a, cal_b, pk_f, xk1, E_K, p, istim):
    """dV/dt and the derivatives of the non-gate states."""
    (Cm, V_c, V_sr, V_ss, F, R, T, K_o, Na_o, Ca_o, P_kna,
     g_Na, g_K1, g_to, g_Kr, g_Ks, g_CaL, g_bna, g_bca, g_pCa, K_pCa, g_pK,
     P_NaK, K_mk, K_mNa, K_NaCa, Km_Nai, Km_Ca, K_sat, alpha, gamma,
     Vmax_up, K_up, V_rel, k1_prime, k2_prime, k3, k4, EC, max_sr, min_sr,
     V_leak, V_xfer, Buf_c, K_buf_c, Buf_sr, K_buf_sr, Buf_ss, K_buf_ss, tau_f_scale,
     s_to, s_K1, s_NaK, s_NaCa, s_up) = (
        p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8], p[9], p[10],
        p[11], p[12], p[13], p[14], p[15], p[16], p[17], p[18], p[19], p[20], p[21],
        p[22], p[23], p[24], p[25], p[26], p[27], p[28], p[29], p[30],
        p[31], p[32], p[33], p[34], p[35], p[36], p[37], p[38], p[39], p[40],
        p[41], p[42], p[43], p[44], p[45], p[46], p[47], p[48], p[49],
        p[50], p[51], p[52], p[53], p[54])
    RTF = R * T / F
    E_Na = RTF * np.log(Na_o / Nai)
    E_Ks = RTF * np.log((K_o + P_kna * Na_o) / (Ki + P_kna * Nai))
    E_Ca = 0.5 * RTF * np.log(Ca_o / Cai)

    sqk = np.sqrt(K_o / 5.4)
    dvk = V - E_K
    i_Na = g_Na * m * m * m * h * j * (V - E_Na)
    i_K1 = s_K1 * g_K1 * sqk * xk1 * dvk
    i_to = s_to * g_to * r * s * dvk
    i_Kr = g_Kr * sqk * Xr1 * Xr2 * dvk
    i_Ks = g_Ks * Xs * Xs * (V - E_Ks)
    i_CaL = g_CaL * d * f * f2 * fCass * (cal_a * CaSS - cal_b)
    i_NaK = s_NaK * P_NaK * K_o / (K_o + K_mk) * Nai / (Nai + K_mNa) * nak_f
    i_NaCa = s_NaCa * K_NaCa * (e1 * Nai * Nai * Nai * Ca_o - e2 * Na_o * Na_o * Na_o * Cai * alpha) / (
        (Km_Nai ** 3 + Na_o ** 3) * (Km_Ca + Ca_o) * (1.0 + K_sat * e2))
    i_pCa = g_pCa * Cai / (Cai + K_pCa)
    i_pK = g_pK * dvk * pk_f
    i_bNa = g_bna * (V - E_Na)
    i_bCa = g_bca * (V - E_Ca)
    i_ion = i_Na + i_K1 + i_to + i_Kr + i_Ks + i_CaL + i_NaK + i_NaCa + i_pCa + i_pK + i_bNa + i_bCa

    i_leak = V_leak * (CaSR - Cai)
    i_up = s_up * Vmax_up / (1.0 + (K_up * K_up) / (Cai * Cai))
    i_xfer = V_xfer * (CaSS - Cai)
    kcasr = max_sr - (max_sr - min_sr) / (1.0 + (EC / CaSR) ** 2)
    k1 = k1_prime / kcasr
    k2 = k2_prime * kcasr
    O = k1 * CaSS * CaSS * Rp / (k3 + k1 * CaSS * CaSS)
    i_rel = V_rel * O * (CaSR - CaSS)
    dRp = -k2 * CaSS * Rp + k4 * (1.0 - Rp)
    cap = Cm / (V_c * F)
    dCai = (-(i_bCa + i_pCa - 2.0 * i_NaCa) * 0.5 * cap + (i_leak - i_up) * V_sr / V_c + i_xfer) / (
        1.0 + Buf_c * K_buf_c / (Cai + K_buf_c) ** 2)
    dCaSR = (i_up - i_rel - i_leak) / (1.0 + Buf_sr * K_buf_sr / (CaSR + K_buf_sr) ** 2)
    dCaSS = (-i_CaL * Cm / (2.0 * V_ss * F) + i_rel * V_sr / V_ss - i_xfer * V_c / V_ss) / (
        1.0 + Buf_ss * K_buf_ss / (CaSS + K_buf_ss) ** 2)
    dNai = -(i_Na + i_bNa + 3.0 * i_NaK + 3.0 * i_NaCa) * cap
    dKi = -(i_K1 + i_to + i_Kr + i_Ks + i_pK + istim - 2.0 * i_NaK) * cap
    dV = -(i_ion + istim)
    return dV, dCai, dCaSR, dCaSS, dRp, dNai, dKi


@njit(cache=True, inline="always")
def _node_derivs(Y, i, p, istim, nak_f, e1, e2, cal_a, cal_b, pk_f, xk1, E_K):
    return _currents(Y[0, i], Y[1, i], Y[2, i], Y[3, i], Y[4, i], Y[5, i], Y[6, i], Y[7, i], Y[8, i],
                     Y[9, i], Y[10, i], Y[11, i], Y[12, i], Y[13, i], Y[14, i], Y[15, i], Y[16, i],
                     Y[17, i], Y[18, i], nak_f, e1, e2, cal_a, cal_b, pk_f, xk1, E_K, p, istim)


@njit(cache=True, inline="always")
def _e_k(Ki, p):
    return p[5] * p[6] / p[4] * np.log(p[7] / Ki)


@njit(cache=True, inline="always")
def _advance_nongates(Y, i, dt, res, dvdt, update_v):
    Y[13, i] += dt * res[1]
    Y[14, i] += dt * res[2]
    Y[15, i] += dt * res[3]
    Y[16, i] += dt * res[4]
    Y[17, i] += dt * res[5]
    Y[18, i] += dt * res[6]
    dvdt[i] = res[0]
    if update_v:
        Y[0, i] += dt * res[0]


@njit(cache=True, inline="always")
def _advance_fcass(Y, i, dt):
    cs = (Y[15, i] / 0.05) ** 2
    inf = 0.6 / (1.0 + cs) + 0.4
    tau = 80.0 / (1.0 + cs) + 2.0
    Y[10, i] = inf - (inf - Y[10, i]) * np.exp(-dt / tau)


@njit(cache=True)
def _rhs_kernel(Y, p, istim, out):
    for i in range(Y.shape[1]):
        V = Y[0, i]
        g = _gate_rates(V, p[49])
        nak_f, e1, e2, cal_a, cal_b, pk_f = _v_factors(V, p)
        E_K = _e_k(Y[18, i], p)
        res = _node_derivs(Y, i, p, istim[i], nak_f, e1, e2, cal_a, cal_b, pk_f, _xk1(V - E_K), E_K)
        out[0, i] = res[0]
        for k in range(_N_VG):
            row = _VGATE_ROWS[k]
            out[row, i] = (g[k] - Y[row, i]) / g[_N_VG + k]
        cs = (Y[15, i] / 0.05) ** 2
        out[10, i] = (0.6 / (1.0 + cs) + 0.4 - Y[10, i]) / (80.0 / (1.0 + cs) + 2.0)
        for k in range(6):
            out[13 + k, i] = res[1 + k]


@njit(cache=True)
def _step_kernel(Y, p, dt, istim, dvdt, update_v):
    for i in range(Y.shape[1]):
        V = Y[0, i]
        g = _gate_rates(V, p[49])
        nak_f, e1, e2, cal_a, cal_b, pk_f = _v_factors(V, p)
        E_K = _e_k(Y[18, i], p)
        res = _node_derivs(Y, i, p, istim[i], nak_f, e1, e2, cal_a, cal_b, pk_f, _xk1(V - E_K), E_K)
        for k in range(_N_VG):
            row = _VGATE_ROWS[k]
            inf = g[k]
            Y[row, i] = inf - (inf - Y[row, i]) * np.exp(-dt / g[_N_VG + k])
        _advance_fcass(Y, i, dt)
        _advance_nongates(Y, i, dt, res, dvdt, update_v)


@njit(cache=True)
def _build_tables(p, dt, v0, n_v, dv, k0, n_k):
    tab = np.empty((n_v, 2 * _N_VG + _N_VF))
    for a in range(n_v):
        V = v0 + a * dv
        g = _gate_rates(V, p[49])
        for k in range(_N_VG):
            tab[a, k] = g[k]
            tab[a, _N_VG + k] = np.exp(-dt / g[_N_VG + k])
        fac = _v_factors(V, p)
        for k in range(_N_VF):
            tab[a, 2 * _N_VG + k] = fac[k]
    ktab = np.empty(n_k)
    for a in range(n_k):
        ktab[a] = _xk1(k0 + a * dv)
    return tab, ktab


@njit(cache=True)
def _table_step_kernel(Y, p, dt, istim, dvdt, update_v, tab, v0, inv_dv, ktab, k0):
    n_v = tab.shape[0]
    n_k = ktab.shape[0]
    for i in range(Y.shape[1]):
        V = Y[0, i]
        x = (V - v0) * inv_dv
        a = int(np.floor(x))
        E_K = _e_k(Y[18, i], p)
        dvk = V - E_K
        y = (dvk - k0) * inv_dv
        b = int(np.floor(y))
        if a < 0 or a >= n_v - 1 or b < 0 or b >= n_k - 1:
            # outside the tabulated range: exact evaluation
            g = _gate_rates(V, p[49])
            nak_f, e1, e2, cal_a, cal_b, pk_f = _v_factors(V, p)
            res = _node_derivs(Y, i, p, istim[i], nak_f, e1, e2, cal_a, cal_b, pk_f, _xk1(dvk), E_K)
            for k in range(_N_VG):
                row = _VGATE_ROWS[k]
                Y[row, i] = g[k] - (g[k] - Y[row, i]) * np.exp(-dt / g[_N_VG + k])
        else:
            w = x - a
            w0 = 1.0 - w
            c = 2 * _N_VG
            nak_f = w0 * tab[a, c] + w * tab[a + 1, c]
            e1 = w0 * tab[a, c + 1] + w * tab[a + 1, c + 1]
            e2 = w0 * tab[a, c + 2] + w * tab[a + 1, c + 2]
            cal_a = w0 * tab[a, c + 3] + w * tab[a + 1, c + 3]
            cal_b = w0 * tab[a, c + 4] + w * tab[a + 1, c + 4]
            pk_f = w0 * tab[a, c + 5] + w * tab[a + 1, c + 5]
            u = y - b
            xk1 = (1.0 - u) * ktab[b] + u * ktab[b + 1]
            res = _node_derivs(Y, i, p, istim[i], nak_f, e1, e2, cal_a, cal_b, pk_f, xk1, E_K)
            for k in range(_N_VG):
                row = _VGATE_ROWS[k]
                inf = w0 * tab[a, k] + w * tab[a + 1, k]
                rl = w0 * tab[a, _N_VG + k] + w * tab[a + 1, _N_VG + k]
                Y[row, i] = inf - (inf - Y[row, i]) * rl
        _advance_fcass(Y, i, dt)
        _advance_nongates(Y, i, dt, res, dvdt, update_v)


@njit(cache=True)
def _dvdt_exact(Y, i, p, istim):
    V = Y[0, i]
    nak_f, e1, e2, cal_a, cal_b, pk_f = _v_factors(V, p)
    E_K = _e_k(Y[18, i], p)
    return _node_derivs(Y, i, p, istim, nak_f, e1, e2, cal_a, cal_b, pk_f, _xk1(V - E_K), E_K)[0]


@njit(cache=True)
def _integrate_single(y, p, dt, n_steps, cycle_length, stim_start, stim_dur, stim_amp, dv_max,
                      out_t, out_v, out_ca):
    """Pace one cell in place, recording every step.

    A step whose forward-Euler voltage increment would exceed ``dv_max`` is
    split into equal substeps (at most 256); ``dv_max <= 0`` disables this.
    """
    Y = y.reshape(N_STATES, 1)
    ist = np.zeros(1)
    dv = np.zeros(1)
    for n in range(n_steps):
        t = n * dt
        tc = t - stim_start
        ist[0] = 0.0
        if tc >= -1e-9:
            phase = tc - np.floor(tc / cycle_length + 1e-9) * cycle_length
            if phase < stim_dur - 1e-9:
                ist[0] = -stim_amp
        out_t[n] = t
        out_v[n] = Y[0, 0]
        out_ca[n] = Y[13, 0]
        sub = 1
        if dv_max > 0.0:
            rate = abs(_dvdt_exact(Y, 0, p, ist[0]))
            sub = min(256, max(1, int(np.ceil(rate * dt / dv_max))))
        h = dt / sub
        for _ in range(sub):
            _step_kernel(Y, p, h, ist, dv, True)


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def ionic_rhs(state, params: IonicParams, i_stim=0.0) -> np.ndarray:
    """Time derivatives of the 19 states (not Ta).

    ``state`` is a :class:`CellState`, a ``(19,)`` vector or a ``(19, n)``
    array. ``dV/dt = -(I_ion + I_stim)``.
    """
    y = state.y if isinstance(state, CellState) else np.asarray(state, dtype=np.float64)
    Y = np.ascontiguousarray(y.reshape(N_STATES, -1))
    if not np.all(np.isfinite(Y)):
        raise CellModelError("non-finite state")
    ist = np.ascontiguousarray(np.broadcast_to(np.asarray(i_stim, dtype=np.float64), (Y.shape[1],)))
    out = np.empty_like(Y)
    _rhs_kernel(Y, params.to_array(), ist, out)
    return out.reshape(y.shape)


def ionic_current(state, params: IonicParams) -> np.ndarray:
    """Total ionic current I_ion (pA/pF) of a state vector or array."""
    return -ionic_rhs(state, params, 0.0)[0]


class CellStepper:
    """Advance a block of cells by Rush-Larsen/forward-Euler steps.

    ``step`` updates gates and concentrations in place and returns
    ``dV/dt = -(I_ion + I_stim)`` evaluated at the old state. If ``update_v``
    is true the voltage row is advanced by forward Euler as well.

    With ``tables=True`` the voltage-dependent rates are read from lookup
    tables on a 0.01 mV grid (built once per ``dt``); states outside the
    tabulated range fall back to exact evaluation.
    """

    def __init__(self, params: IonicParams, tables: bool = True):
        self.tables = tables
        self._tab_dt = None
        self.set_params(params)

    def set_params(self, params: IonicParams) -> None:
        self.params = params
        self._p = params.to_array()
        self._tab_dt = None

    def _ensure_tables(self, dt):
        if self._tab_dt == dt:
            return
        v0, v1 = TABLE_V_RANGE
        k0, k1 = TABLE_DVK_RANGE
        n_v = int(round((v1 - v0) / TABLE_STEP)) + 1
        n_k = int(round((k1 - k0) / TABLE_STEP)) + 1
        self._tab, self._ktab = _build_tables(self._p, dt, v0, n_v, TABLE_STEP, k0, n_k)
        self._tab_dt = dt

    def step(self, Y: np.ndarray, dt: float, i_stim=None, update_v: bool = True, out=None) -> np.ndarray:
        n = Y.shape[1]
        ist = np.zeros(n) if i_stim is None else np.ascontiguousarray(
            np.broadcast_to(np.asarray(i_stim, float), (n,)))
        dv = np.empty(n) if out is None else out
        dt = float(dt)
        if self.tables:
            self._ensure_tables(dt)
            _table_step_kernel(Y, self._p, dt, ist, dv, bool(update_v), self._tab, TABLE_V_RANGE[0],
                               1.0 / TABLE_STEP, self._ktab, TABLE_DVK_RANGE[0])
        else:
            _step_kernel(Y, self._p, dt, ist, dv, bool(update_v))
        return dv


__all__ = [
    "STATE_NAMES", "N_STATES", "IDX", "RESTING_STATE", "VARIANTS", "HF_SCALES",
    "CellModelError", "IonicParams", "CellState", "CellStepper",
    "restitution_params", "apply_hf_remodelling", "params_for_variant",
    "resting_states", "check_states", "ionic_rhs", "ionic_current",
]

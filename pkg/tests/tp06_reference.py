"""Independent scalar transcription of the archived TP06 epicardial model.

Used only as a test oracle: plain ``math`` arithmetic in the archive's
variable naming, integrated by scipy's stiff ODE solver at tight tolerance.
"""

import math

import numpy as np
from scipy.integrate import solve_ivp

Y0 = [-85.23, 0.00621, 0.4712, 0.0095, 0.00172, 0.7444, 0.7045, 3.373e-05, 0.7888, 0.9755,
      0.9953, 0.999998, 2.42e-08, 0.000126, 3.64, 0.00036, 0.9073, 8.604, 136.89]

C = dict(
    Cm=185.0, K_pCa=0.0005, g_pCa=0.1238, g_CaL=0.0398, g_bca=0.000592, Buf_c=0.2, Buf_sr=10.0,
    Buf_ss=0.4, Ca_o=2.0, EC=1.5, K_buf_c=0.001, K_buf_sr=0.3, K_buf_ss=0.00025, K_up=0.00025,
    V_leak=0.00036, V_rel=0.102, V_sr=1094.0, V_ss=54.68, V_xfer=0.0038, Vmax_up=0.006375,
    k1_prime=0.15, k2_prime=0.045, k3=0.06, k4=0.005, max_sr=2.5, min_sr=1.0, g_Na=14.838,
    g_K1=5.405, F=96.485, R=8.314, T=310.0, V_c=16404.0, K_o=5.4, g_pK=0.0146, g_Kr=0.153,
    P_kna=0.03, g_Ks=0.392, g_bna=0.00029, K_NaCa=1000.0, K_sat=0.1, Km_Ca=1.38, Km_Nai=87.5,
    alpha=2.5, gamma=0.35, Na_o=140.0, K_mNa=40.0, K_mk=1.0, P_NaK=2.724, g_to=0.294,
)


def rhs(t, y, stim, c=C):
    exp, log, sqrt = math.exp, math.log, math.sqrt
    V, Xr1, Xr2, Xs, m, h, j, d, f, f2, fCass, s, r, Ca_i, Ca_SR, Ca_ss, R_prime, Na_i, K_i = y
    dy = [0.0] * 19
    RTF = c["R"] * c["T"] / c["F"]

    alpha_d = 1.4 / (1.0 + exp((-35.0 - V) / 13.0)) + 0.25
    beta_d = 1.4 / (1.0 + exp((V + 5.0) / 5.0))
    gamma_d = 1.0 / (1.0 + exp((50.0 - V) / 20.0))
    dy[7] = (1.0 / (1.0 + exp((-8.0 - V) / 7.5)) - d) / (alpha_d * beta_d + gamma_d)
    tau_f2 = 562.0 * exp(-(V + 27.0) ** 2 / 240.0) + 31.0 / (1.0 + exp((25.0 - V) / 10.0)) + 80.0 / (1.0 + exp((V + 30.0) / 10.0))
    dy[9] = (0.67 / (1.0 + exp((V + 35.0) / 7.0)) + 0.33 - f2) / tau_f2
    dy[10] = (0.6 / (1.0 + (Ca_ss / 0.05) ** 2) + 0.4 - fCass) / (80.0 / (1.0 + (Ca_ss / 0.05) ** 2) + 2.0)
    tau_f = c.get("tau_f_scale", 1.0) * (1102.5 * exp(-(V + 27.0) ** 2 / 225.0) + 200.0 / (1.0 + exp((13.0 - V) / 10.0)) + 180.0 / (1.0 + exp((V + 30.0) / 10.0)) + 20.0)
    dy[8] = (1.0 / (1.0 + exp((V + 20.0) / 7.0)) - f) / tau_f
    if V < -40.0:
        alpha_h = 0.057 * exp(-(V + 80.0) / 6.8)
        beta_h = 2.7 * exp(0.079 * V) + 310000.0 * exp(0.3485 * V)
        alpha_j = (-25428.0 * exp(0.2444 * V) - 6.948e-06 * exp(-0.04391 * V)) * (V + 37.78) / (1.0 + exp(0.311 * (V + 79.23)))
        beta_j = 0.02424 * exp(-0.01052 * V) / (1.0 + exp(-0.1378 * (V + 40.14)))
    else:
        alpha_h = 0.0
        beta_h = 0.77 / (0.13 * (1.0 + exp((V + 10.66) / -11.1)))
        alpha_j = 0.0
        beta_j = 0.6 * exp(0.057 * V) / (1.0 + exp(-0.1 * (V + 32.0)))
    hj_inf = 1.0 / (1.0 + exp((V + 71.55) / 7.43)) ** 2
    dy[5] = (hj_inf - h) * (alpha_h + beta_h)
    dy[6] = (hj_inf - j) * (alpha_j + beta_j)
    alpha_m = 1.0 / (1.0 + exp((-60.0 - V) / 5.0))
    beta_m = 0.1 / (1.0 + exp((V + 35.0) / 5.0)) + 0.1 / (1.0 + exp((V - 50.0) / 200.0))
    dy[4] = (1.0 / (1.0 + exp((-56.86 - V) / 9.03)) ** 2 - m) / (alpha_m * beta_m)
    tau_xr1 = 450.0 / (1.0 + exp((-45.0 - V) / 10.0)) * 6.0 / (1.0 + exp((V + 30.0) / 11.5))
    dy[1] = (1.0 / (1.0 + exp((-26.0 - V) / 7.0)) - Xr1) / tau_xr1
    tau_xr2 = 3.0 / (1.0 + exp((-60.0 - V) / 20.0)) * 1.12 / (1.0 + exp((V - 60.0) / 20.0))
    dy[2] = (1.0 / (1.0 + exp((V + 88.0) / 24.0)) - Xr2) / tau_xr2
    tau_xs = 1400.0 / sqrt(1.0 + exp((5.0 - V) / 6.0)) / (1.0 + exp((V - 35.0) / 15.0)) + 80.0
    dy[3] = (1.0 / (1.0 + exp((-5.0 - V) / 14.0)) - Xs) / tau_xs
    dy[12] = (1.0 / (1.0 + exp((20.0 - V) / 6.0)) - r) / (9.5 * exp(-(V + 40.0) ** 2 / 1800.0) + 0.8)
    tau_s = 85.0 * exp(-(V + 45.0) ** 2 / 320.0) + 5.0 / (1.0 + exp((V - 20.0) / 5.0)) + 3.0
    dy[11] = (1.0 / (1.0 + exp((V + 20.0) / 5.0)) - s) / tau_s

    f_i = 1.0 / (1.0 + c["Buf_c"] * c["K_buf_c"] / (Ca_i + c["K_buf_c"]) ** 2)
    f_sr = 1.0 / (1.0 + c["Buf_sr"] * c["K_buf_sr"] / (Ca_SR + c["K_buf_sr"]) ** 2)
    f_ss = 1.0 / (1.0 + c["Buf_ss"] * c["K_buf_ss"] / (Ca_ss + c["K_buf_ss"]) ** 2)
    i_leak = c["V_leak"] * (Ca_SR - Ca_i)
    i_up = c["Vmax_up"] / (1.0 + c["K_up"] ** 2 / Ca_i ** 2)
    i_xfer = c["V_xfer"] * (Ca_ss - Ca_i)
    kcasr = c["max_sr"] - (c["max_sr"] - c["min_sr"]) / (1.0 + (c["EC"] / Ca_SR) ** 2)
    k1 = c["k1_prime"] / kcasr
    k2 = c["k2_prime"] * kcasr
    O = k1 * Ca_ss ** 2 * R_prime / (c["k3"] + k1 * Ca_ss ** 2)
    dy[16] = -k2 * Ca_ss * R_prime + c["k4"] * (1.0 - R_prime)
    i_rel = c["V_rel"] * O * (Ca_SR - Ca_ss)
    dy[14] = (i_up - (i_rel + i_leak)) * f_sr

    E_Ca = 0.5 * RTF * log(c["Ca_o"] / Ca_i)
    E_K = RTF * log(c["K_o"] / K_i)
    E_Ks = RTF * log((c["K_o"] + c["P_kna"] * c["Na_o"]) / (K_i + c["P_kna"] * Na_i))
    E_Na = RTF * log(c["Na_o"] / Na_i)
    i_NaK = (c["P_NaK"] * c["K_o"] / (c["K_o"] + c["K_mk"]) * Na_i / (Na_i + c["K_mNa"])
             / (1.0 + 0.1245 * exp(-0.1 * V / RTF) + 0.0353 * exp(-V / RTF)))
    i_to = c["g_to"] * r * s * (V - E_K)
    i_p_Ca = c["g_pCa"] * Ca_i / (Ca_i + c["K_pCa"])
    vv = V - 15.0
    if abs(vv) < 1e-7:
        vv = 1e-7
    e = exp(2.0 * vv / RTF)
    i_CaL = c["g_CaL"] * d * f * f2 * fCass * 4.0 * vv * c["F"] / RTF * (0.25 * Ca_ss * e - c["Ca_o"]) / (e - 1.0)
    i_b_Ca = c["g_bca"] * (V - E_Ca)
    alpha_K1 = 0.1 / (1.0 + exp(0.06 * (V - E_K - 200.0)))
    beta_K1 = (3.0 * exp(0.0002 * (V - E_K + 100.0)) + exp(0.1 * (V - E_K - 10.0))) / (1.0 + exp(-0.5 * (V - E_K)))
    i_p_K = c["g_pK"] * (V - E_K) / (1.0 + exp((25.0 - V) / 5.98))
    i_Kr = c["g_Kr"] * sqrt(c["K_o"] / 5.4) * Xr1 * Xr2 * (V - E_K)
    g = c["gamma"]
    i_NaCa = (c["K_NaCa"] * (exp(g * V / RTF) * Na_i ** 3 * c["Ca_o"] - exp((g - 1.0) * V / RTF) * c["Na_o"] ** 3 * Ca_i * c["alpha"])
              / ((c["Km_Nai"] ** 3 + c["Na_o"] ** 3) * (c["Km_Ca"] + c["Ca_o"]) * (1.0 + c["K_sat"] * exp((g - 1.0) * V / RTF))))
    i_Na = c["g_Na"] * m ** 3 * h * j * (V - E_Na)
    i_Ks = c["g_Ks"] * Xs ** 2 * (V - E_Ks)
    i_b_Na = c["g_bna"] * (V - E_Na)
    i_K1 = c["g_K1"] * alpha_K1 / (alpha_K1 + beta_K1) * sqrt(c["K_o"] / 5.4) * (V - E_K)
    vcf = c["Cm"] / (c["V_c"] * c["F"])
    dy[13] = (-(i_b_Ca + i_p_Ca - 2.0 * i_NaCa) * 0.5 * vcf + (i_leak - i_up) * c["V_sr"] / c["V_c"] + i_xfer) * f_i
    dy[15] = (-i_CaL * c["Cm"] / (2.0 * c["V_ss"] * c["F"]) + i_rel * c["V_sr"] / c["V_ss"] - i_xfer * c["V_c"] / c["V_ss"]) * f_ss
    dy[17] = -(i_Na + i_b_Na + 3.0 * i_NaK + 3.0 * i_NaCa) * vcf
    dy[18] = -(i_K1 + i_to + i_Kr + i_Ks + i_p_K + stim - 2.0 * i_NaK) * vcf
    dy[0] = -(i_K1 + i_to + i_Kr + i_Ks + i_CaL + i_NaK + i_Na + i_b_Na + i_NaCa + i_b_Ca + i_p_K + i_p_Ca + stim)
    return dy


# restitution-slope variants: overrides of the standard constants
VARIANTS = {
    "1.1": {},
    "1.4": dict(g_Kr=0.172, g_Ks=0.441, g_pCa=0.3714, g_pK=0.0073, tau_f_scale=1.5),
    "1.8": dict(g_Kr=0.172, g_Ks=0.441, g_pCa=0.8666, g_pK=0.00219, tau_f_scale=2.0),
}


def reference_beat(cycle_length=1000.0, beats=1, stim=-52.0, stim_dur=1.0, rtol=1e-8, atol=1e-10, variant="1.1"):
    """Return (t, V) of the last beat (time from its stimulus) and the final state."""
    c = dict(C, **VARIANTS[variant])
    y = np.array(Y0)
    for b in range(beats):
        # stimulus, upstroke (small steps to resolve the peak), plateau and recovery
        segs = [(0.0, stim_dur, stim, 0.01), (stim_dur, 30.0, 0.0, 0.005), (30.0, cycle_length, 0.0, 1.0)]
        ts, vs = [], []
        for t0, t1, st, hmax in segs:
            sol = solve_ivp(rhs, (t0, t1), y, method="BDF", args=(st, c), rtol=rtol, atol=atol, max_step=hmax)
            y = sol.y[:, -1]
            ts.append(sol.t if not ts else sol.t[1:])
            vs.append(sol.y[0] if not vs else sol.y[0, 1:])
    return np.concatenate(ts), np.concatenate(vs), y

"""Hot inner loops: plant right-hand side, RK4 integration, discrete
controller update and the closed-loop cascade rollout.

Everything here works on flat float64 arrays so the same source runs under
``numba.njit`` or as plain Python (see ``_accel``). Parameter vectors use the
index constants below; ``coefs`` arrays have shape ``(2, 4, n)`` holding, per
axis (alpha, beta) and per parameter (k, d, eta, T), polynomial coefficients
in the stiffness level p_bar, lowest power first.
"""
import math

import numpy as np

from ._accel import jit

# plant parameter vector
P_R0 = 0
P_LINK_MASS = 1
P_GRAV_ACC = 2
P_TAU_P = 3
P_PMAX = 4
P_COUPLING = 5
P_GRAVITY_ON = 6
P_KICK = 7
N_PLANT = 8

# controller parameter vector
C_KAPPA_A = 0
C_KAPPA_B = 1
C_TAU_F = 2
C_TS = 3
C_ILIM = 4
C_R0 = 5
C_LINK_MASS = 6
C_GRAV_ACC = 7
C_FF_ON = 8
C_ANTIWINDUP = 9
N_CTRL = 10

# parameter rows inside coefs[axis]
K_ROW = 0
D_ROW = 1
ETA_ROW = 2
T_ROW = 3

# state vector
S_ALPHA, S_ALPHA_RATE, S_TAU_ALPHA = 0, 1, 2
S_BETA, S_BETA_RATE, S_TAU_BETA = 3, 4, 5
S_PA, S_PB, S_PC = 6, 7, 8
S_PBAR = 9
N_STATE = 10

SQRT3_2 = math.sqrt(3.0) / 2.0
DIVERGENCE_BOUND = 1e6


@jit
def polyval_asc(c, x):
    acc = 0.0
    for i in range(c.shape[0] - 1, -1, -1):
        acc = acc * x + c[i]
    return acc


@jit
def xi_into(pbar, dp_alpha, dp_beta, out):
    # recouple, then place the three pressures relative to the lowest one;
    # the argmin lands on pbar exactly
    dbc = dp_alpha / SQRT3_2
    dab = -dp_beta - 0.5 * dbc
    phi_b = -dab
    phi_c = -dab - dbc
    low = min(0.0, phi_b, phi_c)
    out[0] = pbar + (0.0 - low)
    out[1] = pbar + (phi_b - low)
    out[2] = pbar + (phi_c - low)


@jit
def gravity_torque_scale(m, r0, link_mass, g):
    return link_mass * g * r0 / 2.0 + m * g * r0


@jit
def deriv(x, psp, m, imp, pp, coefs, dx):
    """State derivative of the arm with held pressure setpoints ``psp``."""
    r0 = pp[P_R0]
    tau_p = pp[P_TAU_P]
    pa = x[S_PA]
    pb = x[S_PB]
    pc = x[S_PC]

    dx[S_PA] = (psp[0] - pa) / tau_p
    dx[S_PB] = (psp[1] - pb) / tau_p
    dx[S_PC] = (psp[2] - pc) / tau_p

    # stiffness level: the lowest pressure setpoint seen through the same
    # closed-loop lag; the min of the lagged pressures itself would rise
    # above p_bar under pure difference excitation
    pbar = x[S_PBAR]
    pbar_dot = (min(psp[0], psp[1], psp[2]) - pbar) / tau_p
    dx[S_PBAR] = pbar_dot

    dab = pa - pb
    dbc = pb - pc
    dp_alpha = SQRT3_2 * dbc
    dp_beta = -dab - 0.5 * dbc

    inertia = (m + pp[P_LINK_MASS] / 4.0) * r0 * r0
    coupling = pp[P_COUPLING]
    kick = pp[P_KICK]

    k_a = polyval_asc(coefs[0, K_ROW], pbar)
    d_a = polyval_asc(coefs[0, D_ROW], pbar)
    eta_a = polyval_asc(coefs[0, ETA_ROW], pbar)
    t_a = polyval_asc(coefs[0, T_ROW], pbar)
    k_b = polyval_asc(coefs[1, K_ROW], pbar)
    d_b = polyval_asc(coefs[1, D_ROW], pbar)
    eta_b = polyval_asc(coefs[1, ETA_ROW], pbar)
    t_b = polyval_asc(coefs[1, T_ROW], pbar)

    tau_a = x[S_TAU_ALPHA]
    tau_b = x[S_TAU_BETA]
    dx[S_TAU_ALPHA] = (eta_a * dp_alpha - tau_a) / t_a
    dx[S_TAU_BETA] = (eta_b * dp_beta - tau_b) / t_b

    drive_a = tau_a + coupling * tau_b + kick * k_a * pbar_dot
    drive_b = tau_b + coupling * tau_a + kick * k_b * pbar_dot + imp
    if pp[P_GRAVITY_ON] != 0.0:
        drive_b -= gravity_torque_scale(m, r0, pp[P_LINK_MASS], pp[P_GRAV_ACC]) * math.cos(x[S_BETA])

    dx[S_ALPHA] = x[S_ALPHA_RATE]
    dx[S_ALPHA_RATE] = (drive_a - d_a * x[S_ALPHA_RATE] - k_a * x[S_ALPHA]) / inertia
    dx[S_BETA] = x[S_BETA_RATE]
    dx[S_BETA_RATE] = (drive_b - d_b * x[S_BETA_RATE] - k_b * x[S_BETA]) / inertia


@jit
def rk4_step(x, psp, m, imp, pp, coefs, h, k1, k2, k3, k4, tmp):
    n = x.shape[0]
    deriv(x, psp, m, imp, pp, coefs, k1)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * h * k1[i]
    deriv(tmp, psp, m, imp, pp, coefs, k2)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * h * k2[i]
    deriv(tmp, psp, m, imp, pp, coefs, k3)
    for i in range(n):
        tmp[i] = x[i] + h * k3[i]
    deriv(tmp, psp, m, imp, pp, coefs, k4)
    for i in range(n):
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@jit
def state_ok(x):
    for i in range(x.shape[0]):
        v = x[i]
        if not (abs(v) <= DIVERGENCE_BOUND):
            return False
    return True


@jit
def simulate_open_loop(x0, psp_seq, m_seq, imp_seq, pp, coefs, h):
    """Integrate ``n`` steps of length ``h`` with per-step held setpoints.

    Returns the ``(n + 1, N_STATE)`` state history and the index of the first
    diverged step (-1 when the run stayed bounded).
    """
    n = psp_seq.shape[0]
    hist = np.empty((n + 1, N_STATE))
    x = x0.copy()
    hist[0] = x
    k1 = np.empty(N_STATE)
    k2 = np.empty(N_STATE)
    k3 = np.empty(N_STATE)
    k4 = np.empty(N_STATE)
    tmp = np.empty(N_STATE)
    for i in range(n):
        rk4_step(x, psp_seq[i], m_seq[i], imp_seq[i], pp, coefs, h, k1, k2, k3, k4, tmp)
        if not state_ok(x):
            hist[i + 1:] = np.nan
            return hist, i
        hist[i + 1] = x
    return hist, -1


@jit
def ctrl_update(cs, e_a, e_b, kappa_a, kappa_b, inertia, d_a, d_b, k_a, k_b, ts, tau_f, ilim, out):
    """One sample of the Tustin-discretised law kappa*(J s/(tau_f s+1) + d + k/s).

    ``cs`` = [integ_a, integ_b, dfilt_a, dfilt_b, e_prev_a, e_prev_b] is
    updated in place. ``out`` receives [u_a, u_b, dinteg_a, dinteg_b].
    Returns False (state untouched, zero output) on a non-finite error.
    """
    if not (math.isfinite(e_a) and math.isfinite(e_b)):
        out[0] = 0.0
        out[1] = 0.0
        out[2] = 0.0
        out[3] = 0.0
        return False
    a = (2.0 * tau_f - ts) / (2.0 * tau_f + ts)
    b = 2.0 / (2.0 * tau_f + ts)

    di_a = kappa_a * k_a * 0.5 * ts * (e_a + cs[4])
    di_b = kappa_b * k_b * 0.5 * ts * (e_b + cs[5])
    i_a = min(max(cs[0] + di_a, -ilim), ilim)
    i_b = min(max(cs[1] + di_b, -ilim), ilim)
    out[2] = i_a - cs[0]
    out[3] = i_b - cs[1]
    cs[0] = i_a
    cs[1] = i_b

    cs[2] = a * cs[2] + b * (e_a - cs[4])
    cs[3] = a * cs[3] + b * (e_b - cs[5])
    cs[4] = e_a
    cs[5] = e_b

    out[0] = kappa_a * (inertia * cs[2] + d_a * e_a) + i_a
    out[1] = kappa_b * (inertia * cs[3] + d_b * e_b) + i_b
    return True


@jit
def beta_feedforward(beta_sp, m, r0, link_mass, g, eta_b):
    return gravity_torque_scale(m, r0, link_mass, g) * math.cos(beta_sp) / eta_b


@jit
def rollout(x0, cs0, pp, coefs, cp, ccoefs, ref, beta_ff_ref, pbar_sp,
            m_plant, m_ctrl, imp, noise, n_sub, h):
    """Closed-loop cascade over ``N`` outer samples.

    Per outer step: measure, run the scheduled controller, add the gravity
    feedforward, allocate through xi, saturate, then ``n_sub`` RK4 plant
    steps with the pressure setpoints held.
    """
    n = ref.shape[0]
    y = np.empty((n + 1, 2))
    ym = np.empty((n + 1, 2))
    dp_cmd = np.zeros((n, 2))
    psp_log = np.zeros((n, 3))
    pact = np.empty((n + 1, 3))
    sat = np.zeros(n, dtype=np.int8)

    x = x0.copy()
    cs = cs0.copy()
    k1 = np.empty(N_STATE)
    k2 = np.empty(N_STATE)
    k3 = np.empty(N_STATE)
    k4 = np.empty(N_STATE)
    tmp = np.empty(N_STATE)
    out = np.empty(4)
    psp = np.empty(3)

    r0 = cp[C_R0]
    link_mass = cp[C_LINK_MASS]
    g = cp[C_GRAV_ACC]
    pmax = pp[P_PMAX]
    status = -1

    y[0, 0] = x[S_ALPHA]
    y[0, 1] = x[S_BETA]
    pact[0, 0] = x[S_PA]
    pact[0, 1] = x[S_PB]
    pact[0, 2] = x[S_PC]

    for k in range(n):
        ym[k, 0] = y[k, 0] + noise[k, 0]
        ym[k, 1] = y[k, 1] + noise[k, 1]
        pb = pbar_sp[k]
        mc = m_ctrl[k]
        inertia = (mc + link_mass / 4.0) * r0 * r0
        k_a = polyval_asc(ccoefs[0, K_ROW], pb)
        d_a = polyval_asc(ccoefs[0, D_ROW], pb)
        k_b = polyval_asc(ccoefs[1, K_ROW], pb)
        d_b = polyval_asc(ccoefs[1, D_ROW], pb)
        eta_b = polyval_asc(ccoefs[1, ETA_ROW], pb)

        ctrl_update(cs, ref[k, 0] - ym[k, 0], ref[k, 1] - ym[k, 1],
                    cp[C_KAPPA_A], cp[C_KAPPA_B], inertia, d_a, d_b, k_a, k_b,
                    cp[C_TS], cp[C_TAU_F], cp[C_ILIM], out)
        u_a = out[0]
        u_b = out[1]
        if cp[C_FF_ON] != 0.0:
            u_b += beta_feedforward(beta_ff_ref[k], mc, r0, link_mass, g, eta_b)
        dp_cmd[k, 0] = u_a
        dp_cmd[k, 1] = u_b

        xi_into(pb, u_a, u_b, psp)
        clipped = False
        for i in range(3):
            if psp[i] > pmax:
                psp[i] = pmax
                clipped = True
            elif psp[i] < 0.0:
                psp[i] = 0.0
                clipped = True
        if clipped:
            sat[k] = 1
            if cp[C_ANTIWINDUP] != 0.0:
                cs[0] -= out[2]
                cs[1] -= out[3]
        psp_log[k, 0] = psp[0]
        psp_log[k, 1] = psp[1]
        psp_log[k, 2] = psp[2]

        for _ in range(n_sub):
            rk4_step(x, psp, m_plant[k], imp[k], pp, coefs, h, k1, k2, k3, k4, tmp)
        if not state_ok(x):
            status = k
            for j in range(k + 1, n + 1):
                y[j, 0] = np.nan
                y[j, 1] = np.nan
                ym[j, 0] = np.nan
                ym[j, 1] = np.nan
                pact[j, 0] = np.nan
                pact[j, 1] = np.nan
                pact[j, 2] = np.nan
            return y, ym, dp_cmd, psp_log, pact, sat, x, cs, status
        y[k + 1, 0] = x[S_ALPHA]
        y[k + 1, 1] = x[S_BETA]
        pact[k + 1, 0] = x[S_PA]
        pact[k + 1, 1] = x[S_PB]
        pact[k + 1, 2] = x[S_PC]

    ym[n, 0] = y[n, 0] + noise[n, 0]
    ym[n, 1] = y[n, 1] + noise[n, 1]
    return y, ym, dp_cmd, psp_log, pact, sat, x, cs, status

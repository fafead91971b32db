"""Gain-scheduled feedback with gravity feedforward, and the cascade that
turns angle setpoints into absolute pressure setpoints at the outer rate.

Per axis the continuous law is

    C(s) = kappa * (J s^2 + d s + k) / s

with J the inertia for the scheduled load mass and (k, d) evaluated at the
scheduled p_bar. Against the plant eta / ((T s + 1)(J s^2 + d s + k)) the
mechanical poles cancel and the loop reduces to kappa*eta / (s (T s + 1)).
The implementation is the bilinear transform of kappa*(J s/(tau_f s + 1)
+ d + k/s), i.e. the derivative is filtered with time constant tau_f.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import _kernels as K
from .allocation import AbsolutePressures, DeltaRepresentation, xi
from .errors import InvalidInputError
from .plant import JointParameters, MechanicalParams

NOMINAL_PBAR = 1.10
SLOW_POLE_HZ = 2.0


def kappa_for_slow_pole(T: float, eta: float, pole_hz: float = SLOW_POLE_HZ) -> float:
    """kappa placing the slow root of T s^2 + s + kappa*eta at -2 pi pole_hz."""
    s = -2.0 * math.pi * pole_hz
    kappa_eta = -s * (T * s + 1.0)
    if kappa_eta <= 0:
        raise InvalidInputError(f"a {pole_hz} Hz slow pole is not reachable with T = {T}")
    return kappa_eta / eta


@dataclass(frozen=True)
class ControllerParams:
    """kappa per axis, outer sample time, derivative filter, integrator clamp.

    ``mass_override`` replaces the true load mass in the schedule (None means
    the controller is told the true mass).
    """

    kappa_alpha: float
    kappa_beta: float
    ts: float = 0.02
    tau_f: float | None = None
    integrator_limit: float = 3.0
    feedforward: bool = True
    antiwindup: bool = True
    mass_override: float | None = None

    def __post_init__(self):
        if not (self.kappa_alpha > 0 and self.kappa_beta > 0):
            raise InvalidInputError("kappa must be > 0 on both axes")
        if not self.ts > 0:
            raise InvalidInputError("outer sample time must be > 0")
        if self.tau_f is None:
            object.__setattr__(self, "tau_f", self.ts)
        if not (self.tau_f > 0 and self.integrator_limit > 0):
            raise InvalidInputError("tau_f and integrator_limit must be > 0")

    @classmethod
    def default(cls, joint: JointParameters | None = None, p_bar: float = NOMINAL_PBAR,
                pole_hz: float = SLOW_POLE_HZ, **kw) -> "ControllerParams":
        joint = joint or JointParameters.default()
        kappas = []
        for ax in (joint.alpha, joint.beta):
            _, _, eta, T = ax.evaluate(p_bar)
            kappas.append(kappa_for_slow_pole(float(T), float(eta), pole_hz))
        return cls(kappas[0], kappas[1], **kw)

    @property
    def kappa(self):
        return (self.kappa_alpha, self.kappa_beta)

    def pack(self, mech: MechanicalParams) -> np.ndarray:
        cp = np.zeros(K.N_CTRL)
        cp[K.C_KAPPA_A] = self.kappa_alpha
        cp[K.C_KAPPA_B] = self.kappa_beta
        cp[K.C_TAU_F] = self.tau_f
        cp[K.C_TS] = self.ts
        cp[K.C_ILIM] = self.integrator_limit
        cp[K.C_R0] = mech.R0
        cp[K.C_LINK_MASS] = mech.M
        cp[K.C_GRAV_ACC] = mech.g
        cp[K.C_FF_ON] = 1.0 if self.feedforward else 0.0
        cp[K.C_ANTIWINDUP] = 1.0 if self.antiwindup else 0.0
        return cp

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d, joint: JointParameters | None = None):
        d = dict(d)
        if "kappa_alpha" not in d or "kappa_beta" not in d:
            base = cls.default(joint, pole_hz=float(d.pop("pole_hz", SLOW_POLE_HZ)))
            d.setdefault("kappa_alpha", base.kappa_alpha)
            d.setdefault("kappa_beta", base.kappa_beta)
        d.pop("pole_hz", None)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown controller keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ControllerState:
    """Integrators, filtered derivative states and previous errors per axis."""

    integrator: np.ndarray = field(default_factory=lambda: np.zeros(2))
    derivative: np.ndarray = field(default_factory=lambda: np.zeros(2))
    previous_error: np.ndarray = field(default_factory=lambda: np.zeros(2))
    fault: bool = False

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.integrator, self.derivative, self.previous_error]).astype(float)

    @classmethod
    def from_vector(cls, cs) -> "ControllerState":
        cs = np.asarray(cs, dtype=float)
        return cls(cs[0:2].copy(), cs[2:4].copy(), cs[4:6].copy())

    def load(self, cs):
        self.integrator[:] = cs[0:2]
        self.derivative[:] = cs[2:4]
        self.previous_error[:] = cs[4:6]


def scheduled_gains(p_bar: float, m: float, mech: MechanicalParams, joint: JointParameters):
    """(inertia, (k_a, k_b), (d_a, d_b), eta_b) for the schedule point."""
    ka, da, _, _ = joint.alpha.evaluate(p_bar)
    kb, db, eta_b, _ = joint.beta.evaluate(p_bar)
    return mech.inertia(m), (float(ka), float(kb)), (float(da), float(db)), float(eta_b)


def controller_step(error, sched, state: ControllerState, params: ControllerParams,
                    mech: MechanicalParams, joint: JointParameters):
    """One outer-rate update. Returns ``((dp_alpha, dp_beta), integrator_increment)``.

    A non-finite error marks ``state.fault`` and yields zero output with the
    state left untouched.
    """
    p_bar, m = sched
    if params.mass_override is not None:
        m = params.mass_override
    inertia, k, d, _ = scheduled_gains(p_bar, m, mech, joint)
    cs = state.to_vector()
    out = np.zeros(4)
    ok = K.ctrl_update(cs, float(error[0]), float(error[1]), params.kappa_alpha, params.kappa_beta,
                       inertia, d[0], d[1], k[0], k[1], params.ts, params.tau_f,
                       params.integrator_limit, out)
    state.fault = not ok
    if ok:
        state.load(cs)
    return (float(out[0]), float(out[1])), (float(out[2]), float(out[3]))


def feedforward_beta(beta_setpoint: float, sched, mech: MechanicalParams, joint: JointParameters) -> float:
    """Pressure difference that holds gravity on beta: (M g R0/2 + m g R0) cos(beta_SP) / eta_beta."""
    if not np.all(np.isfinite(beta_setpoint)):
        raise InvalidInputError("beta setpoint must be finite")
    p_bar, m = sched
    _, _, eta_b, _ = joint.beta.evaluate(p_bar)
    return mech.gravity_scale(m) * np.cos(beta_setpoint) / eta_b


def cascade_step(setpoints, measured, state: ControllerState, params: ControllerParams,
                 mech: MechanicalParams, joint: JointParameters, correction=(0.0, 0.0),
                 p_max: float = 5.0):
    """Angle setpoints in, absolute pressure setpoints out.

    ``setpoints`` is (alpha_SP, beta_SP, p_bar_SP, m). ``correction`` is the
    learned reference offset (serial architecture): it shifts the angle
    reference seen by the feedback law, never the feedforward. p_bar_SP is
    passed straight to the allocation. Returns ``(AbsolutePressures, saturated)``.
    """
    a_sp, b_sp, p_bar, m = setpoints
    error = (a_sp + correction[0] - measured[0], b_sp + correction[1] - measured[1])
    m_sched = m if params.mass_override is None else params.mass_override
    (u_a, u_b), (di_a, di_b) = controller_step(error, (p_bar, m), state, params, mech, joint)
    if params.feedforward:
        u_b += feedforward_beta(b_sp, (p_bar, m_sched), mech, joint)
    p = np.asarray(xi(DeltaRepresentation(p_bar, u_a, u_b)), dtype=float)
    clipped = np.clip(p, 0.0, p_max)
    saturated = bool(np.any(clipped != p))
    if saturated and params.antiwindup:
        state.integrator -= (di_a, di_b)
    return AbsolutePressures(*clipped), saturated


# -- analysis -----------------------------------------------------------------

def controller_tf(kappa: float, inertia: float, d: float, k: float):
    """(num, den) of the ideal continuous law, highest power first."""
    return kappa * np.array([inertia, d, k]), np.array([1.0, 0.0])


def closed_loop_response(freq_hz, kappa: float, plant_axis, p_bar: float, m: float,
                         mech: MechanicalParams, sched_m: float | None = None):
    """Reference-to-output frequency response of one axis.

    Evaluated from the controller and plant separately (no cancellation is
    assumed), so scheduling with the wrong mass shows up.
    """
    from .plant import frequency_response

    sched_m = m if sched_m is None else sched_m
    k, d, _, _ = (float(v) for v in plant_axis.evaluate(p_bar))
    s = 2j * np.pi * np.asarray(freq_hz, dtype=float)
    c = kappa * (mech.inertia(sched_m) * s**2 + d * s + k) / s
    g = frequency_response(plant_axis, p_bar, mech.inertia(m), freq_hz)
    return c * g / (1.0 + c * g)


def nominal_closed_loop(T: float, kappa_eta: float):
    """(num, den) of kappa*eta / (T s^2 + s + kappa*eta)."""
    return np.array([kappa_eta]), np.array([T, 1.0, kappa_eta])


def characteristic_roots(T: float, kappa_eta: float) -> np.ndarray:
    """Roots of T s^2 + s + kappa*eta."""
    return np.roots([T, 1.0, kappa_eta])


def full_characteristic_polynomial(axis, p_bar: float, inertia: float, kappa_eta: float) -> np.ndarray:
    """(J s^2 + d s + k)(T s^2 + s + kappa*eta): the closed loop before cancellation."""
    k, d, _, T = (float(v) for v in axis.evaluate(p_bar))
    return np.polymul([inertia, d, k], [T, 1.0, kappa_eta])


def stability_grid(joint: JointParameters | None = None, mech: MechanicalParams | None = None,
                   masses=(0.0, 0.1, 0.2), pbars=(1.0, 1.1, 1.2), kappa_etas=(0.5, 1.0, 2.0, 5.0, 10.0)):
    """Largest real part of the closed-loop roots for every grid point and axis.

    Returns a list of dicts with keys m, p_bar, kappa_eta, axis, max_real.
    """
    joint = joint or JointParameters.default()
    mech = mech or MechanicalParams()
    rows = []
    for m in masses:
        for p in pbars:
            for ke in kappa_etas:
                for name in ("alpha", "beta"):
                    poly = full_characteristic_polynomial(joint.axis(name), p, mech.inertia(m), ke)
                    rows.append({"m": m, "p_bar": p, "kappa_eta": ke, "axis": name,
                                 "max_real": float(np.max(np.roots(poly).real))})
    return rows

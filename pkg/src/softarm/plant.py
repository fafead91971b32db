"""Synthetic ground-truth arm: two p_bar-scheduled pendulum axes driven
through first-order torque dynamics by the measured pressure differences,
three lagged actuator pressures, and optional repeatable disturbances.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .allocation import PBAR_MAX, PBAR_MIN, AbsolutePressures, DeltaRepresentation, xi
from .errors import InvalidInputError, SimulationDivergedError

PARAM_NAMES = ("k", "d", "eta", "T")
R_AT_PBAR_MIN = 0.3479
ELONGATION = 0.006


@dataclass(frozen=True)
class MechanicalParams:
    R0: float = 0.3479
    M: float = 0.2
    m: float = 0.0
    g: float = 9.81

    def __post_init__(self):
        if not (self.R0 > 0 and self.M > 0 and self.m >= 0 and self.g > 0):
            raise InvalidInputError(f"invalid mechanical parameters {self}")

    def inertia(self, m: float | None = None) -> float:
        m = self.m if m is None else m
        return (m + self.M / 4.0) * self.R0**2

    def gravity_scale(self, m: float | None = None) -> float:
        """M g R0/2 + m g R0, the torque amplitude multiplying cos(beta)."""
        m = self.m if m is None else m
        return self.M * self.g * self.R0 / 2.0 + m * self.g * self.R0


@dataclass(frozen=True)
class AxisParameters:
    """Polynomials in p_bar (lowest power first) for one axis."""

    k: tuple
    d: tuple
    eta: tuple
    T: tuple

    def __post_init__(self):
        for name in PARAM_NAMES:
            object.__setattr__(self, name, tuple(float(c) for c in np.atleast_1d(getattr(self, name))))

    def evaluate(self, p_bar):
        """Return (k, d, eta, T) at ``p_bar``."""
        return tuple(np.polynomial.polynomial.polyval(p_bar, getattr(self, n)) for n in PARAM_NAMES)

    def scaled(self, **factors) -> "AxisParameters":
        return AxisParameters(**{n: tuple(factors.get(n, 1.0) * c for c in getattr(self, n)) for n in PARAM_NAMES})

    def validate(self, lo=PBAR_MIN, hi=PBAR_MAX, n=51):
        grid = np.linspace(lo, hi, n)
        values = self.evaluate(grid)
        for name, v in zip(PARAM_NAMES, values):
            if np.any(v <= 0):
                raise InvalidInputError(f"{name}(p_bar) must stay positive on [{lo}, {hi}]")
        if np.any(np.diff(values[0]) <= 0):
            raise InvalidInputError("stiffness must increase with p_bar")


@dataclass(frozen=True)
class JointParameters:
    alpha: AxisParameters
    beta: AxisParameters

    @classmethod
    def default(cls) -> "JointParameters":
        base = AxisParameters(k=(-1.0, 4.0), d=(0.15, 0.05), eta=(0.9, 0.1), T=(0.06, -0.02))
        return cls(alpha=base, beta=base.scaled(k=1.05, d=0.95, eta=1.05, T=0.95))

    def axis(self, i) -> AxisParameters:
        return (self.alpha, self.beta)[{"alpha": 0, "beta": 1}.get(i, i)]

    def validate(self):
        self.alpha.validate()
        self.beta.validate()

    def coef_array(self) -> np.ndarray:
        n = max(len(getattr(ax, p)) for ax in (self.alpha, self.beta) for p in PARAM_NAMES)
        out = np.zeros((2, 4, n))
        for i, ax in enumerate((self.alpha, self.beta)):
            for j, p in enumerate(PARAM_NAMES):
                c = getattr(ax, p)
                out[i, j, : len(c)] = c
        return out

    def to_dict(self):
        return {name: {p: list(getattr(ax, p)) for p in PARAM_NAMES}
                for name, ax in (("alpha", self.alpha), ("beta", self.beta))}

    @classmethod
    def from_dict(cls, d):
        return cls(alpha=AxisParameters(**d["alpha"]), beta=AxisParameters(**d["beta"]))


@dataclass(frozen=True)
class DisturbanceConfig:
    """Repeatable error sources; all zero gives the ideal decoupled linear plant.

    coupling: fraction of each axis' driving torque leaking into the other.
    gravity: adds -(M g R0/2 + m g R0) cos(beta) on the beta axis.
    pbar_kick_gain: rad per (bar/s); each axis receives k_i * gain * dp_bar/dt.
    deposit_impulse: N m s applied to the beta axis over the eject window.
    noise_std: rad, Gaussian measurement noise on both angles.
    """

    coupling: float = 0.0
    gravity: bool = False
    pbar_kick_gain: float = 0.0
    deposit_impulse: float = 0.0
    noise_std: float = 0.0

    def __post_init__(self):
        if min(self.coupling, self.pbar_kick_gain, self.deposit_impulse, self.noise_std) < 0:
            raise InvalidInputError("disturbance gains must be >= 0")

    @classmethod
    def default_disturbed(cls) -> "DisturbanceConfig":
        return cls(coupling=0.05, gravity=True, pbar_kick_gain=0.1,
                   deposit_impulse=0.02, noise_std=math.radians(0.05))


@dataclass(frozen=True)
class PlantConfig:
    mech: MechanicalParams = field(default_factory=MechanicalParams)
    joint: JointParameters = field(default_factory=JointParameters.default)
    dist: DisturbanceConfig = field(default_factory=DisturbanceConfig.default_disturbed)
    pressure_lag: float = 0.02
    pressure_max: float = 5.0
    dt: float = 1e-3
    angle_limit: float = math.radians(75.0)

    def linear(self) -> "PlantConfig":
        """Same plant with every disturbance and the gravity term removed."""
        return replace(self, dist=DisturbanceConfig())

    def with_dist(self, **kw) -> "PlantConfig":
        return replace(self, dist=replace(self.dist, **kw))

    def pack(self):
        pp = np.zeros(K.N_PLANT)
        pp[K.P_R0] = self.mech.R0
        pp[K.P_LINK_MASS] = self.mech.M
        pp[K.P_GRAV_ACC] = self.mech.g
        pp[K.P_TAU_P] = self.pressure_lag
        pp[K.P_PMAX] = self.pressure_max
        pp[K.P_COUPLING] = self.dist.coupling
        pp[K.P_GRAVITY_ON] = 1.0 if self.dist.gravity else 0.0
        pp[K.P_KICK] = self.dist.pbar_kick_gain
        return pp, self.joint.coef_array()

    def to_dict(self):
        return {
            "mechanical": {"R0": self.mech.R0, "M": self.mech.M, "m": self.mech.m, "g": self.mech.g},
            "joint": self.joint.to_dict(),
            "disturbance": {
                "coupling": self.dist.coupling, "gravity": self.dist.gravity,
                "pbar_kick_gain": self.dist.pbar_kick_gain,
                "deposit_impulse": self.dist.deposit_impulse, "noise_std": self.dist.noise_std,
            },
            "pressure_lag": self.pressure_lag,
            "pressure_max": self.pressure_max,
            "dt": self.dt,
            "angle_limit": self.angle_limit,
        }

    @classmethod
    def from_dict(cls, d) -> "PlantConfig":
        default = cls()
        cfg = cls(
            mech=MechanicalParams(**d["mechanical"]) if "mechanical" in d else default.mech,
            joint=JointParameters.from_dict(d["joint"]) if "joint" in d else default.joint,
            dist=DisturbanceConfig(**d["disturbance"]) if "disturbance" in d else default.dist,
            pressure_lag=float(d.get("pressure_lag", default.pressure_lag)),
            pressure_max=float(d.get("pressure_max", default.pressure_max)),
            dt=float(d.get("dt", default.dt)),
            angle_limit=float(d.get("angle_limit", default.angle_limit)),
        )
        cfg.joint.validate()
        return cfg


@dataclass
class PlantState:
    """Angles, rates, torque-lag states, actuator pressures (bar) and the
    lagged stiffness level that schedules k, d, eta and T."""

    alpha: float = 0.0
    alpha_rate: float = 0.0
    tau_alpha: float = 0.0
    beta: float = 0.0
    beta_rate: float = 0.0
    tau_beta: float = 0.0
    p_a: float = 1.0
    p_b: float = 1.0
    p_c: float = 1.0
    stiffness_level: float = 1.0

    def to_vector(self) -> np.ndarray:
        return np.array([self.alpha, self.alpha_rate, self.tau_alpha, self.beta, self.beta_rate,
                         self.tau_beta, self.p_a, self.p_b, self.p_c, self.stiffness_level], dtype=float)

    @classmethod
    def from_vector(cls, x) -> "PlantState":
        return cls(*(float(v) for v in x))

    @classmethod
    def at_rest(cls, p_bar=1.0) -> "PlantState":
        return cls(p_a=p_bar, p_b=p_bar, p_c=p_bar, stiffness_level=p_bar)


def _state_vec(state):
    return state.to_vector() if isinstance(state, PlantState) else np.asarray(state, dtype=float).copy()


def saturate(p: AbsolutePressures, p_max: float):
    """Clamp pressure setpoints into [0, p_max]; returns (pressures, flag)."""
    arr = np.asarray(p, dtype=float)
    clipped = np.clip(arr, 0.0, p_max)
    return AbsolutePressures(*clipped), bool(np.any(clipped != arr))


def eval_dynamics(state, setpoint: DeltaRepresentation, cfg: PlantConfig, m=None, impulse_torque=0.0):
    """Time derivative of the plant state vector for held setpoints.

    The torque dynamics see the pressure differences of the lagged actuator
    states, never the commanded ``setpoint`` directly.
    """
    x = _state_vec(state)
    if not np.all(np.isfinite(x)):
        raise SimulationDivergedError("non-finite plant state")
    psp, _ = saturate(xi(setpoint), cfg.pressure_max)
    pp, coefs = cfg.pack()
    dx = np.empty(K.N_STATE)
    K.deriv(x, np.asarray(psp, dtype=float), float(cfg.mech.m if m is None else m),
            float(impulse_torque), pp, coefs, dx)
    return dx


def step(state, setpoint: DeltaRepresentation, dt: float, cfg: PlantConfig, m=None, impulse_torque=0.0):
    """Advance the plant by one RK4 step of length ``dt`` (at most 1 ms)."""
    if not (0 < dt <= 1e-3 + 1e-15):
        raise InvalidInputError("dt must lie in (0, 1 ms]")
    x = _state_vec(state)
    psp, _ = saturate(xi(setpoint), cfg.pressure_max)
    pp, coefs = cfg.pack()
    work = [np.empty(K.N_STATE) for _ in range(5)]
    K.rk4_step(x, np.asarray(psp, dtype=float), float(cfg.mech.m if m is None else m),
               float(impulse_torque), pp, coefs, dt, *work)
    if not K.state_ok(x):
        raise SimulationDivergedError("plant state exceeded divergence bound")
    return PlantState.from_vector(x)


def inner_pressure_loop(setpoint: AbsolutePressures, pressures, dt: float,
                        time_constant: float = 0.02, p_max: float = 5.0):
    """Exact update of the three closed inner pressure loops over ``dt``.

    Each loop is a first-order lag toward its (saturated) setpoint. Returns
    ``(AbsolutePressures, saturated)``.
    """
    sp, saturated = saturate(setpoint, p_max)
    p = np.asarray(pressures, dtype=float)
    decay = math.exp(-dt / time_constant)
    new = np.asarray(sp) + (p - np.asarray(sp)) * decay
    return AbsolutePressures(*new), saturated


def radius_from_pbar(p_bar):
    """Axial radius (m) of the arm; 347.9 mm at p_bar_min to 353.9 mm at p_bar_max."""
    p = np.asarray(p_bar, dtype=float)
    if np.any((p < PBAR_MIN) | (p > PBAR_MAX)):
        warnings.warn("p_bar outside admissible interval; radius clamped", stacklevel=2)
        p = np.clip(p, PBAR_MIN, PBAR_MAX)
    r = R_AT_PBAR_MIN + ELONGATION / (PBAR_MAX - PBAR_MIN) * (p - PBAR_MIN)
    return float(r) if r.ndim == 0 else r


def transfer_function(axis: AxisParameters, p_bar: float, inertia: float):
    """(num, den) of eta / ((T s + 1)(J s^2 + d s + k)), highest power first."""
    k, d, eta, T = (float(v) for v in axis.evaluate(p_bar))
    den = np.polymul([T, 1.0], [inertia, d, k])
    return np.array([eta]), den


def frequency_response(axis: AxisParameters, p_bar: float, inertia: float, freq_hz):
    num, den = transfer_function(axis, p_bar, inertia)
    s = 2j * np.pi * np.asarray(freq_hz, dtype=float)
    return np.polyval(num, s) / np.polyval(den, s)


def equilibrium(cfg: PlantConfig, alpha: float, beta: float, p_bar: float, m: float):
    """Rest state holding (alpha, beta) and the pressure differences it needs.

    Solves the coupled static torque balance, so it is exact for any
    coupling gain and with gravity switched on.
    """
    ka, _, eta_a, _ = cfg.joint.alpha.evaluate(p_bar)
    kb, _, eta_b, _ = cfg.joint.beta.evaluate(p_bar)
    c = cfg.dist.coupling
    rhs_b = kb * beta + (cfg.mech.gravity_scale(m) * math.cos(beta) if cfg.dist.gravity else 0.0)
    tau = np.linalg.solve([[1.0, c], [c, 1.0]], [ka * alpha, rhs_b])
    dp = np.array([tau[0] / eta_a, tau[1] / eta_b])
    p, _ = saturate(xi(DeltaRepresentation(p_bar, dp[0], dp[1])), cfg.pressure_max)
    state = PlantState(alpha, 0.0, float(tau[0]), beta, 0.0, float(tau[1]), *(float(v) for v in p),
                       stiffness_level=float(min(p)))
    return state, dp


@dataclass
class OpenLoopResult:
    t: np.ndarray
    states: np.ndarray

    @property
    def alpha(self):
        return self.states[:, K.S_ALPHA]

    @property
    def beta(self):
        return self.states[:, K.S_BETA]

    @property
    def pressures(self):
        return self.states[:, K.S_PA:K.S_PC + 1]

    def delta(self) -> DeltaRepresentation:
        """Measured Delta Representation of the actuator pressure states."""
        from .allocation import xi_inverse
        p = self.pressures
        return xi_inverse(AbsolutePressures(p[:, 0], p[:, 1], p[:, 2]))


def simulate_open_loop(cfg: PlantConfig, dp_alpha, dp_beta, p_bar, m=None, impulse_torque=None,
                       x0=None) -> OpenLoopResult:
    """Apply Delta Representation setpoint sequences (one per ``cfg.dt``) without
    angle feedback. Sequence ``i`` is held over ``[i dt, (i+1) dt)``."""
    dpa = np.asarray(dp_alpha, dtype=float)
    n = dpa.shape[0]
    dpb = np.broadcast_to(np.asarray(dp_beta, dtype=float), (n,))
    pb = np.broadcast_to(np.asarray(p_bar, dtype=float), (n,))
    ms = np.broadcast_to(np.asarray(cfg.mech.m if m is None else m, dtype=float), (n,)).copy()
    imp = np.zeros(n) if impulse_torque is None else np.broadcast_to(
        np.asarray(impulse_torque, dtype=float), (n,)).copy()
    psp = np.column_stack(xi(DeltaRepresentation(pb, dpa, dpb)))
    psp = np.clip(psp, 0.0, cfg.pressure_max)
    if x0 is None:
        x0 = PlantState.at_rest(float(pb[0]))
    pp, coefs = cfg.pack()
    hist, bad = K.simulate_open_loop(_state_vec(x0), np.ascontiguousarray(psp), ms, imp, pp, coefs, cfg.dt)
    if bad >= 0:
        raise SimulationDivergedError(f"open-loop simulation diverged at step {bad}")
    return OpenLoopResult(np.arange(n + 1) * cfg.dt, hist)

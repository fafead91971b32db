"""Closed-loop rollouts of the full cascade (controller, allocation, inner
pressure loops, arm) over a sampled plan.

Outer samples are ``plan.ts`` apart; the plant is integrated with RK4 at
``PlantConfig.dt`` in between. Tracking errors are aligned one sample
ahead: ``e[k] = r[k + 1] - y[k + 1]`` with the reference held past the end,
so error sample ``k`` is the first output affected by reference sample ``k``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .allocation import DeltaRepresentation
from .control import ControllerParams, feedforward_beta
from .errors import InvalidInputError, SimulationDivergedError
from .plant import PlantConfig, PlantState, equilibrium, radius_from_pbar
from .trajectory import Plan

TRACE_COLUMNS = ("time", "alpha", "beta", "dp_alpha", "dp_beta", "p_bar", "p_a", "p_b", "p_c", "R", "m")


def interleave(a, b) -> np.ndarray:
    """[a0, b0, a1, b1, ...]"""
    return np.column_stack([a, b]).reshape(-1)


def deinterleave(v):
    v = np.asarray(v, dtype=float).reshape(-1, 2)
    return v[:, 0], v[:, 1]


def shifted_reference(plan: Plan) -> np.ndarray:
    """(N, 2) reference one sample ahead, last sample held."""
    ref = plan.reference
    return np.vstack([ref[1:], ref[-1:]])


@dataclass
class RolloutResult:
    plan: Plan
    y: np.ndarray          # (N+1, 2) true angles at the outer samples
    y_meas: np.ndarray     # (N+1, 2) measured angles
    dp_cmd: np.ndarray     # (N, 2) commanded Delta Representation differences
    p_setpoint: np.ndarray  # (N, 3) saturated absolute pressure setpoints
    p_actual: np.ndarray   # (N+1, 3) actuator pressures at the outer samples
    saturated: np.ndarray  # (N,) bool
    status: int            # -1 ok, else first outer sample where the state blew up
    seed: int | None = None

    @property
    def ok(self) -> bool:
        return self.status < 0

    @property
    def error(self) -> np.ndarray:
        """(N, 2) true tracking error, one sample ahead."""
        return shifted_reference(self.plan) - self.y[1:]

    @property
    def error_measured(self) -> np.ndarray:
        """(N, 2) error as seen by the sensor."""
        return shifted_reference(self.plan) - self.y_meas[1:]

    def lifted_error(self, measured: bool = True) -> np.ndarray:
        e = self.error_measured if measured else self.error
        return e.reshape(-1)

    def metrics(self, mask=None, measured: bool = False) -> dict:
        """RMS and max absolute error per axis (rad). ``mask`` selects error samples."""
        e = self.error_measured if measured else self.error
        if mask is not None:
            e = e[np.asarray(mask, dtype=bool)]
        return {"rms_alpha": float(np.sqrt(np.mean(e[:, 0] ** 2))),
                "rms_beta": float(np.sqrt(np.mean(e[:, 1] ** 2))),
                "max_alpha": float(np.max(np.abs(e[:, 0]))),
                "max_beta": float(np.max(np.abs(e[:, 1])))}

    def rms(self, measured: bool = False) -> float:
        e = self.error_measured if measured else self.error
        return float(np.sqrt(np.mean(e**2)))

    def max_error(self, measured: bool = False) -> float:
        e = self.error_measured if measured else self.error
        return float(np.max(np.abs(e)))

    def window_max(self, mask, measured: bool = False) -> tuple:
        """Max |angle error| per axis over outer samples selected by ``mask``
        (indexed like the plan, compared at the same instant)."""
        mask = np.asarray(mask, dtype=bool)
        y = self.y_meas if measured else self.y
        e = self.plan.reference[mask] - y[:-1][mask]
        return float(np.max(np.abs(e[:, 0]))), float(np.max(np.abs(e[:, 1])))

    def write_csv(self, path, seed: int | None = None):
        """Trace CSV: one row per outer sample (the final row repeats the last command)."""
        n = len(self.plan)
        seed = self.seed if seed is None else seed
        radius = radius_from_pbar(np.clip(self.plan.pbar, 1.0, 1.2))
        with open(path, "w", newline="") as fh:
            if seed is not None:
                fh.write(f"# seed={seed}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for k in range(n + 1):
                j = min(k, n - 1)
                row = [k * self.plan.ts, self.y[k, 0], self.y[k, 1], self.dp_cmd[j, 0], self.dp_cmd[j, 1],
                       self.plan.pbar[j], self.p_actual[k, 0], self.p_actual[k, 1], self.p_actual[k, 2],
                       radius[j], self.plan.mass[j]]
                w.writerow([repr(float(v)) for v in row])


def _as_correction(correction, n):
    if correction is None:
        return np.zeros((n, 2))
    c = np.asarray(correction, dtype=float)
    if c.shape == (2 * n,):
        return c.reshape(n, 2)
    if c.shape == (n, 2):
        return c
    raise InvalidInputError(f"correction must have shape ({2 * n},) or ({n}, 2), got {c.shape}")


def measurement_noise(n: int, std: float, seed) -> np.ndarray:
    """(n+1, 2) Gaussian angle noise from ``numpy.random.default_rng(seed)``."""
    if std <= 0:
        return np.zeros((n + 1, 2))
    return np.random.default_rng(seed).normal(0.0, std, size=(n + 1, 2))


def initial_conditions(plan: Plan, plant: PlantConfig, ctrl: ControllerParams, model_joint,
                       initial_mass: float | None = None):
    """Plant at rest on the first setpoint and a controller whose integrator
    already supplies the holding pressure difference."""
    m0 = float(plan.mass[0] if initial_mass is None else initial_mass)
    state, dp = equilibrium(plant, float(plan.alpha[0]), float(plan.beta[0]), float(plan.pbar[0]), m0)
    m_sched = m0 if ctrl.mass_override is None else ctrl.mass_override
    ff = feedforward_beta(float(plan.beta[0]), (float(plan.pbar[0]), m_sched), plant.mech, model_joint) \
        if ctrl.feedforward else 0.0
    cs = np.zeros(6)
    cs[0] = np.clip(dp[0], -ctrl.integrator_limit, ctrl.integrator_limit)
    cs[1] = np.clip(dp[1] - ff, -ctrl.integrator_limit, ctrl.integrator_limit)
    return state.to_vector(), cs


def simulate_closed_loop(plan: Plan, plant: PlantConfig, ctrl: ControllerParams | None = None,
                         correction=None, seed=None, model_joint=None, initial_mass: float | None = None,
                         noise: bool = True, x0=None, cs0=None, raise_on_divergence: bool = False) -> RolloutResult:
    """Roll the cascade over ``plan``.

    ``correction`` is the serial learning signal (2N interleaved or (N, 2),
    rad) added to the reference fed to the controller. ``model_joint`` is the
    parameter set the controller schedules with (default: the plant's own).
    ``initial_mass`` sets the mass of the initial equilibrium when the arm
    enters the plan carrying a different load.
    """
    n = len(plan)
    if n < 1:
        raise InvalidInputError("empty plan")
    sub = plan.ts / plant.dt
    n_sub = int(round(sub))
    if n_sub < 1 or not math.isclose(n_sub, sub, rel_tol=0, abs_tol=1e-9):
        raise InvalidInputError("outer sample time must be an integer multiple of the plant step")
    ctrl = ctrl or ControllerParams.default(plant.joint, ts=plan.ts)
    if not math.isclose(ctrl.ts, plan.ts):
        raise InvalidInputError("controller sample time differs from the plan")
    model_joint = model_joint or plant.joint
    u = _as_correction(correction, n)

    x_init, cs_init = initial_conditions(plan, plant, ctrl, model_joint, initial_mass)
    if x0 is not None:
        x_init = x0.to_vector() if isinstance(x0, PlantState) else np.asarray(x0, dtype=float)
    if cs0 is not None:
        cs_init = np.asarray(cs0, dtype=float)

    ref = np.ascontiguousarray(plan.reference + u)
    m_ctrl = plan.mass if ctrl.mass_override is None else np.full(n, float(ctrl.mass_override))
    eject = plan.eject
    imp = np.zeros(n)
    if eject.any() and plant.dist.deposit_impulse > 0:
        imp[eject] = plant.dist.deposit_impulse / (eject.sum() * plan.ts)
    w = measurement_noise(n, plant.dist.noise_std, seed) if noise else np.zeros((n + 1, 2))

    pp, coefs = plant.pack()
    cp = ctrl.pack(plant.mech)
    y, ym, dp_cmd, psp, pact, sat, _, _, status = K.rollout(
        np.ascontiguousarray(x_init), np.ascontiguousarray(cs_init), pp, coefs, cp, model_joint.coef_array(),
        ref, np.ascontiguousarray(plan.beta), np.ascontiguousarray(plan.pbar),
        np.ascontiguousarray(plan.mass), np.ascontiguousarray(m_ctrl), imp, w, n_sub, plant.dt)
    result = RolloutResult(plan, y, ym, dp_cmd, psp, pact, sat.astype(bool), int(status), seed)
    if raise_on_divergence and not result.ok:
        raise SimulationDivergedError(f"rollout diverged at outer sample {status}")
    return result


def delta_of_setpoints(result: RolloutResult) -> DeltaRepresentation:
    """Delta Representation of the applied pressure setpoints."""
    from .allocation import AbsolutePressures, xi_inverse
    p = result.p_setpoint
    return xi_inverse(AbsolutePressures(p[:, 0], p[:, 1], p[:, 2]))


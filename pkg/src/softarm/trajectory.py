"""Reference generation: minimum-jerk transitions, the three-phase
pick-and-place plan with stiffness ramp, mass schedule and gripper events.

Plans are sampled at the outer controller rate. Sample ``k`` sits at
``t = k * ts`` and is held until the next one.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields

import numpy as np

from .allocation import PBAR_MAX, PBAR_MIN
from .errors import InvalidInputError

EVENT_NONE = 0
EVENT_GRIP = 1
EVENT_EJECT = 2

PLAN_COLUMNS = ("time", "alpha", "beta", "dp_alpha", "dp_beta", "p_bar",
                "p_a", "p_b", "p_c", "R", "m", "event", "phase")


def min_jerk(s):
    """Normalised quintic 10 s^3 - 15 s^4 + 6 s^5 on s in [0, 1] (clipped outside)."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    return s**3 * (10.0 + s * (-15.0 + 6.0 * s))


def min_jerk_rate(s):
    """d/ds of :func:`min_jerk`; peaks at 15/8 for s = 1/2."""
    s = np.asarray(s, dtype=float)
    inside = (s >= 0.0) & (s <= 1.0)
    return np.where(inside, 30.0 * s**2 * (1.0 - s) ** 2, 0.0)


def _samples(duration: float, ts: float) -> int:
    n = round(duration / ts)
    if not math.isclose(n * ts, duration, rel_tol=0.0, abs_tol=1e-9):
        raise InvalidInputError(f"duration {duration} s is not a multiple of ts = {ts} s")
    return int(n)


def smooth_transition(start: float, end: float, duration: float, ts: float) -> np.ndarray:
    """Minimum-jerk segment from ``start`` to ``end`` sampled at ``ts``.

    Returns ``round(duration / ts) + 1`` samples, both endpoints included.
    Boundary velocity and acceleration are zero.
    """
    if not (ts > 0) or not (duration >= 2 * ts - 1e-12):
        raise InvalidInputError("transition needs duration >= 2 ts and ts > 0")
    n = _samples(duration, ts)
    s = np.arange(n + 1) / n
    return start + (end - start) * min_jerk(s)


def _profile(t, start, end, t0, duration):
    """Hold ``start`` before ``t0``, blend to ``end`` over ``duration``."""
    if duration <= 0:
        return np.where(t < t0, start, end).astype(float)
    return start + (end - start) * min_jerk((t - t0) / duration)


def _bump(t, t0, duration, height):
    """64 s^3 (1 - s)^3 clearance bump: zero with zero slope at both ends, ``height`` at s = 1/2."""
    if duration <= 0 or height == 0:
        return np.zeros_like(t)
    s = np.clip((t - t0) / duration, 0.0, 1.0)
    return height * 64.0 * s**3 * (1.0 - s) ** 3


@dataclass(frozen=True)
class PhaseSpec:
    """One phase of a pick-and-place period.

    The angle transition starts ``transition_start`` seconds into the phase
    and lasts ``transition_time``; the p_bar ramp is described the same way.
    ``eject_window`` > 0 marks the first seconds of the phase as the
    ejection window (mass drops to zero at its first sample).
    """

    phase: str
    duration: float
    alpha: tuple = (0.0, 0.0)
    beta: tuple = (0.0, 0.0)
    transition_start: float = 0.0
    transition_time: float = 0.0
    pbar: tuple = (PBAR_MAX, PBAR_MAX)
    pbar_ramp_start: float = 0.0
    pbar_rise: float = 0.0
    mass: float = 0.0
    beta_bump: float = 0.0
    eject_window: float = 0.0
    grip_at_end: bool = False

    def __post_init__(self):
        if self.phase not in ("I", "II", "III"):
            raise InvalidInputError(f"unknown phase id {self.phase!r}")
        if not self.duration > 0:
            raise InvalidInputError("phase duration must be > 0")
        lim = math.radians(75.0)
        for v in (*self.alpha, *self.beta):
            if abs(v) > lim + 1e-12:
                raise InvalidInputError(f"setpoint {math.degrees(v):.2f} deg outside +-75 deg")
        if self.transition_start + self.transition_time > self.duration + 1e-9:
            raise InvalidInputError("transition does not fit inside the phase")
        if self.pbar_ramp_start + self.pbar_rise > self.duration + 1e-9:
            raise InvalidInputError("p_bar ramp does not fit inside the phase")
        if self.mass < 0:
            raise InvalidInputError("mass must be >= 0")


@dataclass
class Plan:
    """Sampled references for one rollout (the pick-and-place plan or any
    other experiment reference)."""

    ts: float
    alpha: np.ndarray
    beta: np.ndarray
    pbar: np.ndarray
    mass: np.ndarray
    event: np.ndarray = None
    phase: np.ndarray = None
    boundaries: tuple = ()

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        n = self.alpha.shape[0]
        self.beta = np.broadcast_to(np.asarray(self.beta, dtype=float), (n,)).copy()
        self.pbar = np.broadcast_to(np.asarray(self.pbar, dtype=float), (n,)).copy()
        self.mass = np.broadcast_to(np.asarray(self.mass, dtype=float), (n,)).copy()
        self.event = np.zeros(n, dtype=np.int64) if self.event is None else np.asarray(self.event, dtype=np.int64)
        self.phase = np.zeros(n, dtype=np.int64) if self.phase is None else np.asarray(self.phase, dtype=np.int64)
        if not self.boundaries:
            self.boundaries = (0, n)

    def __len__(self):
        return self.alpha.shape[0]

    @property
    def n(self) -> int:
        return len(self)

    @property
    def time(self) -> np.ndarray:
        return np.arange(len(self)) * self.ts

    @property
    def duration(self) -> float:
        return len(self) * self.ts

    @property
    def reference(self) -> np.ndarray:
        """(N, 2) angle setpoints."""
        return np.column_stack([self.alpha, self.beta])

    @property
    def eject(self) -> np.ndarray:
        """Boolean mask of the ejection-window samples."""
        return self.event == EVENT_EJECT

    def window(self, name: str) -> np.ndarray:
        if name == "eject":
            return self.eject
        idx = {"I": 1, "II": 2, "III": 3}[name]
        return self.phase == idx

    def slice(self, start: int, stop: int) -> "Plan":
        return Plan(self.ts, self.alpha[start:stop], self.beta[start:stop], self.pbar[start:stop],
                    self.mass[start:stop], self.event[start:stop], self.phase[start:stop])

    def equals(self, other: "Plan") -> bool:
        return (self.ts == other.ts and len(self) == len(other)
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in ("alpha", "beta", "pbar", "mass", "event", "phase")))


PickPlacePlan = Plan


def build_phase(spec: PhaseSpec, ts: float) -> Plan:
    """Sample one phase. Local time runs ``0, ts, ..., duration - ts``."""
    n = _samples(spec.duration, ts)
    t = np.arange(n) * ts
    alpha = _profile(t, spec.alpha[0], spec.alpha[1], spec.transition_start, spec.transition_time)
    beta = _profile(t, spec.beta[0], spec.beta[1], spec.transition_start, spec.transition_time)
    beta = beta + _bump(t, spec.transition_start, spec.transition_time, spec.beta_bump)
    pbar = _profile(t, spec.pbar[0], spec.pbar[1], spec.pbar_ramp_start, spec.pbar_rise)
    mass = np.full(n, float(spec.mass))
    event = np.zeros(n, dtype=np.int64)
    if spec.eject_window > 0:
        w = _samples(spec.eject_window, ts)
        event[:w] = EVENT_EJECT
    phase = np.full(n, {"I": 1, "II": 2, "III": 3}[spec.phase], dtype=np.int64)
    return Plan(ts, alpha, beta, pbar, mass, event, phase)


def build_pick_phase(spec: PhaseSpec, ts: float) -> Plan:
    """Constant angles while p_bar ramps; the grip happens at the phase end."""
    if spec.alpha[0] != spec.alpha[1] or spec.beta[0] != spec.beta[1] or spec.transition_time:
        raise InvalidInputError("pick phase holds the angles constant")
    return build_phase(spec, ts)


def concatenate(parts) -> Plan:
    parts = list(parts)
    ts = parts[0].ts
    if any(p.ts != ts for p in parts):
        raise InvalidInputError("segments use different sample times")
    bounds = np.cumsum([0] + [len(p) for p in parts])
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
    event = cat("event")
    mass = cat("mass")
    # a mass increase at a boundary is the grip
    for b in bounds[1:-1]:
        if mass[b] > mass[b - 1] and event[b] == EVENT_NONE:
            event[b] = EVENT_GRIP
    return Plan(ts, cat("alpha"), cat("beta"), cat("pbar"), mass, event, cat("phase"),
                boundaries=tuple(int(b) for b in bounds))


@dataclass(frozen=True)
class PickPlaceConfig:
    """Timing and geometry of one pick-and-place period (angles in degrees)."""

    ts: float = 0.02
    period: float = 2.78
    alpha_pick: float = -30.0
    alpha_place: float = 30.0
    beta_level: float = 0.0
    beta_clearance: float = 8.0
    pbar_min: float = PBAR_MIN
    pbar_max: float = PBAR_MAX
    m_load: float = 0.2
    pick_duration: float = 1.0
    pbar_ramp_start: float = 0.3
    pbar_rise: float = 0.2
    carry_transition: float = 0.6
    carry_dwell: float = 0.28
    eject_window: float = 0.1
    return_transition: float = 0.3
    return_dwell: float = 0.5

    def phases(self) -> list:
        a0, a1 = math.radians(self.alpha_pick), math.radians(self.alpha_place)
        b = math.radians(self.beta_level)
        pick = PhaseSpec("I", self.pick_duration, (a0, a0), (b, b), pbar=(self.pbar_min, self.pbar_max),
                         pbar_ramp_start=self.pbar_ramp_start, pbar_rise=self.pbar_rise, grip_at_end=True)
        carry = PhaseSpec("II", self.carry_transition + self.carry_dwell, (a0, a1), (b, b),
                          transition_time=self.carry_transition, pbar=(self.pbar_max, self.pbar_max),
                          mass=self.m_load, beta_bump=math.radians(self.beta_clearance))
        ret = PhaseSpec("III", self.eject_window + self.return_transition + self.return_dwell, (a1, a0), (b, b),
                        transition_start=self.eject_window, transition_time=self.return_transition,
                        pbar=(self.pbar_max, self.pbar_max), eject_window=self.eject_window)
        return [pick, carry, ret]

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown trajectory keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})


def build_pick_place_plan(config: PickPlaceConfig | None = None) -> Plan:
    """Phases I (pick with p_bar ramp), II (carry m_load) and III (eject, return)."""
    config = config or PickPlaceConfig()
    phases = config.phases()
    total = sum(p.duration for p in phases)
    if not math.isclose(total, config.period, abs_tol=1e-9):
        raise InvalidInputError(f"phase durations sum to {total} s, expected {config.period} s")
    plan = concatenate([build_pick_phase(phases[0], config.ts)]
                       + [build_phase(p, config.ts) for p in phases[1:]])
    validate_plan(plan)
    return plan


def build_transition_plan(start_deg: float = -30.0, end_deg: float = 30.0, transition: float = 0.3,
                          hold_before: float = 0.2, hold_after: float = 0.5, ts: float = 0.02,
                          p_bar: float = 1.1, m: float = 0.0, beta_deg: float = 0.0) -> Plan:
    """Single alpha transition at constant p_bar and mass (beta held)."""
    n = _samples(hold_before + transition + hold_after, ts)
    t = np.arange(n) * ts
    alpha = _profile(t, math.radians(start_deg), math.radians(end_deg), hold_before, transition)
    return Plan(ts, alpha, math.radians(beta_deg), p_bar, m)


def build_step_plan(alpha_deg=(0.0, 10.0, -5.0, 5.0), beta_deg=(0.0, -5.0, 7.5, 0.0), hold: float = 1.0,
                    ts: float = 0.02, p_bar: float = 1.1, m: float = 0.0) -> Plan:
    """Piecewise-constant multi-step reference, each level held for ``hold`` s."""
    if len(alpha_deg) != len(beta_deg):
        raise InvalidInputError("alpha and beta step lists differ in length")
    n = _samples(hold, ts)
    alpha = np.repeat(np.radians(alpha_deg), n)
    beta = np.repeat(np.radians(beta_deg), n)
    return Plan(ts, alpha, beta, p_bar, m)


def validate_plan(plan: Plan, max_angle_step: float = math.radians(10.0), max_pbar_step: float = 0.05,
                  angle_limit: float = math.radians(75.0), pbar_range=(PBAR_MIN, PBAR_MAX)) -> None:
    """Raise :class:`InvalidInputError` listing the offending samples."""
    problems = []

    def report(what, mask):
        idx = np.flatnonzero(mask)
        if idx.size:
            problems.append(f"{what} at samples {idx[:10].tolist()}{' ...' if idx.size > 10 else ''}")

    for name in ("alpha", "beta"):
        v = getattr(plan, name)
        report(f"{name} non-finite", ~np.isfinite(v))
        report(f"{name} outside +-{math.degrees(angle_limit):.0f} deg", np.abs(v) > angle_limit)
        report(f"{name} jump > {math.degrees(max_angle_step):.1f} deg",
               np.r_[False, np.abs(np.diff(v)) > max_angle_step])
    report("p_bar outside admissible range", (plan.pbar < pbar_range[0] - 1e-12) | (plan.pbar > pbar_range[1] + 1e-12))
    report("p_bar jump", np.r_[False, np.abs(np.diff(plan.pbar)) > max_pbar_step])
    report("negative mass", plan.mass < 0)
    changed = np.r_[False, plan.mass[1:] != plan.mass[:-1]]
    marked = plan.event != EVENT_NONE
    first_eject = np.r_[plan.event[:1] == EVENT_EJECT, (plan.event[1:] == EVENT_EJECT) & (plan.event[:-1] != EVENT_EJECT)]
    report("mass change without grip/eject marker", changed & ~(marked & ((plan.event == EVENT_GRIP) | first_eject)))
    grips = np.flatnonzero(plan.event == EVENT_GRIP)
    ejects = np.flatnonzero(first_eject)
    if grips.size and ejects.size and not grips[0] < ejects[0]:
        problems.append(f"grip (sample {grips[0]}) must precede eject (sample {ejects[0]})")
    if ejects.size and not grips.size:
        problems.append("eject without a preceding grip")
    if problems:
        raise InvalidInputError("invalid plan: " + "; ".join(problems))


def write_plan_csv(plan: Plan, path, seed: int | None = None) -> None:
    """Plan rows in the plant's column schema plus an ``event`` column."""
    from .allocation import DeltaRepresentation, xi
    from .plant import radius_from_pbar

    p = xi(DeltaRepresentation(plan.pbar, np.zeros(len(plan)), np.zeros(len(plan))))
    radius = radius_from_pbar(np.clip(plan.pbar, PBAR_MIN, PBAR_MAX))
    with open(path, "w", newline="") as fh:
        if seed is not None:
            fh.write(f"# seed={seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLAN_COLUMNS)
        for k in range(len(plan)):
            w.writerow([repr(float(plan.time[k])), repr(float(plan.alpha[k])), repr(float(plan.beta[k])), "0.0", "0.0",
                        repr(float(plan.pbar[k])), repr(float(p[0][k])), repr(float(p[1][k])), repr(float(p[2][k])),
                        repr(float(radius[k])), repr(float(plan.mass[k])), int(plan.event[k]), int(plan.phase[k])])


def read_plan_csv(path) -> Plan:
    """Inverse of :func:`write_plan_csv`; ``event`` may be absent (grips and
    ejects are then inferred from mass increases and decreases)."""
    with open(path, newline="") as fh:
        rows = [r for r in fh if not r.startswith("#")]
    reader = csv.DictReader(rows)
    missing = {"time", "alpha", "beta", "p_bar", "m"} - set(reader.fieldnames or ())
    if missing:
        raise InvalidInputError(f"plan CSV lacks columns {sorted(missing)}")
    data = list(reader)
    if len(data) < 2:
        raise InvalidInputError("plan CSV needs at least two rows")
    col = lambda name: np.array([float(r[name]) for r in data])
    t = col("time")
    ts = float(np.round(t[1] - t[0], 12))
    if not np.allclose(np.diff(t), ts, rtol=0, atol=1e-9):
        raise InvalidInputError("plan CSV time column is not uniformly sampled")
    mass = col("m")
    if "event" in reader.fieldnames:
        event = np.array([int(float(r["event"])) for r in data], dtype=np.int64)
    else:
        event = np.zeros(len(data), dtype=np.int64)
        step = np.r_[0.0, np.diff(mass)]
        event[step > 0] = EVENT_GRIP
        event[step < 0] = EVENT_EJECT
    phase = None
    bounds = ()
    if "phase" in reader.fieldnames:
        phase = np.array([int(float(r["phase"])) for r in data], dtype=np.int64)
        cuts = np.flatnonzero(np.diff(phase)) + 1
        bounds = (0, *(int(c) for c in cuts), len(data))
    plan = Plan(ts, col("alpha"), col("beta"), col("p_bar"), mass, event, phase, bounds)
    validate_plan(plan)
    return plan

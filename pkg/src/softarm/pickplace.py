"""Pick-and-place workflow: per-phase learning, warm-start concatenation,
joint training over the full period and repeated noisy trials."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .control import ControllerParams
from .ilc import IlcHistory, IlcWeights, phase_windows, run_ilc, warm_start_concatenate
from .plant import PlantConfig
from .simulation import simulate_closed_loop
from .trajectory import Plan

PHASE_LEAD = 10
EJECT_THRESHOLD_DEG = 1.0


def train_phases(plan: Plan, plant: PlantConfig, iterations: int = 25, lead: int = PHASE_LEAD,
                 weights_scale: dict | None = None, seed: int = 0, ctrl: ControllerParams | None = None):
    """Learn each phase on its own, starting ``lead`` samples early.

    Each phase rollout starts at rest on its first setpoint with the mass of
    that sample. Returns ``(histories, starts)``.
    """
    histories, starts = [], []
    for i, (start, stop) in enumerate(phase_windows(plan.boundaries, lead)):
        sub = plan.slice(start, stop)
        weights = IlcWeights.scaled(len(sub), **weights_scale) if weights_scale else None
        histories.append(run_ilc(sub, plant, weights, iterations, ctrl=ctrl, seed=seed + 1000 * i))
        starts.append(start)
    return histories, starts


def warm_start(plan: Plan, histories, starts) -> np.ndarray:
    return warm_start_concatenate([h.final_u for h in histories], plan.boundaries, starts)


@dataclass
class TrialReport:
    seed: int
    eject_max_alpha: float
    eject_max_beta: float
    threshold: float

    @property
    def success(self) -> bool:
        return self.eject_max_alpha <= self.threshold and self.eject_max_beta <= self.threshold


def evaluate_trials(plan: Plan, plant: PlantConfig, u, trials: int = 50, seed: int = 0,
                    threshold_deg: float = EJECT_THRESHOLD_DEG, ctrl: ControllerParams | None = None):
    """Noisy rollouts with a fixed correction; success means the measured
    per-axis error stays within ``threshold_deg`` over the eject window."""
    thr = math.radians(threshold_deg)
    reports = []
    for i in range(trials):
        r = simulate_closed_loop(plan, plant, ctrl, correction=u, seed=seed + i)
        if not r.ok:
            reports.append(TrialReport(seed + i, math.inf, math.inf, thr))
            continue
        a, b = r.window_max(plan.eject, measured=True)
        reports.append(TrialReport(seed + i, a, b, thr))
    return reports


@dataclass
class PickPlaceResult:
    phase_histories: list
    warm_u: np.ndarray
    joint: IlcHistory
    trials: list = field(default_factory=list)

    @property
    def successes(self) -> int:
        return sum(t.success for t in self.trials)


def run_pickplace(plan: Plan, plant: PlantConfig, phase_iterations: int = 25, joint_iterations: int = 34,
                  trials: int = 50, seed: int = 0, warm_u=None, cold: bool = False,
                  threshold_deg: float = EJECT_THRESHOLD_DEG, weights_scale: dict | None = None,
                  ctrl: ControllerParams | None = None) -> PickPlaceResult:
    """Per-phase learning (unless ``warm_u`` is given or ``cold``), joint
    training from the warm start, then ``trials`` evaluation rollouts."""
    histories = []
    if cold:
        warm_u = np.zeros(2 * len(plan))
    elif warm_u is None:
        histories, starts = train_phases(plan, plant, phase_iterations, weights_scale=weights_scale,
                                         seed=seed, ctrl=ctrl)
        warm_u = warm_start(plan, histories, starts)
    weights = IlcWeights.scaled(len(plan), **weights_scale) if weights_scale else None
    joint = run_ilc(plan, plant, weights, joint_iterations, initial_u=warm_u, ctrl=ctrl, seed=seed + 10_000)
    result = PickPlaceResult(histories, np.asarray(warm_u, dtype=float), joint)
    if not joint.failed and trials:
        result.trials = evaluate_trials(plan, plant, joint.final_u, trials, seed + 20_000, threshold_deg, ctrl)
    return result

"""Norm-optimal iterative learning control in the serial architecture.

Lifted signals interleave the axes, ``[a(0), b(0), a(1), b(1), ...]``. The
learned signal ``u`` is an angle offset added to the reference before the
feedback controller. One iteration minimises

    1/2 [ e'^T W_e e' + (u' - u)^T W_du (u' - u) + u'^T D^T W_ud D u' ]

with the predicted next error ``e' = e - P (u' - u)``, giving
``u' = Q u + L e``.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, block_diag, cho_factor, cho_solve, expm

from .control import NOMINAL_PBAR, ControllerParams
from .errors import ConditioningError, InvalidInputError
from .plant import JointParameters, PlantConfig
from .simulation import RolloutResult, simulate_closed_loop
from .trajectory import Plan

HISTORY_COLUMNS = ("iteration", "RMS_alpha", "RMS_beta", "max_alpha", "max_beta")


def c2d_zoh(A, B, ts: float):
    """Exact zero-order-hold discretisation via the augmented matrix exponential."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n, m = B.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A * ts
    aug[:n, n:] = B * ts
    try:
        E = expm(aug)
    except (LinAlgError, ValueError) as exc:  # pragma: no cover - scipy rarely raises here
        raise ConditioningError(f"matrix exponential failed: {exc}") from exc
    if not np.all(np.isfinite(E)):
        raise ConditioningError("matrix exponential is not finite", float(np.linalg.norm(aug, 1)))
    return E[:n, :n], E[:n, n:]


def closed_loop_state_space(T: float, kappa_eta: float):
    """(A, B, C) of kappa*eta / (T s^2 + s + kappa*eta) with states (y, dy/dt)."""
    A = np.array([[0.0, 1.0], [-kappa_eta / T, -1.0 / T]])
    B = np.array([[0.0], [kappa_eta / T]])
    C = np.array([[1.0, 0.0]])
    return A, B, C


@dataclass
class LiftedSystem:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    N: int
    ts: float
    P: np.ndarray = None

    def __post_init__(self):
        if self.P is None:
            self.P = build_lifted_matrix(self.A, self.B, self.C, self.N)


def nominal_lifted_system(N: int, ts: float = 0.02, ctrl: ControllerParams | None = None,
                          joint: JointParameters | None = None, p_bar: float = NOMINAL_PBAR) -> LiftedSystem:
    """Block-diagonal model of both closed-loop axes at ``p_bar``, ZOH-discretised at ``ts``."""
    joint = joint or JointParameters.default()
    ctrl = ctrl or ControllerParams.default(joint, ts=ts)
    blocks = []
    for ax, kappa in zip((joint.alpha, joint.beta), ctrl.kappa):
        _, _, eta, T = (float(v) for v in ax.evaluate(p_bar))
        A, B, C = closed_loop_state_space(T, kappa * eta)
        Ad, Bd = c2d_zoh(A, B, ts)
        blocks.append((Ad, Bd, C))
    A = block_diag(blocks[0][0], blocks[1][0])
    B = block_diag(blocks[0][1], blocks[1][1])
    C = block_diag(blocks[0][2], blocks[1][2])
    return LiftedSystem(A, B, C, N, ts)


def build_lifted_matrix(A, B, C, N: int) -> np.ndarray:
    """Lower block-Toeplitz matrix of the Markov parameters C A^i B."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if N < 1:
        raise InvalidInputError("horizon N must be >= 1")
    if A.shape[0] and np.max(np.abs(np.linalg.eigvals(A))) >= 1.0:
        warnings.warn("A is not Schur-stable; lifted matrix grows along the horizon", stacklevel=2)
    p, m = C.shape[0], B.shape[1]
    markov = np.empty((N, p, m))
    x = B.copy()
    for i in range(N):
        markov[i] = C @ x
        x = A @ x
    P = np.zeros((N * p, N * m))
    for r in range(N):
        for c in range(r + 1):
            P[r * p:(r + 1) * p, c * m:(c + 1) * m] = markov[r - c]
    return P


def build_derivative_operator(N: int, ts: float, channels: int = 2) -> np.ndarray:
    """(1/ts) * Dtilde (x) I: forward differences, last block row zero."""
    if N < 1 or not ts > 0:
        raise InvalidInputError("need N >= 1 and ts > 0")
    Dt = -np.eye(N) + np.eye(N, k=1)
    Dt[-1, :] = 0.0
    return np.kron(Dt, np.eye(channels)) / ts


@dataclass
class IlcWeights:
    W_e: np.ndarray
    W_du: np.ndarray
    W_ud: np.ndarray

    def __post_init__(self):
        shapes = {np.shape(w) for w in (self.W_e, self.W_du, self.W_ud)}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2 or self.W_e.shape[0] != self.W_e.shape[1]:
            raise InvalidInputError("weights must be square matrices of one size")
        for name, w in (("W_e", self.W_e), ("W_du", self.W_du), ("W_ud", self.W_ud)):
            if not np.allclose(w, w.T, rtol=0, atol=1e-12 * max(1.0, np.abs(w).max())):
                raise InvalidInputError(f"{name} must be symmetric")
        tol = 1e-12
        if np.linalg.eigvalsh(self.W_e).min() < -tol or np.linalg.eigvalsh(self.W_ud).min() < -tol:
            raise InvalidInputError("W_e and W_ud must be positive semidefinite")
        try:
            np.linalg.cholesky(self.W_du)
        except np.linalg.LinAlgError:
            raise InvalidInputError("W_du must be positive definite") from None

    @property
    def size(self) -> int:
        return self.W_e.shape[0]

    @classmethod
    def scaled(cls, N: int, w_e: float = 1.0, w_du: float = 1e-2, w_ud: float = 1e-6, channels: int = 2):
        n = channels * N
        return cls(w_e * np.eye(n), w_du * np.eye(n), w_ud * np.eye(n))


DEFAULT_WEIGHTS = {"w_e": 1.0, "w_du": 1e-2, "w_ud": 1e-6}


def compute_gains(P, weights: IlcWeights, D=None, ts: float | None = None):
    """Closed-form (Q, L) via a Cholesky factorisation of
    H = P^T W_e P + W_du + D^T W_ud D.

    Q is formed as I - H^{-1} D^T W_ud D, which equals
    H^{-1}(P^T W_e P + W_du) and is exactly the identity when W_ud = 0.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    if P.shape != (n, n) or weights.size != n:
        raise InvalidInputError("P and the weights must share one square size")
    if D is None:
        if ts is None:
            raise InvalidInputError("pass the derivative operator or the sample time")
        D = build_derivative_operator(n // 2, ts)
    R = D.T @ weights.W_ud @ D
    H = P.T @ weights.W_e @ P + weights.W_du + R
    try:
        factor = cho_factor(H, lower=True, check_finite=True)
    except (LinAlgError, ValueError):
        raise ConditioningError("cost Hessian is not positive definite", float(np.linalg.cond(H))) from None
    L = cho_solve(factor, P.T @ weights.W_e)
    if np.any(R):
        Q = np.eye(n) - cho_solve(factor, R)
    else:
        Q = np.eye(n)
    return Q, L


@dataclass
class IlcIterate:
    iteration: int
    u: np.ndarray
    e: np.ndarray
    metrics: dict
    true_metrics: dict = field(default_factory=dict)


def lifted_metrics(e) -> dict:
    a, b = np.asarray(e, dtype=float).reshape(-1, 2).T
    return {"rms_alpha": float(np.sqrt(np.mean(a**2))), "rms_beta": float(np.sqrt(np.mean(b**2))),
            "max_alpha": float(np.max(np.abs(a))), "max_beta": float(np.max(np.abs(b)))}


def ilc_update(iterate: IlcIterate, gains) -> np.ndarray:
    """u^{j+1} = Q u^j + L e^j."""
    Q, L = gains
    u = np.asarray(iterate.u, dtype=float)
    e = np.asarray(iterate.e, dtype=float)
    if u.ndim != 1 or e.shape != u.shape or Q.shape != (u.size, u.size) or L.shape != (u.size, e.size):
        raise InvalidInputError("dimension mismatch between iterate and gains")
    return Q @ u + L @ e


@dataclass
class IlcHistory:
    iterates: list = field(default_factory=list)
    failed: bool = False
    failure: str = ""
    stopped_early: bool = False
    last_rollout: RolloutResult | None = None

    @property
    def final_u(self) -> np.ndarray:
        return self.iterates[-1].u

    def rms(self) -> np.ndarray:
        """Combined RMS over both axes per iteration."""
        return np.array([math.sqrt(0.5 * (it.metrics["rms_alpha"] ** 2 + it.metrics["rms_beta"] ** 2))
                         for it in self.iterates])

    def max_error(self) -> np.ndarray:
        return np.array([max(it.metrics["max_alpha"], it.metrics["max_beta"]) for it in self.iterates])

    def write_csv(self, path, seed: int | None = None):
        """Per-iteration metrics in degrees."""
        with open(path, "w", newline="") as fh:
            if seed is not None:
                fh.write(f"# seed={seed}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for it in self.iterates:
                m = it.metrics
                w.writerow([it.iteration] + [repr(math.degrees(m[k])) for k in
                                             ("rms_alpha", "rms_beta", "max_alpha", "max_beta")])


def plateaued(rms, window: int = 3, rel: float = 0.01) -> bool:
    """True when RMS improved by less than ``rel`` over the last ``window`` iterations."""
    rms = np.asarray(rms, dtype=float)
    if rms.size <= window:
        return False
    return bool(rms[-1] > rms[-1 - window] * (1.0 - rel))


def run_ilc(plan: Plan, plant: PlantConfig, weights: IlcWeights | None = None, iterations: int = 25,
            initial_u=None, ctrl: ControllerParams | None = None, seed: int = 0,
            system: LiftedSystem | None = None, gains=None, plateau_stop: bool = False,
            initial_mass: float | None = None, model_joint: JointParameters | None = None) -> IlcHistory:
    """Roll out ``iterations`` trials, learning between them.

    Iteration ``j`` uses measurement-noise seed ``seed + j``. The lifted
    model is the nominal closed loop at p_bar = 1.10 bar unless ``system`` or
    ``gains`` are given. A diverging rollout ends the run with
    ``failed = True``.
    """
    N = len(plan)
    ctrl = ctrl or ControllerParams.default(model_joint or plant.joint, ts=plan.ts)
    if gains is None:
        system = system or nominal_lifted_system(N, plan.ts, ctrl, model_joint or plant.joint)
        if system.N != N:
            raise InvalidInputError(f"lifted system horizon {system.N} differs from plan length {N}")
        weights = weights or IlcWeights.scaled(N, **DEFAULT_WEIGHTS)
        gains = compute_gains(system.P, weights, ts=plan.ts)
    u = np.zeros(2 * N) if initial_u is None else np.asarray(initial_u, dtype=float).copy()
    if u.shape != (2 * N,):
        raise InvalidInputError(f"initial correction must have length {2 * N}")
    history = IlcHistory()
    for j in range(iterations):
        r = simulate_closed_loop(plan, plant, ctrl, correction=u, seed=seed + j,
                                 initial_mass=initial_mass, model_joint=model_joint)
        history.last_rollout = r
        if not r.ok:
            history.failed = True
            history.failure = f"rollout diverged at iteration {j}, outer sample {r.status}"
            break
        e = r.lifted_error(measured=True)
        history.iterates.append(IlcIterate(j, u, e, lifted_metrics(e), r.metrics()))
        if plateau_stop and plateaued(history.rms()):
            history.stopped_early = True
            break
        u = ilc_update(history.iterates[-1], gains)
    return history


def warm_start_concatenate(signals, boundaries, starts=None) -> np.ndarray:
    """Truncate each phase's learned signal to its window and join them in order.

    ``boundaries`` are sample indices ``(0, n1, n1 + n2, ...)``. Signal ``i``
    begins at plan sample ``starts[i]`` (default: its own boundary); a
    signal trained with a lead-in (``starts[i] < boundaries[i]``) loses the
    lead-in samples and anything past its window.
    """
    bounds = [int(b) for b in boundaries]
    signals = [np.asarray(s, dtype=float).reshape(-1) for s in signals]
    if len(bounds) != len(signals) + 1 or bounds[0] != 0 or any(b1 <= b0 for b0, b1 in zip(bounds, bounds[1:])):
        raise InvalidInputError("boundaries must start at 0, increase, and bracket every signal")
    starts = bounds[:-1] if starts is None else [int(s) for s in starts]
    if len(starts) != len(signals) or any(s > b for s, b in zip(starts, bounds)):
        raise InvalidInputError("each signal must start at or before its phase boundary")
    out = []
    for s, st, b0, b1 in zip(signals, starts, bounds, bounds[1:]):
        lo, hi = 2 * (b0 - st), 2 * (b1 - st)
        if s.size < hi or s.size % 2:
            raise InvalidInputError(f"signal of length {s.size} cannot fill a window of {b1 - b0} samples")
        out.append(s[lo:hi])
    return np.concatenate(out)


def phase_windows(boundaries, lead: int = 0):
    """(start, stop) training windows: each phase plus ``lead`` samples of the one before."""
    b = [int(x) for x in boundaries]
    return [(max(b0 - lead, 0), b1) for b0, b1 in zip(b, b[1:])]


def save_correction(path, u, ts: float, seed: int | None = None, start: int = 0):
    """CSV with columns sample, time, u_alpha, u_beta (rad). ``sample`` is the
    plan sample index, so a signal trained on a window records where it starts."""
    u = np.asarray(u, dtype=float).reshape(-1, 2)
    with open(path, "w", newline="") as fh:
        if seed is not None:
            fh.write(f"# seed={seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("sample", "time", "u_alpha", "u_beta"))
        for k, (a, b) in enumerate(u, start=start):
            w.writerow([k, repr(k * ts), repr(float(a)), repr(float(b))])


def load_correction(path):
    """``(u, start)``: the interleaved correction and its first plan sample."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(r for r in fh if not r.startswith("#")))
    if not rows or not {"sample", "u_alpha", "u_beta"} <= set(rows[0]):
        raise InvalidInputError(f"{path} is not a correction file")
    samples = [int(r["sample"]) for r in rows]
    if samples != list(range(samples[0], samples[0] + len(samples))):
        raise InvalidInputError(f"{path}: sample column is not contiguous")
    u = np.array([[float(r["u_alpha"]), float(r["u_beta"])] for r in rows]).reshape(-1)
    return u, samples[0]

"""Frequency-domain identification of the per-axis LPV model.

Pipeline: stepped-sine experiments in Delta Representation space ->
sine correlation over averaged steady-state periods -> complex curve fit of
a rational model with iterative denominator reweighting -> physical
parameters (k, d, eta, T) -> polynomials in p_bar.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (FitFailedError, InvalidInputError, SpectralLeakageError,
                     StructureMismatchError)
from .plant import AxisParameters, JointParameters, PlantConfig, simulate_open_loop

DEFAULT_LEVELS = (1.00, 1.05, 1.10, 1.15, 1.20)
DEFAULT_DEGREES = {"k": 1, "d": 2, "eta": 2, "T": 2}


def default_grid(dt: float = 1e-3, n: int = 150, f_lo: float = 0.2, f_hi: float = 8.0) -> np.ndarray:
    """Log-spaced grid snapped so every period spans a whole number of samples."""
    raw = np.geomspace(f_lo, f_hi, n)
    samples = np.round(1.0 / (raw * dt))
    return np.unique(1.0 / (samples * dt))


@dataclass(frozen=True)
class SineExperiment:
    frequencies: tuple
    amplitude: float = 0.1
    periods: int = 10
    discard: int = 4
    p_bar: float = 1.1
    axis: str = "alpha"

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        object.__setattr__(self, "frequencies", tuple(float(v) for v in f))
        if f.size == 0 or np.any(f <= 0) or np.any(np.diff(f) <= 0):
            raise InvalidInputError("frequencies must be positive and strictly increasing")
        if self.periods <= self.discard:
            raise InvalidInputError("periods must exceed the discard count")
        if self.axis not in ("alpha", "beta"):
            raise InvalidInputError(f"unknown axis {self.axis!r}")


@dataclass
class FrequencyResponseData:
    frequency: np.ndarray
    response: np.ndarray
    variance: np.ndarray
    p_bar: float = float("nan")
    axis: str = ""

    def __post_init__(self):
        self.frequency = np.asarray(self.frequency, dtype=float)
        self.response = np.asarray(self.response, dtype=complex)
        self.variance = np.asarray(self.variance, dtype=float)
        if not (self.frequency.shape == self.response.shape == self.variance.shape):
            raise InvalidInputError("one response and variance entry per frequency required")
        if not (np.all(np.isfinite(self.response)) and np.all(np.isfinite(self.variance))):
            raise InvalidInputError("frequency response data must be finite")

    @property
    def gain(self):
        return np.abs(self.response)

    @property
    def phase(self):
        return np.angle(self.response)

    def to_csv(self, path, seed: int | None = None):
        with open(path, "w", newline="") as fh:
            if seed is not None:
                fh.write(f"# seed={seed}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frequency", "real", "imag", "variance"])
            for f, g, v in zip(self.frequency, self.response, self.variance):
                w.writerow([repr(float(f)), repr(float(g.real)), repr(float(g.imag)), repr(float(v))])

    @classmethod
    def from_csv(cls, path, **kw):
        with open(path) as fh:
            lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
        rows = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
        return cls(rows[:, 0], rows[:, 1] + 1j * rows[:, 2], rows[:, 3], **kw)


def sine_correlate(signal, frequency: float, dt: float, tol: float = 1e-6):
    """Amplitude and phase of the ``frequency`` component of ``signal``.

    The signal is interpreted as ``a * sin(2 pi f t + phi)`` sampled at
    ``t = i * dt``; returns ``(a, phi)``. The record must contain an integer
    number of periods or the estimate leaks and a SpectralLeakageError is raised.
    """
    y = np.asarray(signal, dtype=float)
    cycles = y.size * frequency * dt
    if y.size == 0 or abs(cycles - round(cycles)) > tol or round(cycles) < 1:
        raise SpectralLeakageError(f"record covers {cycles:.6f} periods, not an integer")
    phasor = _phasor(y, frequency, dt)
    return abs(phasor), math.atan2(phasor.imag, phasor.real)


def _phasor(y, frequency, dt):
    wt = 2.0 * np.pi * frequency * dt * np.arange(y.shape[-1])
    s = 2.0 / y.shape[-1] * (y @ np.sin(wt))
    c = 2.0 / y.shape[-1] * (y @ np.cos(wt))
    return s + 1j * c


Simulator = Callable[[np.ndarray, float], tuple]


def plant_simulator(cfg: PlantConfig, axis: str, p_bar: float) -> Simulator:
    """Open-loop simulator returning (angle, measured dp) sampled per step."""
    idx = 0 if axis == "alpha" else 1

    def run(u, dt):
        zeros = np.zeros_like(u)
        dpa, dpb = (u, zeros) if idx == 0 else (zeros, u)
        res = simulate_open_loop(cfg, dpa, dpb, p_bar, m=0.0)
        delta = res.delta()
        y = res.alpha if idx == 0 else res.beta
        u_meas = delta.dp_alpha if idx == 0 else delta.dp_beta
        return y[1:], np.asarray(u_meas)[1:]

    return run


def run_sine_experiment(exp: SineExperiment, plant: PlantConfig | None = None,
                        simulate: Simulator | None = None, dt: float | None = None) -> FrequencyResponseData:
    """Stepped-sine campaign at one p_bar level.

    ``simulate(u, dt) -> (y, u_measured)`` defaults to the open-loop plant
    (measured input = pressure difference of the lagged actuator states).
    The response is the ratio of output to measured-input phasors of the
    period-averaged steady-state record; the variance comes from the spread
    of the per-period ratios.
    """
    if simulate is None:
        if plant is None:
            raise InvalidInputError("either a plant config or a simulator is required")
        simulate = plant_simulator(plant, exp.axis, exp.p_bar)
        dt = plant.dt
    dt = 1e-3 if dt is None else dt
    kept = exp.periods - exp.discard
    resp = np.empty(len(exp.frequencies), dtype=complex)
    var = np.empty(len(exp.frequencies))
    for i, f in enumerate(exp.frequencies):
        n_per = int(round(1.0 / (f * dt)))
        if abs(n_per * f * dt - 1.0) > 1e-9:
            raise SpectralLeakageError(f"{f} Hz is not an integer number of samples per period")
        n = n_per * exp.periods
        u = exp.amplitude * np.sin(2.0 * np.pi * f * (np.arange(n) * dt))
        y, u_meas = simulate(u, dt)
        y = np.asarray(y, dtype=float)[exp.discard * n_per:].reshape(kept, n_per)
        u_meas = np.asarray(u_meas, dtype=float)[exp.discard * n_per:].reshape(kept, n_per)
        # phases are referenced to the first kept sample; only the ratio matters
        y_ph = _phasor(y, f, dt)
        u_ph = _phasor(u_meas, f, dt)
        resp[i] = _phasor(y.mean(axis=0), f, dt) / _phasor(u_meas.mean(axis=0), f, dt)
        per = y_ph / u_ph
        var[i] = float(np.var(per, ddof=1) / kept) if kept > 1 else 0.0
    return FrequencyResponseData(np.asarray(exp.frequencies), resp, var, p_bar=exp.p_bar, axis=exp.axis)


@dataclass
class RationalFit:
    """num/den coefficients highest power first; den is monic."""

    num: np.ndarray
    den: np.ndarray
    residual: float
    iterations: int
    condition: float

    def __call__(self, freq_hz):
        s = 2j * np.pi * np.asarray(freq_hz, dtype=float)
        return np.polyval(self.num, s) / np.polyval(self.den, s)

    @property
    def order(self):
        return len(self.num) - 1, len(self.den) - 1


def _weights(data: FrequencyResponseData, floor_rel: float = 1e-6):
    mag2 = np.abs(data.response) ** 2
    floor = floor_rel**2 * mag2 + np.finfo(float).tiny
    return 1.0 / np.maximum(data.variance, floor)


def fit_transfer_function(data: FrequencyResponseData, order=(0, 3), weights=None,
                          max_iter: int = 50, rtol: float = 1e-8, max_cond: float = 1e13) -> RationalFit:
    """Weighted complex least squares with iterative denominator reweighting.

    Minimises sum w |B(jw) - G A(jw)|^2 / |A_prev(jw)|^2 over the numerator B
    and monic denominator A, starting from A_prev = 1, until the relative
    coefficient change drops below ``rtol``. Frequencies are normalised
    internally to keep the design matrix well scaled.
    """
    nb, na = order
    f = data.frequency
    g = data.response
    if f.size < nb + na + 1:
        raise InvalidInputError(f"need at least {nb + na + 1} frequency points for order {order}")
    w = _weights(data) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.max()
    omega = 2.0 * np.pi * f
    w0 = float(np.exp(np.mean(np.log(omega))))
    sn = 1j * omega / w0

    # columns: b_0..b_nb (ascending), a_0..a_{na-1}; a_na = 1 moves to the rhs
    vb = np.column_stack([sn**i for i in range(nb + 1)])
    va = np.column_stack([-g * sn**i for i in range(na)])
    design = np.hstack([vb, va])
    rhs = g * sn**na

    den_prev = np.ones_like(sn)
    theta = None
    cond = float("nan")
    it = 0
    for it in range(1, max_iter + 1):
        scale = np.sqrt(w) / np.abs(den_prev)
        a_mat = design * scale[:, None]
        b_vec = rhs * scale
        a_real = np.vstack([a_mat.real, a_mat.imag])
        b_real = np.concatenate([b_vec.real, b_vec.imag])
        col = np.linalg.norm(a_real, axis=0)
        col[col == 0] = 1.0
        sv = np.linalg.svd(a_real / col, compute_uv=False)
        cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
        if not np.isfinite(cond) or cond > max_cond:
            raise FitFailedError("ill-conditioned curve-fit normal equations", cond)
        sol, *_ = np.linalg.lstsq(a_real / col, b_real, rcond=None)
        sol = sol / col
        a_asc = np.concatenate([sol[nb + 1:], [1.0]])
        den_prev = np.polynomial.polynomial.polyval(sn, a_asc)
        if theta is not None and np.linalg.norm(sol - theta) <= rtol * np.linalg.norm(sol):
            theta = sol
            break
        theta = sol

    b_asc = theta[: nb + 1]
    a_asc = np.concatenate([theta[nb + 1:], [1.0]])
    # undo s -> s/w0 and keep the denominator monic in s
    num = (b_asc * w0 ** (na - np.arange(nb + 1)))[::-1]
    den = (a_asc * w0 ** (na - np.arange(na + 1)))[::-1]
    fit = RationalFit(num=num, den=den, residual=0.0, iterations=it, condition=cond)
    err = fit(f) - g
    fit.residual = float(np.sqrt(np.sum(w * np.abs(err) ** 2) / np.sum(w)))
    return fit


@dataclass(frozen=True)
class PhysicalParameters:
    k: float
    d: float
    eta: float
    T: float

    def as_array(self):
        return np.array([self.k, self.d, self.eta, self.T])


def extract_physical_parameters(fit: RationalFit, inertia: float) -> PhysicalParameters:
    """Factor eta / ((T s + 1)(J s^2 + d s + k)) out of a fitted (0, 3) model.

    With the monic denominator s^3 + c2 s^2 + c1 s + c0, every negative real
    root -1/T gives k = c0 T J and d = J (c2 - 1/T). The root leaving a
    complex mechanical pair is preferred; otherwise the fastest admissible one.
    """
    num = np.atleast_1d(np.asarray(fit.num, dtype=float))
    den = np.atleast_1d(np.asarray(fit.den, dtype=float))
    if len(num) != 1 or len(den) != 4:
        raise StructureMismatchError(f"expected a (0, 3) model, got order ({len(num) - 1}, {len(den) - 1})")
    lead = den[0]
    den = den / lead
    num = num / lead
    c2, c1, c0 = den[1:]
    roots = np.roots(den)
    candidates = []
    for r in roots:
        if abs(r.imag) > 1e-9 * max(1.0, abs(r)) or r.real >= 0:
            continue
        T = -1.0 / r.real
        k = c0 * T * inertia
        d = inertia * (c2 - 1.0 / T)
        eta = num[0] * T * inertia
        if k > 0 and d > 0 and eta > 0:
            others = roots[np.abs(roots - r) > 1e-12 * max(1.0, abs(r))]
            complex_pair = others.size == 2 and np.all(np.abs(others.imag) > 0)
            candidates.append((not complex_pair, -abs(r.real), PhysicalParameters(k, d, eta, T)))
    if not candidates:
        raise StructureMismatchError("no factorisation with positive T, d, k")
    candidates.sort(key=lambda c: (c[0], c[1]))
    return candidates[0][2]


def fit_axis_polynomials(p_levels: Sequence[float], estimates: Sequence[PhysicalParameters],
                         degrees: dict | None = None) -> AxisParameters:
    degrees = {**DEFAULT_DEGREES, **(degrees or {})}
    p = np.asarray(p_levels, dtype=float)
    est = np.array([e.as_array() for e in estimates])
    if est.shape[0] != p.size:
        raise InvalidInputError("one estimate per p_bar level required")
    coefs = {}
    for j, name in enumerate(("k", "d", "eta", "T")):
        deg = degrees[name]
        if np.unique(p).size < deg + 1:
            raise InvalidInputError(f"{name}: degree {deg} needs {deg + 1} distinct p_bar levels")
        coefs[name] = np.polynomial.polynomial.polyfit(p, est[:, j], deg)
    return AxisParameters(**coefs)


def fit_parameter_polynomials(p_levels, estimates: dict, degrees: dict | None = None) -> JointParameters:
    """Least-squares polynomials per axis; ``estimates`` maps axis -> list."""
    return JointParameters(alpha=fit_axis_polynomials(p_levels, estimates["alpha"], degrees),
                           beta=fit_axis_polynomials(p_levels, estimates["beta"], degrees))


@dataclass
class IdentificationResult:
    joint: JointParameters
    levels: tuple
    data: dict = field(default_factory=dict)        # (axis, p_bar) -> FrequencyResponseData
    fits: dict = field(default_factory=dict)        # (axis, p_bar) -> RationalFit
    estimates: dict = field(default_factory=dict)   # axis -> [PhysicalParameters]


def identify(plant: PlantConfig, levels=DEFAULT_LEVELS, frequencies=None, amplitude: float = 0.1,
             periods: int = 10, discard: int = 4, degrees=None) -> IdentificationResult:
    """Run the full campaign at m = 0 on ``plant`` and fit the LPV model."""
    freqs = default_grid(plant.dt) if frequencies is None else frequencies
    inertia = plant.mech.inertia(0.0)
    result = IdentificationResult(joint=None, levels=tuple(levels))
    for axis in ("alpha", "beta"):
        result.estimates[axis] = []
        for p in levels:
            exp = SineExperiment(tuple(freqs), amplitude, periods, discard, float(p), axis)
            data = run_sine_experiment(exp, plant)
            fit = fit_transfer_function(data)
            result.data[axis, p] = data
            result.fits[axis, p] = fit
            result.estimates[axis].append(extract_physical_parameters(fit, inertia))
    result.joint = fit_parameter_polynomials(levels, result.estimates, degrees)
    return result


def refit_from_data(data: dict, levels, inertia: float, degrees=None) -> JointParameters:
    """Fit and extract from existing frequency-response data keyed by (axis, p_bar)."""
    est = {axis: [extract_physical_parameters(fit_transfer_function(data[axis, p]), inertia) for p in levels]
           for axis in ("alpha", "beta")}
    return fit_parameter_polynomials(levels, est, degrees)


def sup_relative_error(a: AxisParameters, b: AxisParameters, lo=1.0, hi=1.2, n=201) -> dict:
    grid = np.linspace(lo, hi, n)
    return {name: float(np.max(np.abs(va - vb) / np.abs(vb)))
            for name, va, vb in zip(("k", "d", "eta", "T"), a.evaluate(grid), b.evaluate(grid))}

import math

import numpy as np
import pytest
from scipy import signal

from softarm.errors import FitFailedError, InvalidInputError, SpectralLeakageError, StructureMismatchError
from softarm.plant import AxisParameters, PlantConfig, frequency_response, transfer_function
from softarm.sysid import (
    FrequencyResponseData,
    PhysicalParameters,
    RationalFit,
    SineExperiment,
    default_grid,
    extract_physical_parameters,
    fit_axis_polynomials,
    fit_parameter_polynomials,
    fit_transfer_function,
    identify,
    run_sine_experiment,
    sine_correlate,
    sup_relative_error,
)

LIN = PlantConfig().linear()
DT = 1e-3


def _sine(n_per, periods, amp=1.0, harmonic=1, phase=0.0):
    t = np.arange(n_per * periods)
    return amp * np.sin(2 * np.pi * harmonic * t / n_per + phase)


def test_correlate_pure_sine():
    a, ph = sine_correlate(_sine(1000, 3, amp=2.0), 1.0, DT)
    assert a == pytest.approx(2.0, abs=1e-10)
    assert ph == pytest.approx(0.0, abs=1e-10)
    a, ph = sine_correlate(_sine(500, 2, amp=0.5, phase=0.7), 2.0, DT)
    assert (a, ph) == pytest.approx((0.5, 0.7), abs=1e-10)


def test_correlate_orthogonal_harmonic():
    a, _ = sine_correlate(_sine(1000, 4, harmonic=3) + np.cos(2 * np.pi * 2 * np.arange(4000) / 1000), 1.0, DT)
    assert a <= 1e-10


def test_correlate_noise_monte_carlo():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        y = _sine(200, 6) + rng.normal(0.0, 0.1, 1200)
        a, _ = sine_correlate(y, 5.0, DT)
        worst = max(worst, abs(a - 1.0))
    assert worst <= 0.03


def test_correlate_leakage():
    with pytest.raises(SpectralLeakageError):
        sine_correlate(_sine(1000, 2)[:1500], 1.3, DT)


def test_experiment_validation():
    with pytest.raises(InvalidInputError):
        SineExperiment((2.0, 1.0))
    with pytest.raises(InvalidInputError):
        SineExperiment((1.0,), periods=4, discard=4)
    with pytest.raises(InvalidInputError):
        SineExperiment((0.0, 1.0))


def test_pass_through():
    data = run_sine_experiment(SineExperiment((0.5, 1.0, 2.0, 5.0)), simulate=lambda u, dt: (u, u), dt=DT)
    np.testing.assert_allclose(data.gain, 1.0, atol=1e-12)
    np.testing.assert_allclose(data.phase, 0.0, atol=1e-12)


def test_first_order_lag_corner():
    n_per = 628
    f = 1.0 / (n_per * DT)
    T = 1.0 / (2 * np.pi * f)
    lag = signal.lti([1.0], [T, 1.0])

    def sim(u, dt):
        t = np.arange(u.size) * dt
        _, y, _ = signal.lsim(lag, u, t)
        return y, u

    data = run_sine_experiment(SineExperiment((f,), periods=20, discard=14), simulate=sim, dt=DT)
    assert data.gain[0] == pytest.approx(1 / math.sqrt(2), rel=1e-3)
    assert math.degrees(data.phase[0]) == pytest.approx(-45.0, abs=0.1)


def test_default_plant_matches_analytic():
    freqs = tuple(default_grid(n=12))
    data = run_sine_experiment(SineExperiment(freqs, p_bar=1.1), LIN)
    g = frequency_response(LIN.joint.alpha, 1.1, LIN.mech.inertia(0.0), data.frequency)
    np.testing.assert_array_less(np.abs(data.gain / np.abs(g) - 1.0), 0.01)


def _exact_data(axis, p_bar, freqs, inertia):
    g = frequency_response(axis, p_bar, inertia, freqs)
    return FrequencyResponseData(freqs, g, (1e-3 * np.abs(g)) ** 2)


def test_fit_exact_third_order():
    J = LIN.mech.inertia(0.0)
    freqs = default_grid(n=15)
    fit = fit_transfer_function(_exact_data(LIN.joint.alpha, 1.1, freqs, J))
    num, den = transfer_function(LIN.joint.alpha, 1.1, J)
    np.testing.assert_allclose(fit.den, den / den[0], rtol=1e-6)
    np.testing.assert_allclose(fit.num, num / den[0], rtol=1e-6)
    assert fit.order == (0, 3)


def test_fit_first_order():
    f = np.geomspace(0.1, 10, 20)
    g = 2.5 / (1j * 2 * np.pi * f * 0.3 + 1)
    fit = fit_transfer_function(FrequencyResponseData(f, g, np.full(f.size, 1e-4)), order=(0, 1))
    gain = fit.num[0] / fit.den[1]
    tau = 1.0 / fit.den[1]
    assert gain == pytest.approx(2.5, rel=1e-8)
    assert tau == pytest.approx(0.3, rel=1e-8)


def test_fit_too_few_points():
    f = np.array([1.0, 2.0, 3.0])
    with pytest.raises(InvalidInputError):
        fit_transfer_function(FrequencyResponseData(f, np.ones(3), np.ones(3)))


def test_fit_ill_conditioned():
    f = np.full(5, 1.0)  # repeated point: rank-deficient design
    with pytest.raises(FitFailedError):
        fit_transfer_function(FrequencyResponseData(f, np.ones(5) * (1 + 1j), np.ones(5)))


def test_fit_residual_self_consistent():
    J = LIN.mech.inertia(0.0)
    freqs = default_grid(n=30)
    rng = np.random.default_rng(3)
    g = frequency_response(LIN.joint.beta, 1.05, J, freqs) * (1 + 0.01 * rng.standard_normal(freqs.size))
    data = FrequencyResponseData(freqs, g, (0.01 * np.abs(g)) ** 2)
    fit = fit_transfer_function(data)
    w = 1.0 / data.variance
    w = w / w.max()
    recomputed = np.sqrt(np.sum(w * np.abs(fit(freqs) - g) ** 2) / np.sum(w))
    assert fit.residual == pytest.approx(recomputed, rel=1e-12)


def test_fit_noisy_monte_carlo():
    J = LIN.mech.inertia(0.0)
    freqs = default_grid()
    truth = np.array([float(v) for v in LIN.joint.alpha.evaluate(1.1)])
    g0 = frequency_response(LIN.joint.alpha, 1.1, J, freqs)
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        g = g0 * (1 + 0.01 * rng.standard_normal(freqs.size)) * np.exp(0.01j * rng.standard_normal(freqs.size))
        est = extract_physical_parameters(fit_transfer_function(
            FrequencyResponseData(freqs, g, (0.01 * np.abs(g0)) ** 2)), J)
        worst = max(worst, float(np.max(np.abs(est.as_array() / truth - 1))))
    assert worst <= 0.05


def test_extract_exact():
    J = 0.0061
    k, d, eta, T = 3.3, 0.21, 1.02, 0.041
    den = np.polymul([T, 1.0], [J, d, k])
    fit = RationalFit(np.array([eta]) / den[0], den / den[0], 0.0, 1, 1.0)
    est = extract_physical_parameters(fit, J)
    np.testing.assert_allclose(est.as_array(), (k, d, eta, T), rtol=1e-12)


def test_extract_from_experiment():
    J = LIN.mech.inertia(0.0)
    data = run_sine_experiment(SineExperiment(tuple(default_grid(n=15)), p_bar=1.15, axis="beta"), LIN)
    est = extract_physical_parameters(fit_transfer_function(data), J)
    truth = np.array([float(v) for v in LIN.joint.beta.evaluate(1.15)])
    np.testing.assert_allclose(est.as_array(), truth, rtol=1e-3)


def test_extract_wrong_order():
    fit = RationalFit(np.array([1.0]), np.array([1.0, 2.0, 3.0]), 0.0, 1, 1.0)
    with pytest.raises(StructureMismatchError):
        extract_physical_parameters(fit, 0.006)


def test_polynomial_line_exact():
    p = [1.0, 1.05, 1.1, 1.15, 1.2]
    est = [PhysicalParameters(4 * x - 1, 0.15 + 0.05 * x, 0.9 + 0.1 * x, 0.06 - 0.02 * x) for x in p]
    ax = fit_axis_polynomials(p, est, {"k": 1, "d": 1, "eta": 1, "T": 1})
    np.testing.assert_allclose(ax.k, (-1.0, 4.0), atol=1e-10)
    np.testing.assert_allclose(ax.T, (0.06, -0.02), atol=1e-12)


def test_polynomial_interpolating():
    p = [1.0, 1.05, 1.1, 1.15, 1.2]
    rng = np.random.default_rng(0)
    vals = rng.uniform(1, 2, (5, 4))
    est = [PhysicalParameters(*v) for v in vals]
    ax = fit_axis_polynomials(p, est, {"k": 4, "d": 4, "eta": 4, "T": 4})
    got = np.column_stack(ax.evaluate(np.asarray(p)))
    np.testing.assert_allclose(got, vals, atol=1e-9)


def test_polynomial_insufficient_levels():
    est = [PhysicalParameters(1, 1, 1, 1)] * 2
    with pytest.raises(InvalidInputError):
        fit_axis_polynomials([1.0, 1.1], est)


def test_end_to_end_noise_free():
    res = identify(LIN, frequencies=default_grid(n=15))
    for name in ("alpha", "beta"):
        err = sup_relative_error(res.joint.axis(name), LIN.joint.axis(name))
        assert max(err.values()) <= 0.01, (name, err)
    assert isinstance(res.joint.alpha, AxisParameters)
    joint = fit_parameter_polynomials(res.levels, res.estimates)
    assert joint == res.joint


def test_frd_csv_round_trip(tmp_path):
    f = np.array([0.5, 1.0, 2.0])
    data = FrequencyResponseData(f, np.array([1 + 2j, 0.5 - 1j, -0.1j]), np.array([1e-4, 2e-4, 3e-4]))
    path = tmp_path / "frd.csv"
    data.to_csv(path, seed=7)
    assert path.read_text().startswith("# seed=7\nfrequency,real,imag,variance\n")
    back = FrequencyResponseData.from_csv(path)
    assert np.array_equal(back.frequency, f)
    assert np.array_equal(back.response, data.response)
    assert np.array_equal(back.variance, data.variance)


def test_frd_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        FrequencyResponseData([1.0], [np.nan], [1.0])

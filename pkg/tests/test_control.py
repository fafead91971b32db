import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import signal

from softarm.allocation import DeltaRepresentation, xi
from softarm.control import (
    ControllerParams,
    ControllerState,
    cascade_step,
    characteristic_roots,
    closed_loop_response,
    controller_step,
    feedforward_beta,
    kappa_for_slow_pole,
    scheduled_gains,
    stability_grid,
)
from softarm.errors import InvalidInputError
from softarm.plant import AxisParameters, JointParameters, MechanicalParams, PlantConfig, PlantState
from softarm.simulation import simulate_closed_loop
from softarm.trajectory import Plan, build_pick_place_plan

MECH = MechanicalParams()
JOINT = JointParameters.default()
PARAMS = ControllerParams.default(JOINT)


def test_params_validation():
    with pytest.raises(InvalidInputError):
        ControllerParams(0.0, 1.0)
    with pytest.raises(InvalidInputError):
        ControllerParams(1.0, 1.0, ts=0.0)
    assert PARAMS.tau_f == PARAMS.ts == 0.02


def test_default_kappa_places_slow_pole():
    for name, kappa in zip(("alpha", "beta"), PARAMS.kappa):
        _, _, eta, T = JOINT.axis(name).evaluate(1.1)
        roots = characteristic_roots(T, kappa * eta)
        assert np.max(roots.real) == pytest.approx(-2 * math.pi * 2.0, rel=1e-9)
    assert PARAMS.kappa_alpha == pytest.approx(6.50, abs=0.01)
    with pytest.raises(InvalidInputError):
        kappa_for_slow_pole(0.05, 1.0, pole_hz=10.0)


def test_zero_error_zero_output():
    state = ControllerState()
    for _ in range(5):
        (ua, ub), _ = controller_step((0.0, 0.0), (1.1, 0.0), state, PARAMS, MECH, JOINT)
        assert ua == 0.0 and ub == 0.0


def test_integrator_growth():
    e = 0.01
    state = ControllerState()
    ka, kb = scheduled_gains(1.1, 0.0, MECH, JOINT)[1]
    incs = [controller_step((e, -e), (1.1, 0.0), state, PARAMS, MECH, JOINT)[1] for _ in range(6)]
    # trapezoidal rule: half a step on the first sample, then kappa k e Ts per step
    assert incs[0][0] == pytest.approx(PARAMS.kappa_alpha * ka * e * PARAMS.ts / 2, rel=1e-12)
    for da, db in incs[1:]:
        assert da == pytest.approx(PARAMS.kappa_alpha * ka * e * PARAMS.ts, rel=1e-12)
        assert db == pytest.approx(-PARAMS.kappa_beta * kb * e * PARAMS.ts, rel=1e-12)


def test_matches_bilinear_oracle(rng):
    params = ControllerParams(2.0, 3.0, integrator_limit=1e9)
    J, (ka, _), (da, _), _ = scheduled_gains(1.05, 0.1, MECH, JOINT)
    tf = params.tau_f
    # kappa (J s/(tf s + 1) + d + k/s) over a common denominator s (tf s + 1)
    num = params.kappa_alpha * np.polyadd(np.polyadd([J, 0.0, 0.0], np.polymul([da], [tf, 1.0, 0.0])),
                                          np.polymul([ka], [tf, 1.0]))
    den = [tf, 1.0, 0.0]
    bd, ad, _ = signal.cont2discrete((num, den), params.ts, method="bilinear")
    e = rng.normal(0, 0.05, 60)
    expected = signal.lfilter(np.ravel(bd), ad, e)
    state = ControllerState()
    got = [controller_step((v, 0.0), (1.05, 0.1), state, params, MECH, JOINT)[0][0] for v in e]
    np.testing.assert_allclose(got, expected, rtol=1e-9, atol=1e-12)


def test_integrator_clamped():
    params = ControllerParams(6.0, 6.0, integrator_limit=0.5)
    state = ControllerState()
    for _ in range(200):
        controller_step((0.5, 0.5), (1.1, 0.0), state, params, MECH, JOINT)
    assert np.all(np.abs(state.integrator) <= 0.5)


def test_non_finite_error_faults():
    state = ControllerState()
    controller_step((0.1, 0.1), (1.1, 0.0), state, PARAMS, MECH, JOINT)
    before = state.to_vector()
    (ua, ub), _ = controller_step((float("nan"), 0.0), (1.1, 0.0), state, PARAMS, MECH, JOINT)
    assert state.fault and ua == 0.0 and ub == 0.0
    assert np.array_equal(state.to_vector(), before)


def test_characteristic_roots_example():
    roots = np.sort(characteristic_roots(0.05, 1.0).real)
    np.testing.assert_allclose(roots, [-18.944, -1.056], atol=1e-3)


def test_feedforward_examples():
    unit = JointParameters(JOINT.alpha, AxisParameters(k=(3.0,), d=(0.2,), eta=(1.0,), T=(0.04,)))
    assert feedforward_beta(0.0, (1.1, 0.0), MECH, unit) == pytest.approx(0.3413, abs=5e-5)
    assert feedforward_beta(math.pi / 2, (1.1, 0.0), MECH, unit) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(InvalidInputError):
        feedforward_beta(float("inf"), (1.1, 0.0), MECH, unit)


@given(st.floats(-1.3, 1.3), st.floats(0.0, 0.5))
def test_feedforward_linear_in_mass_term(beta, m):
    # doubling (M/2 + m) doubles the output
    base = MechanicalParams(M=0.2)
    doubled = MechanicalParams(M=0.4)
    a = feedforward_beta(beta, (1.1, m), base, JOINT)
    b = feedforward_beta(beta, (1.1, 2 * m), doubled, JOINT)
    assert b == pytest.approx(2 * a, rel=1e-12, abs=1e-15)


def test_cascade_zero_error_vertical():
    state = ControllerState()
    sp = (0.0, math.pi / 2, 1.15, 0.2)
    p, sat = cascade_step(sp, (0.0, math.pi / 2), state, PARAMS, MECH, JOINT)
    np.testing.assert_allclose(p, xi(DeltaRepresentation(1.15, 0.0, 0.0)), atol=1e-15)
    assert not sat


@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(1.0, 1.2), st.floats(0.0, 0.2))
def test_cascade_floor(ea, eb, p_bar, m):
    state = ControllerState()
    p, sat = cascade_step((0.0, 0.0, p_bar, m), (ea, eb), state, PARAMS, MECH, JOINT)
    assert min(p) == p_bar


def test_cascade_saturation_reverts_integrator():
    state = ControllerState()
    p, sat = cascade_step((0.0, 0.0, 1.1, 0.0), (-1.2, 0.0), state, PARAMS, MECH, JOINT, p_max=2.0)
    assert sat and max(p) == 2.0
    assert np.all(state.integrator == 0.0)


def test_closed_loop_mass_invariance():
    f = np.geomspace(0.01, 20, 200)
    for name, kappa in zip(("alpha", "beta"), PARAMS.kappa):
        ax = JOINT.axis(name)
        for p_bar in (1.0, 1.1, 1.2):
            h0 = closed_loop_response(f, kappa, ax, p_bar, 0.0, MECH)
            h2 = closed_loop_response(f, kappa, ax, p_bar, 0.2, MECH)
            assert np.max(np.abs(h0 - h2)) <= 1e-9
    # scheduling with the wrong mass breaks the cancellation
    wrong = closed_loop_response(f, PARAMS.kappa_alpha, JOINT.alpha, 1.1, 0.2, MECH, sched_m=0.0)
    assert np.max(np.abs(wrong - closed_loop_response(f, PARAMS.kappa_alpha, JOINT.alpha, 1.1, 0.0, MECH))) > 1e-3


def test_stability_grid():
    rows = stability_grid(JOINT, MECH)
    assert len(rows) == 3 * 3 * 5 * 2
    assert all(r["max_real"] < 0 for r in rows)
    for ke in (0.5, 1, 2, 5, 10):
        for p in (1.0, 1.1, 1.2):
            _, _, _, T = JOINT.alpha.evaluate(p)
            assert np.all(characteristic_roots(T, ke).real < 0)


def _constant_plan(seconds=6.0, alpha=10.0, beta=-5.0, p_bar=1.1, m=0.0):
    n = int(round(seconds / 0.02))
    return Plan(0.02, np.full(n, math.radians(alpha)), math.radians(beta), p_bar, m)


@pytest.mark.parametrize("cfg", [PlantConfig().linear(), PlantConfig().with_dist(noise_std=0.0)],
                         ids=["linear", "disturbed"])
def test_steady_state_accuracy(cfg):
    plan = _constant_plan(m=0.1)
    res = simulate_closed_loop(plan, cfg, x0=PlantState.at_rest(1.1), cs0=np.zeros(6))
    late = plan.time >= 5.0
    assert np.degrees(np.max(np.abs(res.error[late]))) < 0.05


def test_compliance_passthrough():
    plan = build_pick_place_plan()
    res = simulate_closed_loop(plan, PlantConfig(), seed=1)
    assert np.array_equal(np.min(res.p_setpoint, axis=1), plan.pbar)


def test_state_vector_round_trip():
    s = ControllerState(np.array([1.0, 2.0]), np.array([3.0, 4.0]), np.array([5.0, 6.0]))
    assert np.array_equal(ControllerState.from_vector(s.to_vector()).to_vector(), s.to_vector())
    assert ControllerParams.from_dict(PARAMS.to_dict()) == PARAMS

import math

import numpy as np
import pytest

from softarm.errors import InvalidInputError
from softarm.ilc import phase_windows
from softarm.pickplace import evaluate_trials, run_pickplace, train_phases, warm_start
from softarm.plant import PlantConfig
from softarm.simulation import (
    RolloutResult,
    deinterleave,
    interleave,
    measurement_noise,
    shifted_reference,
    simulate_closed_loop,
)
from softarm.trajectory import Plan, build_pick_place_plan, build_step_plan

CFG = PlantConfig()


@pytest.fixture(scope="module")
def plan():
    return build_pick_place_plan()


@pytest.fixture(scope="module")
def warm(plan):
    return run_pickplace(plan, CFG, trials=0)


@pytest.fixture(scope="module")
def cold(plan):
    return run_pickplace(plan, CFG, trials=0, cold=True)


def test_interleave_round_trip(rng):
    a, b = rng.normal(size=7), rng.normal(size=7)
    v = interleave(a, b)
    assert v[0] == a[0] and v[1] == b[0] and v[-1] == b[-1]
    a2, b2 = deinterleave(v)
    assert np.array_equal(a2, a) and np.array_equal(b2, b)


def test_shifted_reference_holds_last(plan):
    ref = shifted_reference(plan)
    assert np.array_equal(ref[:-1], plan.reference[1:])
    assert np.array_equal(ref[-1], plan.reference[-1])


def test_noise_reproducible():
    assert np.array_equal(measurement_noise(10, 0.1, 4), measurement_noise(10, 0.1, 4))
    assert not np.array_equal(measurement_noise(10, 0.1, 4), measurement_noise(10, 0.1, 5))
    assert np.all(measurement_noise(10, 0.0, 4) == 0.0)


def test_zero_reference_zero_error():
    plan = Plan(0.02, np.zeros(100), 0.0, 1.1, 0.0)
    res = simulate_closed_loop(plan, CFG.linear())
    assert np.all(res.error == 0.0)


def test_rollout_deterministic(plan):
    a = simulate_closed_loop(plan, CFG, seed=9)
    b = simulate_closed_loop(plan, CFG, seed=9)
    assert np.array_equal(a.y_meas, b.y_meas) and np.array_equal(a.p_setpoint, b.p_setpoint)


def test_rollout_shapes_and_validation(plan):
    res = simulate_closed_loop(plan, CFG, seed=0)
    assert isinstance(res, RolloutResult) and res.ok
    assert res.y.shape == (140, 2) and res.dp_cmd.shape == (139, 2)
    with pytest.raises(InvalidInputError):
        simulate_closed_loop(plan, CFG, correction=np.zeros(5))


def test_correction_is_serial_reference_offset():
    # a constant correction on the linear plant shifts the settled angle by the same amount
    plan = Plan(0.02, np.zeros(300), 0.0, 1.1, 0.0)
    c = np.tile([0.05, -0.02], 300)
    res = simulate_closed_loop(plan, CFG.linear(), correction=c)
    np.testing.assert_allclose(res.y[-1], [0.05, -0.02], atol=1e-6)


def test_trace_csv(tmp_path):
    plan = build_step_plan(hold=0.2)
    res = simulate_closed_loop(plan, CFG, seed=2)
    path = tmp_path / "t.csv"
    res.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed=2"
    assert lines[1] == "time,alpha,beta,dp_alpha,dp_beta,p_bar,p_a,p_b,p_c,R,m"
    assert len(lines) == 2 + plan.n + 1


def test_pick_phase_learning(plan):
    hists, starts = train_phases(plan, CFG, iterations=25)
    assert starts == [w[0] for w in phase_windows(plan.boundaries, 10)]
    h = hists[0]
    assert h.max_error()[-1] * 3 <= h.max_error()[0]


def test_cold_start_fails_eject_threshold(plan):
    rep = evaluate_trials(plan, CFG, np.zeros(2 * plan.n), trials=1)[0]
    assert not rep.success
    assert max(rep.eject_max_alpha, rep.eject_max_beta) > math.radians(1.0)


def test_warm_start_halves_iterations(warm, cold):
    band = 1.5 * cold.joint.rms()[-1]
    first = lambda rms: int(np.flatnonzero(rms <= band)[0])
    assert first(warm.joint.rms()) <= first(cold.joint.rms()) / 2


def test_warm_start_length(plan, warm):
    assert warm.warm_u.shape == (2 * plan.n,)
    hists, starts = train_phases(plan, CFG, iterations=2)
    assert warm_start(plan, hists, starts).shape == (2 * plan.n,)


def test_trials_after_joint_training(plan, warm):
    reports = evaluate_trials(plan, CFG, warm.joint.final_u, trials=10, seed=20_000)
    assert all(r.success for r in reports)
    assert all(max(r.eject_max_alpha, r.eject_max_beta) <= math.radians(1.0) for r in reports)

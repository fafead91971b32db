import json
import math

import numpy as np
import pytest

from softarm.cli import (
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_PROPERTY,
    lissajous_similarity,
    main,
    round_trip_check,
)
from softarm.config import ExperimentConfig
from softarm.errors import ConfigError
from softarm.plant import PlantConfig
from softarm.sysid import FrequencyResponseData


def write_config(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


def test_config_defaults_round_trip(tmp_path):
    cfg = ExperimentConfig()
    cfg.save(tmp_path / "c.json")
    back = ExperimentConfig.load(tmp_path / "c.json")
    assert back.to_dict() == cfg.to_dict()


def test_config_paths_and_errors(tmp_path):
    (tmp_path / "plant.json").write_text(json.dumps({"pressure_lag": 0.03}))
    cfg = ExperimentConfig.load(write_config(tmp_path / "c.json", {"plant": "plant.json", "seed": 7}))
    assert cfg.plant.pressure_lag == 0.03 and cfg.seed == 7
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"ilc": {"w_x": 1}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"seed": -1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"controller": {"kappa_alpha": -1.0}})
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "bad.json")


def test_exit_codes(tmp_path):
    assert main(["track", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["no-such-command"]) == EXIT_CONFIG
    assert main(["ilc-train", "--iterations", "0", "--out", str(tmp_path)]) == EXIT_CONFIG
    cfg = write_config(tmp_path / "wild.json", {"controller": {"kappa_alpha": 1e6, "kappa_beta": 1e6},
                                               "plant": {"pressure_max": 1e12}})
    assert main(["track", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_NUMERICAL
    strict = write_config(tmp_path / "strict.json", {"pickplace": {"threshold_deg": 1e-4}})
    out = tmp_path / "pp"
    assert main(["pickplace", "--config", strict, "--out", str(out), "--trials", "2",
                 "--iterations", "2", "--cold-start"]) == EXIT_PROPERTY
    assert len(list(out.glob("failed_trial_seed*.csv"))) == 2


def test_allocation_check(tmp_path):
    assert main(["allocation-check", "--samples", "2000", "--out", str(tmp_path), "--emit-plot-data"]) == EXIT_OK
    text = (tmp_path / "allocation_check.csv").read_text().splitlines()
    assert text[0] == "# seed=0"
    assert all(line.endswith(",1") for line in text[2:])
    assert (tmp_path / "plot_lissajous.csv").exists()
    assert (tmp_path / "config_used.json").exists()


def test_round_trip_helper():
    worst, bad, _ = round_trip_check(10_000, 3)
    assert worst <= 1e-12 and bad is None


def test_lissajous_closed_and_coupling_monotone():
    lin = PlantConfig().linear()
    sim, gap, *_ = lissajous_similarity(lin)
    assert sim >= 0.95 and gap < 1e-3
    sims = [lissajous_similarity(lin.with_dist(coupling=c))[0] for c in (0.0, 0.1, 0.2, 0.4, 0.8)]
    assert all(b < a for a, b in zip(sims, sims[1:]))


def test_identify(tmp_path):
    cfg = write_config(tmp_path / "c.json", {"identify": {"n_frequencies": 15}})
    out = tmp_path / "out"
    assert main(["identify", "--config", cfg, "--out", str(out)]) == EXIT_OK
    for axis in ("alpha", "beta"):
        bode = sorted(out.glob(f"bode_{axis}_p*.csv"))
        assert len(bode) == 5
        data = FrequencyResponseData.from_csv(bode[0])
        assert data.frequency.size == 15
    fitted = PlantConfig.from_dict(json.loads((out / "fitted_plant.json").read_text()))
    grid = np.linspace(1.0, 1.2, 41)
    truth = PlantConfig()
    for axis in ("alpha", "beta"):
        for a, b in zip(fitted.joint.axis(axis).evaluate(grid), truth.joint.axis(axis).evaluate(grid)):
            assert np.max(np.abs(a / b - 1)) <= 0.01
    again = tmp_path / "again"
    assert main(["identify", "--config", cfg, "--out", str(again)]) == EXIT_OK
    assert files(out) == files(again)


def test_track(tmp_path):
    assert main(["track", "--out", str(tmp_path)]) == EXIT_OK
    rows = (tmp_path / "track_summary.csv").read_text().splitlines()[2:]
    rms = [float(r.split(",")[1]) for r in rows]
    assert len(rms) == 2
    assert abs(rms[1] / rms[0] - 1) <= 0.05
    assert (tmp_path / "track_m0.000.csv").exists() and (tmp_path / "track_m0.200.csv").exists()


def test_ilc_train_tasks(tmp_path):
    for task in ("transition", "phase-I"):
        cfg = write_config(tmp_path / f"{task}.json", {"ilc": {"task": task}})
        out = tmp_path / task
        assert main(["ilc-train", "--config", cfg, "--iterations", "5", "--out", str(out)]) == EXIT_OK
        hist = (out / "ilc_history.csv").read_text().splitlines()
        assert len(hist) == 2 + 5
        assert (out / "ilc_correction.csv").exists()


def test_pickplace_warm_start_files(tmp_path):
    first = tmp_path / "a"
    assert main(["pickplace", "--out", str(first), "--trials", "3"]) == EXIT_OK
    phases = [str(first / f"phase_{n}_correction.csv") for n in ("I", "II", "III")]
    second = tmp_path / "b"
    assert main(["pickplace", "--out", str(second), "--trials", "3", "--warm-start", *phases]) == EXIT_OK
    assert (first / "warm_start_correction.csv").read_bytes() == (second / "warm_start_correction.csv").read_bytes()
    trials = (second / "pickplace_trials.csv").read_text().splitlines()[2:]
    assert len(trials) == 3 and all(t.endswith(",1") for t in trials)


@pytest.mark.parametrize("argv", [
    ["allocation-check", "--samples", "500", "--emit-plot-data"],
    ["track", "--seed", "11"],
    ["ilc-train", "--iterations", "4", "--emit-plot-data"],
    ["pickplace", "--iterations", "3", "--trials", "4"],
])
def test_byte_identical_outputs(tmp_path, argv):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(argv + ["--out", str(a)]) == EXIT_OK
    assert main(argv + ["--out", str(b)]) == EXIT_OK
    fa, fb = files(a), files(b)
    assert fa.keys() == fb.keys() and fa == fb
    for name, content in fa.items():
        if name.endswith(".csv"):
            assert content.startswith(b"# seed="), name

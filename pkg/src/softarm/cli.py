"""Command-line entry point.

    softarm allocation-check | identify | track | ilc-train | pickplace
            [--config PATH] [--seed N] [--out DIR] [--trials N]
            [--iterations N] [--warm-start PATH ...] [--emit-plot-data]

Exit codes: 0 success, 2 configuration/usage error, 3 numerical failure,
4 property violation. Every CSV starts with a ``# seed=<n>`` line.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import allocation as A
from .config import ExperimentConfig
from .errors import ConfigError, SoftArmError
from .ilc import IlcWeights, load_correction, run_ilc, save_correction, warm_start_concatenate
from .pickplace import evaluate_trials, train_phases
from .plant import PlantConfig, simulate_open_loop
from .simulation import simulate_closed_loop
from .sysid import (SineExperiment, default_grid, extract_physical_parameters, fit_parameter_polynomials,
                    fit_transfer_function, run_sine_experiment, sup_relative_error)
from .trajectory import build_pick_place_plan, build_step_plan, build_transition_plan

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_PROPERTY = 4


class PropertyViolation(Exception):
    pass


def _writer(path: Path, seed: int, header):
    fh = open(path, "w", newline="")
    fh.write(f"# seed={seed}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    return fh, w


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_rows(path: Path, seed: int, header, rows):
    fh, w = _writer(path, seed, header)
    with fh:
        for r in rows:
            w.writerow([_fmt(v) for v in r])


# -- allocation check ---------------------------------------------------------

def round_trip_check(n: int, seed: int, tol: float = 1e-12):
    """Random Delta Representation samples through xi and back.

    Returns ``(worst_error, offending_index or None)``.
    """
    rng = np.random.default_rng(seed)
    delta = A.DeltaRepresentation(rng.uniform(A.PBAR_MIN, A.PBAR_MAX, n),
                                  rng.uniform(-2.0, 2.0, n), rng.uniform(-2.0, 2.0, n))
    p = A.xi(delta)
    back = A.xi_inverse(p)
    err = np.max(np.abs(np.column_stack(back) - np.column_stack(delta)), axis=1)
    floor = np.minimum(np.minimum(p.p_a, p.p_b), p.p_c) != delta.p_bar
    diffs, _ = A.differences_from_absolute(p)
    rec = A.recouple(delta.dp_alpha, delta.dp_beta)
    diff_err = np.maximum(np.abs(diffs.dp_ab - rec.dp_ab), np.abs(diffs.dp_bc - rec.dp_bc))
    bad = np.flatnonzero((err > tol) | floor | (diff_err > tol))
    return float(max(err.max(), diff_err.max())), (int(bad[0]) if bad.size else None), delta


def lissajous_similarity(plant: PlantConfig, p_bar: float = 1.05, amplitude: float = 0.3,
                         f_alpha: float = 0.1, f_beta: float = 0.2, periods: int = 2):
    """Replay a Lissajous pressure-difference figure open loop.

    Returns ``(similarity, closure_gap, t, dp, angles)``; similarity is the
    smaller per-axis normalized correlation between angle and commanded
    difference over the last period, closure_gap the angle distance between
    the start and end of that period (rad).
    """
    dt = plant.dt
    period = 1.0 / f_alpha
    n = int(round(periods * period / dt))
    t = np.arange(n) * dt
    dpa = amplitude * np.sin(2 * np.pi * f_alpha * t)
    dpb = amplitude * np.sin(2 * np.pi * f_beta * t + np.pi / 2)
    res = simulate_open_loop(plant, dpa, dpb, p_bar, m=0.0)
    last = slice(n - int(round(period / dt)), n)
    ncc = []
    for y, u in ((res.alpha[:-1], dpa), (res.beta[:-1], dpb)):
        y, u = y[last] - y[last].mean(), u[last] - u[last].mean()
        ncc.append(float(np.dot(y, u) / (np.linalg.norm(y) * np.linalg.norm(u))))
    ang = np.column_stack([res.alpha, res.beta])
    gap = float(np.linalg.norm(ang[n] - ang[last.start]))
    return min(ncc), gap, t, np.column_stack([dpa, dpb]), ang[:-1]


def cmd_allocation_check(cfg: ExperimentConfig, args, out: Path) -> int:
    samples = args.samples
    worst, bad, delta = round_trip_check(samples, cfg.seed)
    print(f"round trip over {samples} samples: worst error {worst:.3e}")
    lin = cfg.plant.linear()
    sim, gap, t, dp, ang = lissajous_similarity(lin)
    print(f"lissajous at p_bar = 1.05 bar: similarity {sim:.4f}, closure gap {math.degrees(gap):.2e} deg")
    write_rows(out / "allocation_check.csv", cfg.seed, ("check", "value", "pass"),
               [("round_trip_worst", worst, int(bad is None)), ("lissajous_similarity", sim, int(sim >= 0.95)),
                ("lissajous_closure_gap_rad", gap, int(gap < 1e-3))])
    if args.emit_plot_data:
        step = 10
        write_rows(out / "plot_lissajous.csv", cfg.seed, ("time", "dp_alpha", "dp_beta", "alpha", "beta"),
                   np.column_stack([t, dp, ang])[::step])
    if bad is not None:
        d = [float(v[bad]) for v in delta]
        raise PropertyViolation(f"allocation property violated at sample {bad}: (p_bar, dp_alpha, dp_beta) = {d}")
    if sim < 0.95 or gap >= 1e-3:
        raise PropertyViolation(f"decoupling check failed: similarity {sim:.4f}, closure gap {gap:.3e} rad")
    return EXIT_OK


# -- identification -----------------------------------------------------------

def cmd_identify(cfg: ExperimentConfig, args, out: Path) -> int:
    opts = cfg.identify
    plant = cfg.plant.linear()
    freqs = default_grid(plant.dt, int(opts["n_frequencies"]), float(opts["f_lo"]), float(opts["f_hi"]))
    levels = [float(p) for p in opts["levels"]]
    inertia = plant.mech.inertia(0.0)
    estimates, failures = {"alpha": [], "beta": []}, []
    for p in levels:
        for axis in ("alpha", "beta"):
            exp = SineExperiment(tuple(freqs), float(opts["amplitude"]), int(opts["periods"]),
                                 int(opts["discard"]), p, axis)
            data = run_sine_experiment(exp, plant)
            data.to_csv(out / f"bode_{axis}_p{p:.2f}.csv", seed=cfg.seed)
            try:
                estimates[axis].append(extract_physical_parameters(fit_transfer_function(data), inertia))
            except SoftArmError as exc:
                failures.append(f"{axis} at p_bar = {p:.2f}: {exc}")
                print(f"fit failed for {axis} at p_bar = {p:.2f} bar: {exc}")
    if failures:
        raise FloatingPointError("; ".join(failures))
    joint = fit_parameter_polynomials(levels, estimates, opts["degrees"])
    fitted = PlantConfig(mech=cfg.plant.mech, joint=joint, dist=cfg.plant.dist, pressure_lag=cfg.plant.pressure_lag,
                         pressure_max=cfg.plant.pressure_max, dt=cfg.plant.dt, angle_limit=cfg.plant.angle_limit)
    with open(out / "fitted_plant.json", "w") as fh:
        json.dump(fitted.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    rows = []
    for axis in ("alpha", "beta"):
        errs = sup_relative_error(joint.axis(axis), cfg.plant.joint.axis(axis))
        for name, v in errs.items():
            rows.append((axis, name, v))
            print(f"{axis:5s} {name:3s}: sup relative error {100 * v:.3f} %")
        for p, est in zip(levels, estimates[axis]):
            rows.append((axis, f"k@{p:.2f}", est.k))
    write_rows(out / "identify_summary.csv", cfg.seed, ("axis", "quantity", "value"), rows)
    return EXIT_OK


# -- tracking -----------------------------------------------------------------

def cmd_track(cfg: ExperimentConfig, args, out: Path) -> int:
    opts = cfg.track
    plant = cfg.plant.linear() if opts["linear"] else cfg.plant
    rows, rms = [], {}
    for m in (0.0, float(opts["m_load"])):
        plan = build_step_plan(opts["alpha_deg"], opts["beta_deg"], float(opts["hold"]), cfg.trajectory.ts,
                               float(opts["p_bar"]), m)
        r = simulate_closed_loop(plan, plant, cfg.controller, seed=cfg.seed)
        if not r.ok:
            raise FloatingPointError(f"tracking rollout diverged at sample {r.status} (m = {m})")
        mt = r.metrics()
        rms[m] = r.rms()
        rows.append((m, *(math.degrees(mt[k]) for k in ("rms_alpha", "rms_beta", "max_alpha", "max_beta"))))
        r.write_csv(out / f"track_m{m:.3f}.csv", seed=cfg.seed)
        print(f"m = {m:.3f} kg: RMS alpha {rows[-1][1]:.3f} deg, beta {rows[-1][2]:.3f} deg; "
              f"max alpha {rows[-1][3]:.3f} deg, beta {rows[-1][4]:.3f} deg")
    masses = list(rms)
    ratio = rms[masses[1]] / rms[masses[0]] if rms[masses[0]] > 0 else float("nan")
    print(f"RMS ratio across masses: {ratio:.4f}")
    write_rows(out / "track_summary.csv", cfg.seed,
               ("m", "rms_alpha_deg", "rms_beta_deg", "max_alpha_deg", "max_beta_deg"), rows)
    return EXIT_OK


# -- learning -----------------------------------------------------------------

def _weights(cfg, n):
    o = cfg.ilc
    return IlcWeights.scaled(n, float(o["w_e"]), float(o["w_du"]), float(o["w_ud"]))


def _ilc_task_plan(cfg: ExperimentConfig):
    """(plan, start sample in the pick-and-place plan or 0)."""
    task = cfg.ilc["task"]
    if task == "transition":
        return build_transition_plan(ts=cfg.trajectory.ts, p_bar=float(cfg.ilc["p_bar"]), m=float(cfg.ilc["m"])), 0
    plan = build_pick_place_plan(cfg.trajectory)
    if task == "pickplace":
        return plan, 0
    phases = {"phase-I": 0, "phase-II": 1, "phase-III": 2}
    if task not in phases:
        raise ConfigError(f"unknown ilc task {task!r}")
    i = phases[task]
    start = max(plan.boundaries[i] - int(cfg.ilc["lead"]), 0)
    return plan.slice(start, plan.boundaries[i + 1]), start


def _emit_traces(out: Path, name: str, seed: int, results):
    rows = []
    for label, r in results:
        for k in range(len(r.plan)):
            rows.append((label, k * r.plan.ts, r.plan.alpha[k], r.plan.beta[k], r.y[k, 0], r.y[k, 1]))
    write_rows(out / name, seed, ("iteration", "time", "alpha_sp", "beta_sp", "alpha", "beta"), rows)


def cmd_ilc_train(cfg: ExperimentConfig, args, out: Path) -> int:
    plan, start = _ilc_task_plan(cfg)
    iterations = args.iterations or int(cfg.ilc["iterations"])
    hist = run_ilc(plan, cfg.plant, _weights(cfg, len(plan)), iterations, ctrl=cfg.controller, seed=cfg.seed,
                   plateau_stop=bool(cfg.ilc["plateau_stop"]))
    hist.write_csv(out / "ilc_history.csv", seed=cfg.seed)
    if hist.iterates:
        save_correction(out / "ilc_correction.csv", hist.final_u, plan.ts, seed=cfg.seed, start=start)
    for it in hist.iterates:
        m = it.metrics
        print(f"iteration {it.iteration:3d}: RMS {math.degrees(m['rms_alpha']):.3f} / "
              f"{math.degrees(m['rms_beta']):.3f} deg, max {math.degrees(m['max_alpha']):.3f} / "
              f"{math.degrees(m['max_beta']):.3f} deg")
    if hist.stopped_early:
        print(f"stopped on RMS plateau after iteration {hist.iterates[-1].iteration}")
    if args.emit_plot_data and hist.iterates:
        first = simulate_closed_loop(plan, cfg.plant, cfg.controller, correction=hist.iterates[0].u, seed=cfg.seed)
        last = simulate_closed_loop(plan, cfg.plant, cfg.controller, correction=hist.final_u,
                                    seed=cfg.seed + hist.iterates[-1].iteration)
        _emit_traces(out, "plot_ilc_traces.csv", cfg.seed, [(0, first), (hist.iterates[-1].iteration, last)])
    if hist.failed:
        raise FloatingPointError(hist.failure)
    return EXIT_OK


def cmd_pickplace(cfg: ExperimentConfig, args, out: Path) -> int:
    plan = build_pick_place_plan(cfg.trajectory)
    opts = cfg.pickplace
    weights_scale = {k: float(cfg.ilc[k]) for k in ("w_e", "w_du", "w_ud")}
    if args.cold_start:
        u0 = np.zeros(2 * len(plan))
    elif args.warm_start:
        loaded = [load_correction(p) for p in args.warm_start]
        u0 = warm_start_concatenate([u for u, _ in loaded], plan.boundaries, [s for _, s in loaded])
    else:
        hists, starts = train_phases(plan, cfg.plant, int(opts["phase_iterations"]), int(cfg.ilc["lead"]),
                                     weights_scale, cfg.seed, cfg.controller)
        for h, s, name in zip(hists, starts, ("I", "II", "III")):
            if h.failed:
                raise FloatingPointError(f"phase {name}: {h.failure}")
            save_correction(out / f"phase_{name}_correction.csv", h.final_u, plan.ts, seed=cfg.seed, start=s)
        u0 = warm_start_concatenate([h.final_u for h in hists], plan.boundaries, starts)
    save_correction(out / "warm_start_correction.csv", u0, plan.ts, seed=cfg.seed)
    iterations = args.iterations or int(opts["joint_iterations"])
    joint = run_ilc(plan, cfg.plant, _weights(cfg, len(plan)), iterations, initial_u=u0, ctrl=cfg.controller,
                    seed=cfg.seed + 10_000)
    joint.write_csv(out / "pickplace_history.csv", seed=cfg.seed)
    if joint.failed:
        raise FloatingPointError(joint.failure)
    save_correction(out / "pickplace_correction.csv", joint.final_u, plan.ts, seed=cfg.seed)
    trials = args.trials if args.trials is not None else int(opts["trials"])
    reports = evaluate_trials(plan, cfg.plant, joint.final_u, trials, cfg.seed + 20_000,
                              float(opts["threshold_deg"]), cfg.controller)
    write_rows(out / "pickplace_trials.csv", cfg.seed,
               ("trial", "seed", "eject_max_alpha_deg", "eject_max_beta_deg", "success"),
               [(i, t.seed, math.degrees(t.eject_max_alpha), math.degrees(t.eject_max_beta), int(t.success))
                for i, t in enumerate(reports)])
    ok = sum(t.success for t in reports)
    print(f"joint training: {len(joint.iterates)} iterations, final RMS {math.degrees(joint.rms()[-1]):.3f} deg")
    print(f"{ok}/{len(reports)} trials within {opts['threshold_deg']} deg over the eject window")
    if args.emit_plot_data:
        first = simulate_closed_loop(plan, cfg.plant, cfg.controller, correction=u0, seed=cfg.seed)
        last = simulate_closed_loop(plan, cfg.plant, cfg.controller, correction=joint.final_u, seed=cfg.seed + 1)
        _emit_traces(out, "plot_pickplace_traces.csv", cfg.seed, [(0, first), (len(joint.iterates) - 1, last)])
    failed = [t for t in reports if not t.success]
    for t in failed:
        r = simulate_closed_loop(plan, cfg.plant, cfg.controller, correction=joint.final_u, seed=t.seed)
        r.write_csv(out / f"failed_trial_seed{t.seed}.csv", seed=t.seed)
        print(f"trial seed {t.seed} failed: eject error {math.degrees(t.eject_max_alpha):.3f} / "
              f"{math.degrees(t.eject_max_beta):.3f} deg")
    if failed:
        raise PropertyViolation(f"{len(failed)} of {len(reports)} trials failed")
    return EXIT_OK


COMMANDS = {
    "allocation-check": cmd_allocation_check,
    "identify": cmd_identify,
    "track": cmd_track,
    "ilc-train": cmd_ilc_train,
    "pickplace": cmd_pickplace,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="softarm", description="Soft-arm control stack experiments.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON experiment config (defaults apply when omitted)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--trials", type=int, help="pickplace: number of evaluation trials")
    parser.add_argument("--iterations", type=int, help="ilc-train / pickplace: learning iterations")
    parser.add_argument("--warm-start", nargs="+", metavar="PATH", help="pickplace: per-phase correction files")
    parser.add_argument("--cold-start", action="store_true", help="pickplace: start joint training from zero")
    parser.add_argument("--samples", type=int, default=100_000, help="allocation-check: random samples")
    parser.add_argument("--emit-plot-data", action="store_true", help="also write figure-shaped trace CSVs")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        for name in ("trials", "iterations", "samples"):
            v = getattr(args, name)
            if v is not None and v < 1:
                raise ConfigError(f"--{name} must be >= 1")
        out = Path(args.out or cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config_used.json")
        return COMMANDS[args.command](cfg, args, out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PropertyViolation as exc:
        print(f"property violation: {exc}", file=sys.stderr)
        return EXIT_PROPERTY
    except (SoftArmError, FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

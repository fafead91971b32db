"""Time the numeric kernels with and without numba.

    python benchmarks/bench_kernels.py [--repeat 5]

Each variant runs in a fresh interpreter because SOFTARM_DISABLE_JIT is read
at import time.
"""
import argparse
import json
import os
import subprocess
import sys

WORKLOAD = r"""
import json, sys, time
import numpy as np
from softarm import _accel
from softarm.plant import PlantConfig, simulate_open_loop
from softarm.simulation import simulate_closed_loop
from softarm.trajectory import build_pick_place_plan

repeat = int(sys.argv[1])
cfg = PlantConfig()
plan = build_pick_place_plan()
t = np.arange(10_000) * 1e-3
dpa = 0.3 * np.sin(2 * np.pi * t)

t0 = time.perf_counter()
simulate_closed_loop(plan, cfg, seed=0)          # includes JIT compilation (or cache load)
simulate_open_loop(cfg, dpa, 0.0 * dpa, 1.1)
warmup = time.perf_counter() - t0

def best(fn):
    times = []
    for _ in range(repeat):
        s = time.perf_counter()
        fn()
        times.append(time.perf_counter() - s)
    return min(times)

print(json.dumps({
    "jit": _accel.JIT_ENABLED,
    "first_call_s": warmup,
    "pickplace_rollout_s": best(lambda: simulate_closed_loop(plan, cfg, seed=1)),
    "open_loop_10s_s": best(lambda: simulate_open_loop(cfg, dpa, 0.0 * dpa, 1.1)),
}))
"""


def run(disable: bool, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("SOFTARM_DISABLE_JIT", None)
    if disable:
        env["SOFTARM_DISABLE_JIT"] = "1"
    out = subprocess.run([sys.executable, "-c", WORKLOAD, str(repeat)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(out.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    fast = run(False, args.repeat)
    slow = run(True, args.repeat)
    print(f"{'workload':24s} {'numba':>10s} {'python':>10s} {'speedup':>8s}")
    for key in ("pickplace_rollout_s", "open_loop_10s_s"):
        print(f"{key:24s} {fast[key]:10.4f} {slow[key]:10.4f} {slow[key] / fast[key]:8.1f}x")
    print(f"{'first call (compile)':24s} {fast['first_call_s']:10.4f} {slow['first_call_s']:10.4f}")
    if not fast["jit"]:
        print("note: numba unavailable, both columns ran the Python path")


if __name__ == "__main__":
    main()

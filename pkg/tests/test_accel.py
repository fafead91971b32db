import os
import subprocess
import sys

import numpy as np
import pytest

SCRIPT = r"""
import sys
import numpy as np
from softarm import _accel
from softarm.plant import PlantConfig
from softarm.plant import simulate_open_loop
from softarm.simulation import simulate_closed_loop
from softarm.trajectory import build_pick_place_plan

cfg = PlantConfig()
plan = build_pick_place_plan()
u = 0.01 * np.sin(np.arange(2 * plan.n) * 0.1)
r = simulate_closed_loop(plan, cfg, correction=u, seed=3)
t = np.arange(3000) * 1e-3
o = simulate_open_loop(cfg, 0.3 * np.sin(2 * np.pi * t), 0.2 * np.cos(3 * t), 1.1, m=0.1)
np.savez(sys.argv[1], jit=_accel.JIT_ENABLED, y=r.y, ym=r.y_meas, dp=r.dp_cmd, psp=r.p_setpoint, ol=o.states)
"""


def run(tmp_path, disable):
    env = dict(os.environ)
    env.pop("SOFTARM_DISABLE_JIT", None)
    if disable:
        env["SOFTARM_DISABLE_JIT"] = "1"
    path = tmp_path / f"out_{int(disable)}.npz"
    subprocess.run([sys.executable, "-c", SCRIPT, str(path)], check=True, env=env)
    return np.load(path)


def test_jit_and_python_paths_agree(tmp_path):
    pytest.importorskip("numba")
    fast, slow = run(tmp_path, False), run(tmp_path, True)
    assert bool(fast["jit"]) and not bool(slow["jit"])
    for key in ("y", "ym", "dp", "psp", "ol"):
        np.testing.assert_allclose(fast[key], slow[key], rtol=1e-12, atol=1e-13, err_msg=key)

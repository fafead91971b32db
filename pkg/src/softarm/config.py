"""Experiment configuration stored as JSON.

Top-level keys (all optional)::

    seed           integer seed for every random draw
    output_dir     directory for CSV/JSON outputs
    plant          inline plant mapping, or a path to a JSON file holding one
    controller     inline controller mapping, or a path
    ilc            {"w_e", "w_du", "w_ud", "iterations", "plateau_stop", "lead",
                    "task": "transition" | "pickplace" | "phase-I" | "phase-II" | "phase-III",
                    "m", "p_bar"}
    trajectory     pick-and-place timing (see PickPlaceConfig)
    identify       {"levels", "n_frequencies", "f_lo", "f_hi", "amplitude",
                    "periods", "discard", "degrees"}
    track          {"alpha_deg", "beta_deg", "hold", "p_bar", "m_load", "linear"}
    pickplace      {"phase_iterations", "joint_iterations", "trials", "threshold_deg"}

Relative paths are resolved against the config file's directory.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .control import ControllerParams
from .errors import ConfigError, SoftArmError
from .ilc import DEFAULT_WEIGHTS
from .plant import PlantConfig
from .trajectory import PickPlaceConfig

ILC_DEFAULTS = {**DEFAULT_WEIGHTS, "iterations": 25, "plateau_stop": False, "lead": 10,
                "task": "transition", "m": 0.0, "p_bar": 1.1}
IDENTIFY_DEFAULTS = {"levels": [1.0, 1.05, 1.1, 1.15, 1.2], "n_frequencies": 150, "f_lo": 0.2, "f_hi": 8.0,
                     "amplitude": 0.1, "periods": 10, "discard": 4,
                     "degrees": {"k": 1, "d": 2, "eta": 2, "T": 2}}
TRACK_DEFAULTS = {"alpha_deg": [0.0, 10.0, -5.0, 5.0], "beta_deg": [0.0, -5.0, 7.5, 0.0], "hold": 1.0,
                  "p_bar": 1.1, "m_load": 0.2, "linear": True}
PICKPLACE_DEFAULTS = {"phase_iterations": 25, "joint_iterations": 34, "trials": 50, "threshold_deg": 1.0}
TOP_KEYS = {"seed", "output_dir", "plant", "controller", "ilc", "trajectory", "identify", "track", "pickplace"}


def _section(raw: dict, name: str, defaults: dict) -> dict:
    value = raw.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"'{name}' must be a mapping")
    unknown = set(value) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")
    return {**defaults, **value}


def _load_json(path: Path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _inline_or_file(value, base: Path, what: str) -> dict:
    if value is None:
        return {}
    if isinstance(value, str):
        return _load_json(base / value)
    if isinstance(value, dict):
        return value
    raise ConfigError(f"'{what}' must be a mapping or a path")


@dataclass
class ExperimentConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    controller: ControllerParams = None
    ilc: dict = field(default_factory=lambda: dict(ILC_DEFAULTS))
    trajectory: PickPlaceConfig = field(default_factory=PickPlaceConfig)
    identify: dict = field(default_factory=lambda: dict(IDENTIFY_DEFAULTS))
    track: dict = field(default_factory=lambda: dict(TRACK_DEFAULTS))
    pickplace: dict = field(default_factory=lambda: dict(PICKPLACE_DEFAULTS))
    seed: int = 0
    output_dir: str = "out"

    def __post_init__(self):
        if self.controller is None:
            self.controller = ControllerParams.default(self.plant.joint, ts=self.trajectory.ts)

    @classmethod
    def from_dict(cls, raw: dict, base: str | os.PathLike = ".") -> "ExperimentConfig":
        base = Path(base)
        unknown = set(raw) - TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        try:
            plant = PlantConfig.from_dict(_inline_or_file(raw.get("plant"), base, "plant"))
            trajectory = PickPlaceConfig.from_dict(raw.get("trajectory", {}))
            ctrl_raw = dict(_inline_or_file(raw.get("controller"), base, "controller"))
            ctrl_raw.setdefault("ts", trajectory.ts)
            controller = ControllerParams.from_dict(ctrl_raw, plant.joint)
            seed = int(raw.get("seed", 0))
        except ConfigError:
            raise
        except (SoftArmError, TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from None
        if seed < 0 or seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        return cls(plant=plant, controller=controller, ilc=_section(raw, "ilc", ILC_DEFAULTS),
                   trajectory=trajectory, identify=_section(raw, "identify", IDENTIFY_DEFAULTS),
                   track=_section(raw, "track", TRACK_DEFAULTS),
                   pickplace=_section(raw, "pickplace", PICKPLACE_DEFAULTS), seed=seed,
                   output_dir=str(raw.get("output_dir", "out")))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(_load_json(path), path.parent)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "output_dir": self.output_dir, "plant": self.plant.to_dict(),
                "controller": self.controller.to_dict(), "ilc": dict(self.ilc),
                "trajectory": self.trajectory.to_dict(), "identify": dict(self.identify),
                "track": dict(self.track), "pickplace": dict(self.pickplace)}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

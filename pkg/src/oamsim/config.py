"""Run configuration: defaults, JSON loading, validation, and echoing.

Every value is validated against the module preconditions before any compute
starts, so a bad configuration fails fast with exit code 2 from the CLI.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .optics import GridSpec
from .modes import max_waist
from .training import GATE_TARGET_NAMES


class ConfigError(ValueError):
    """Invalid run configuration or input file schema."""


DEFAULT_CONFIG = {
    "grid": {"n": 128, "pitch": 20e-6, "wavelength": 1.55e-6},
    "stack": {"layers": 4, "spacing": 0.010},
    # separate waists per |l| family keep the ring modes radially disjoint,
    # which is what lets a 4-layer stack train to low mode crosstalk
    "modes": {"waist_small": 1.4e-4, "waist_large": 3.0e-4},
    "training": {
        "iterations": 1000,
        "learning_rate": 0.02,
        "seed": 7,
        "loss": "mse",
        "superposition_pairs": True,
        "init_span": 0.1,
    },
    "target": "toffoli-cnot",
    "v_path": "ideal",
    "tomography": {
        "mean_total": None,
        "visibility_trials": 100,
        "process_trials": 10,
        "monte_carlo_mean_total": 1e4,
        "qst_iterations": 5000,
        "qpt_iterations": 2000,
        "qst_tol": 1e-10,
        "qpt_tol": 1e-10,
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration tree; ``raw`` is the exact dict echoed to reports."""

    raw: dict = field(repr=False)

    @property
    def grid(self) -> GridSpec:
        g = self.raw["grid"]
        return GridSpec(n=g["n"], pitch=g["pitch"], wavelength=g["wavelength"])

    @property
    def layers(self) -> int:
        return self.raw["stack"]["layers"]

    @property
    def spacing(self) -> float:
        return self.raw["stack"]["spacing"]

    @property
    def waists(self) -> tuple[float, float]:
        m = self.raw["modes"]
        return (m["waist_small"], m["waist_large"])

    @property
    def target(self) -> str:
        return self.raw["target"]

    @property
    def training(self) -> dict:
        return self.raw["training"]

    @property
    def v_path(self) -> str:
        return self.raw["v_path"]

    @property
    def tomography(self) -> dict:
        return self.raw["tomography"]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def _merge(base: dict, override: dict, path: str = "") -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a table")
            merged[key] = _merge(base[key], value, where)
        else:
            merged[key] = value
    return merged


def _validate(raw: dict) -> None:
    try:
        grid = GridSpec(
            n=int(raw["grid"]["n"]),
            pitch=float(raw["grid"]["pitch"]),
            wavelength=float(raw["grid"]["wavelength"]),
        )
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None

    stack = raw["stack"]
    if not isinstance(stack["layers"], int) or stack["layers"] < 1:
        raise ConfigError(f"stack.layers must be a positive integer, got {stack['layers']}")
    if stack["spacing"] <= 0:
        raise ConfigError(f"stack.spacing must be positive, got {stack['spacing']}")

    w_small, w_large = raw["modes"]["waist_small"], raw["modes"]["waist_large"]
    for name, w, l in (("waist_small", w_small, 1), ("waist_large", w_large, 3)):
        if w <= 0:
            raise ConfigError(f"modes.{name} must be positive, got {w}")
        limit = max_waist(grid, l)
        if w >= limit:
            raise ConfigError(
                f"modes.{name}={w:g} m violates the aperture guard for |l|={l}; "
                f"maximum is {limit:.4g} m on this grid"
            )

    training = raw["training"]
    if not isinstance(training["iterations"], int) or training["iterations"] < 1:
        raise ConfigError(
            f"training.iterations must be a positive integer, got {training['iterations']}"
        )
    if training["learning_rate"] <= 0:
        raise ConfigError("training.learning_rate must be positive")
    if training["loss"] not in ("mse", "mae"):
        raise ConfigError(f"training.loss must be 'mse' or 'mae', got {training['loss']!r}")
    if training["init_span"] < 0:
        raise ConfigError("training.init_span must be >= 0")

    if raw["target"] not in GATE_TARGET_NAMES:
        raise ConfigError(f"target must be one of {GATE_TARGET_NAMES}, got {raw['target']!r}")
    if raw["v_path"] not in ("ideal", "propagated"):
        raise ConfigError(f"v_path must be 'ideal' or 'propagated', got {raw['v_path']!r}")

    tomo = raw["tomography"]
    if tomo["mean_total"] is not None and tomo["mean_total"] <= 0:
        raise ConfigError("tomography.mean_total must be positive or null")
    for key in ("visibility_trials", "process_trials"):
        if not isinstance(tomo[key], int) or tomo[key] < 0:
            raise ConfigError(f"tomography.{key} must be a non-negative integer")
        if tomo[key] and tomo[key] < 10:
            raise ConfigError(f"tomography.{key} must be 0 (off) or >= 10")
    for key in ("qst_iterations", "qpt_iterations"):
        if not isinstance(tomo[key], int) or tomo[key] < 1:
            raise ConfigError(f"tomography.{key} must be a positive integer")
    if tomo["monte_carlo_mean_total"] <= 0:
        raise ConfigError("tomography.monte_carlo_mean_total must be positive")


def make_config(overrides: dict | None = None) -> RunConfig:
    """Defaults merged with an override tree, validated."""
    raw = _merge(DEFAULT_CONFIG, overrides or {})
    _validate(raw)
    return RunConfig(raw=raw)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config file (optional) and apply CLI overrides on top."""
    file_overrides: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            with open(p) as fh:
                file_overrides = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        if not isinstance(file_overrides, dict):
            raise ConfigError(f"{p}: top-level config must be an object")
    merged = _merge(DEFAULT_CONFIG, file_overrides)
    if overrides:
        merged = _merge(merged, overrides)
    _validate(merged)
    return RunConfig(raw=merged)

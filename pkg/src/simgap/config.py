"""Pipeline configuration: YAML schema, validation, and system construction.

One config file fully specifies an experiment, seeds included; stages read
everything from it so reruns are reproducible byte for byte. Validation
collects every violation before failing, not just the first.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Any, List, Optional

import numpy as np
import yaml

from .cover import DEFAULT_CENTER_CAP, enumerate_inputs
from .errors import ConfigError
from .synth import DEFAULT_CELL_CAP
from .systems import (
    BiasSpec,
    ExternalSimulator,
    NoiseSpec,
    NominalModel,
    StochasticSimulator,
    SyntheticSimulator,
    SystemSpec,
    affine,
    pendulum,
    turtlebot,
)

_SYSTEM_KINDS = ("turtlebot", "pendulum", "affine")
_BIAS_KINDS = ("zero", "constant", "linear", "sinusoidal")
_NOISE_LAWS = ("none", "gaussian", "uniform", "truncated-gaussian")
_SPEC_TYPES = ("invariance", "reach-avoid")


@dataclass
class PipelineConfig:
    raw: dict
    path: Optional[str] = None

    # populated by validate()
    system_kind: str = ""
    tau: float = 0.0
    state_box: Optional[np.ndarray] = None
    input_grid: Optional[np.ndarray] = None
    system_params: dict = field(default_factory=dict)
    backend: str = "synthetic"
    bias: Optional[BiasSpec] = None
    noise: Optional[NoiseSpec] = None
    external_command: Optional[list] = None
    external_timeout: float = 5.0
    epsilon: float = 0.0
    n_hat_1: int = 0
    delta1: Optional[np.ndarray] = None
    delta2: Optional[np.ndarray] = None
    basis_degree: Optional[np.ndarray] = None
    variance_safety_factor: float = 10.0
    lipschitz_safety_factor: float = 1.2
    lipschitz_f_override: Optional[np.ndarray] = None
    lipschitz_fhat_override: Optional[np.ndarray] = None
    grid_cells: Optional[tuple] = None
    growth_lipschitz: Optional[np.ndarray] = None
    spec_type: str = ""
    safe_box: Optional[np.ndarray] = None
    target_box: Optional[np.ndarray] = None
    obstacle_boxes: tuple = ()
    deadline: Optional[int] = None
    initial_state: Optional[np.ndarray] = None
    horizon: int = 0
    replicates: int = 0
    coverage_points: int = 0
    figures: bool = True
    master_seed: int = 0
    output_dir: str = "out"
    workers: int = 1
    max_cover_centers: int = DEFAULT_CENTER_CAP
    max_grid_cells: int = DEFAULT_CELL_CAP

    # ------------------------------------------------------------------
    def state_dim(self) -> int:
        return 0 if self.state_box is None else self.state_box.shape[0]

    def build_model(self) -> NominalModel:
        spec = SystemSpec(
            state_dim=self.state_box.shape[0],
            input_dim=self.input_grid.shape[1],
            tau=self.tau,
            state_box=self.state_box,
            input_grid=self.input_grid,
        )
        if self.system_kind == "turtlebot":
            return turtlebot(spec)
        if self.system_kind == "pendulum":
            return pendulum(
                spec,
                mass=self.system_params.get("mass", 1.0),
                length=self.system_params.get("length", 1.0),
                gravity=self.system_params.get("gravity", 9.81),
            )
        return affine(
            spec,
            a_matrix=self.system_params["a_matrix"],
            b_matrix=self.system_params["b_matrix"],
            offset=self.system_params.get("offset"),
        )

    def build_simulator(self, model: NominalModel) -> StochasticSimulator:
        if self.backend == "external":
            return ExternalSimulator(model.spec, self.external_command,
                                     timeout=self.external_timeout)
        return SyntheticSimulator(model, self.bias or BiasSpec(),
                                  self.noise or NoiseSpec())


def _as_box(value, name, errors) -> Optional[np.ndarray]:
    try:
        box = np.asarray(value, dtype=float)
        if box.ndim != 2 or box.shape[1] != 2:
            raise ValueError
        if np.any(box[:, 0] > box[:, 1]):
            errors.append(f"{name}: lower > upper in some interval")
        return box
    except (ValueError, TypeError):
        errors.append(f"{name}: expected a list of [lower, upper] pairs, got {value!r}")
        return None


def _per_dim(value, n, name, errors, integer=False) -> Optional[np.ndarray]:
    try:
        arr = np.broadcast_to(np.asarray(value, dtype=float), (n,)).copy()
    except (ValueError, TypeError):
        errors.append(f"{name}: expected a scalar or a length-{n} list, got {value!r}")
        return None
    if integer:
        if np.any(arr != np.round(arr)):
            errors.append(f"{name}: expected integers")
            return None
        return arr.astype(int)
    return arr


def load_config(path: str) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    cfg = PipelineConfig(raw=raw, path=path)
    validate_config(cfg)
    return cfg


def validate_config(cfg: PipelineConfig) -> None:
    """Populate typed fields from the raw mapping; raises ConfigError listing
    every violation found."""
    raw = cfg.raw
    errors: List[str] = []

    system = raw.get("system")
    if not isinstance(system, dict):
        errors.append("system: section missing")
        system = {}
    cfg.system_kind = system.get("kind", "")
    if cfg.system_kind not in _SYSTEM_KINDS:
        errors.append(f"system.kind: expected one of {_SYSTEM_KINDS}, got {cfg.system_kind!r}")
    tau = system.get("tau")
    if not isinstance(tau, (int, float)) or tau <= 0:
        errors.append(f"system.tau: expected a positive number, got {tau!r}")
    else:
        cfg.tau = float(tau)
    if "state_box" in system:
        cfg.state_box = _as_box(system["state_box"], "system.state_box", errors)
    else:
        errors.append("system.state_box: missing")
    grid = system.get("input_grid")
    if isinstance(grid, dict):
        try:
            cfg.input_grid = enumerate_inputs(grid["lo"], grid["hi"], grid["step"])
        except KeyError as exc:
            errors.append(f"system.input_grid: missing key {exc}")
        except Exception as exc:  # noqa: BLE001 - collected into the violation list
            errors.append(f"system.input_grid: {exc}")
    elif grid is not None:
        try:
            arr = np.asarray(grid, dtype=float)
            cfg.input_grid = arr.reshape(arr.shape[0], -1)
        except (ValueError, TypeError):
            errors.append(f"system.input_grid: unreadable grid {grid!r}")
    else:
        errors.append("system.input_grid: missing")
    cfg.system_params = system.get("params", {}) or {}
    if cfg.system_kind == "turtlebot" and cfg.state_box is not None and cfg.state_box.shape[0] != 3:
        errors.append("system.state_box: turtlebot needs 3 state dimensions")
    if cfg.system_kind == "pendulum" and cfg.state_box is not None and cfg.state_box.shape[0] != 2:
        errors.append("system.state_box: pendulum needs 2 state dimensions")
    if cfg.system_kind == "affine":
        for key in ("a_matrix", "b_matrix"):
            if key not in cfg.system_params:
                errors.append(f"system.params.{key}: required for affine systems")

    n = 0 if cfg.state_box is None else cfg.state_box.shape[0]

    simulator = raw.get("simulator")
    if not isinstance(simulator, dict):
        errors.append("simulator: section missing")
        simulator = {}
    cfg.backend = simulator.get("backend", "synthetic")
    if cfg.backend not in ("synthetic", "external"):
        errors.append(f"simulator.backend: expected synthetic or external, got {cfg.backend!r}")
    if cfg.backend == "synthetic":
        bias_raw = simulator.get("bias", {"kind": "zero"}) or {"kind": "zero"}
        kind = bias_raw.get("kind", "zero")
        if kind not in _BIAS_KINDS:
            errors.append(f"simulator.bias.kind: expected one of {_BIAS_KINDS}, got {kind!r}")
        else:
            try:
                cfg.bias = BiasSpec(
                    kind=kind,
                    offset=None if bias_raw.get("offset") is None
                    else np.asarray(bias_raw["offset"], dtype=float),
                    state_matrix=None if bias_raw.get("state_matrix") is None
                    else np.asarray(bias_raw["state_matrix"], dtype=float),
                    input_matrix=None if bias_raw.get("input_matrix") is None
                    else np.asarray(bias_raw["input_matrix"], dtype=float),
                    amplitude=None if bias_raw.get("amplitude") is None
                    else np.asarray(bias_raw["amplitude"], dtype=float),
                    frequency=None if bias_raw.get("frequency") is None
                    else np.asarray(bias_raw["frequency"], dtype=float),
                    phase=None if bias_raw.get("phase") is None
                    else np.asarray(bias_raw["phase"], dtype=float),
                )
            except (ValueError, TypeError) as exc:
                errors.append(f"simulator.bias: {exc}")
        noise_raw = simulator.get("noise", {"law": "none"}) or {"law": "none"}
        law = noise_raw.get("law", "none")
        if law not in _NOISE_LAWS:
            errors.append(f"simulator.noise.law: expected one of {_NOISE_LAWS}, got {law!r}")
        else:
            try:
                cfg.noise = NoiseSpec(
                    law=law,
                    sigma=noise_raw.get("sigma"),
                    clip=float(noise_raw.get("clip", 3.0)),
                )
            except Exception as exc:  # noqa: BLE001
                errors.append(f"simulator.noise: {exc}")
    else:
        cmd = simulator.get("command")
        if not isinstance(cmd, list) or not cmd:
            errors.append("simulator.command: external backend needs a command list")
        else:
            cfg.external_command = [str(part) for part in cmd]
        cfg.external_timeout = float(simulator.get("timeout", 5.0))

    gap = raw.get("gap")
    if not isinstance(gap, dict):
        errors.append("gap: section missing")
        gap = {}
    eps = gap.get("epsilon")
    if not isinstance(eps, (int, float)) or eps <= 0:
        errors.append(f"gap.epsilon: expected a positive number, got {eps!r}")
    else:
        cfg.epsilon = float(eps)
    n_hat = gap.get("n_hat_1")
    if not isinstance(n_hat, int) or n_hat < 2:
        errors.append(f"gap.n_hat_1: expected an integer >= 2, got {n_hat!r}")
    else:
        cfg.n_hat_1 = n_hat
    if n:
        cfg.delta1 = _per_dim(gap.get("delta1", 0.0), n, "gap.delta1", errors)
        cfg.delta2 = _per_dim(gap.get("delta2", 0.0), n, "gap.delta2", errors)
        if cfg.delta1 is not None and np.any(cfg.delta1 <= 0):
            errors.append("gap.delta1: must be positive for the confidence bound")
        if cfg.delta2 is not None and np.any(cfg.delta2 <= 0):
            errors.append("gap.delta2: must be positive for the confidence bound")
        cfg.basis_degree = _per_dim(gap.get("basis_degree", 1), n, "gap.basis_degree",
                                    errors, integer=True)
        if gap.get("lipschitz_f_override") is not None:
            cfg.lipschitz_f_override = _per_dim(
                gap["lipschitz_f_override"], n, "gap.lipschitz_f_override", errors)
        if gap.get("lipschitz_fhat_override") is not None:
            cfg.lipschitz_fhat_override = _per_dim(
                gap["lipschitz_fhat_override"], n, "gap.lipschitz_fhat_override", errors)
    cfg.variance_safety_factor = float(gap.get("variance_safety_factor", 10.0))
    cfg.lipschitz_safety_factor = float(gap.get("lipschitz_safety_factor", 1.2))
    if cfg.variance_safety_factor < 1:
        errors.append("gap.variance_safety_factor: must be >= 1")

    synthesis = raw.get("synthesis")
    if not isinstance(synthesis, dict):
        errors.append("synthesis: section missing")
        synthesis = {}
    cells = synthesis.get("grid_cells")
    if cells is None:
        errors.append("synthesis.grid_cells: missing")
    else:
        arr = _per_dim(cells, n or len(np.atleast_1d(cells)), "synthesis.grid_cells",
                       errors, integer=True)
        if arr is not None:
            if np.any(arr < 1):
                errors.append("synthesis.grid_cells: every axis needs >= 1 cell")
            cfg.grid_cells = tuple(int(v) for v in arr)
    if synthesis.get("growth_lipschitz") is not None and n:
        cfg.growth_lipschitz = _per_dim(
            synthesis["growth_lipschitz"], n, "synthesis.growth_lipschitz", errors)
    spec = synthesis.get("spec")
    if not isinstance(spec, dict):
        errors.append("synthesis.spec: section missing")
        spec = {}
    cfg.spec_type = spec.get("type", "")
    if cfg.spec_type not in _SPEC_TYPES:
        errors.append(f"synthesis.spec.type: expected one of {_SPEC_TYPES}, got {cfg.spec_type!r}")
    if cfg.spec_type == "invariance":
        if "safe_box" in spec:
            cfg.safe_box = _as_box(spec["safe_box"], "synthesis.spec.safe_box", errors)
        else:
            errors.append("synthesis.spec.safe_box: required for invariance")
    if cfg.spec_type == "reach-avoid":
        if "target_box" in spec:
            cfg.target_box = _as_box(spec["target_box"], "synthesis.spec.target_box", errors)
        else:
            errors.append("synthesis.spec.target_box: required for reach-avoid")
        boxes = spec.get("obstacle_boxes", [])
        parsed = []
        for i, b in enumerate(boxes):
            pb = _as_box(b, f"synthesis.spec.obstacle_boxes[{i}]", errors)
            if pb is not None:
                parsed.append(pb)
        cfg.obstacle_boxes = tuple(parsed)
        if spec.get("deadline") is not None:
            cfg.deadline = int(spec["deadline"])

    validation = raw.get("validation")
    if not isinstance(validation, dict):
        errors.append("validation: section missing")
        validation = {}
    x0 = validation.get("initial_state")
    if x0 is None:
        errors.append("validation.initial_state: missing")
    else:
        try:
            cfg.initial_state = np.asarray(x0, dtype=float)
        except (ValueError, TypeError):
            errors.append(f"validation.initial_state: unreadable {x0!r}")
    horizon = validation.get("horizon")
    if not isinstance(horizon, int) or horizon < 1:
        errors.append(f"validation.horizon: expected a positive integer, got {horizon!r}")
    else:
        cfg.horizon = horizon
    reps = validation.get("replicates")
    if not isinstance(reps, int) or reps < 1:
        errors.append(f"validation.replicates: expected a positive integer, got {reps!r}")
    else:
        cfg.replicates = reps
    cfg.coverage_points = int(validation.get("coverage_points", 0))
    cfg.figures = bool(validation.get("figures", True))

    seeds = raw.get("seeds", {}) or {}
    cfg.master_seed = int(seeds.get("master", 0))

    cfg.output_dir = str(raw.get("output_dir", "out"))
    cfg.workers = int(raw.get("workers", 1))
    limits = raw.get("limits", {}) or {}
    cfg.max_cover_centers = int(limits.get("max_cover_centers", DEFAULT_CENTER_CAP))
    cfg.max_grid_cells = int(limits.get("max_grid_cells", DEFAULT_CELL_CAP))

    # environment overrides (output directory and worker count only)
    env_out = os.environ.get("SIMGAP_OUTPUT_DIR")
    if env_out:
        cfg.output_dir = env_out
    env_workers = os.environ.get("SIMGAP_WORKERS")
    if env_workers:
        try:
            cfg.workers = int(env_workers)
        except ValueError:
            errors.append(f"SIMGAP_WORKERS: not an integer: {env_workers!r}")

    # cross-section consistency
    if cfg.state_box is not None:
        if cfg.initial_state is not None and cfg.initial_state.shape != (n,):
            errors.append(
                f"validation.initial_state: length {cfg.initial_state.shape} != state dim {n}"
            )
        if cfg.grid_cells is not None and len(cfg.grid_cells) != n:
            errors.append(f"synthesis.grid_cells: length {len(cfg.grid_cells)} != state dim {n}")
        for name, box in (("safe_box", cfg.safe_box), ("target_box", cfg.target_box)):
            if box is not None and box.shape[0] != n:
                errors.append(f"synthesis.spec.{name}: dimension {box.shape[0]} != state dim {n}")

    if errors:
        raise ConfigError(errors)

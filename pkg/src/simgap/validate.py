"""Empirical validation: gap coverage and closed-loop Monte Carlo runs.

Coverage checks compare the fitted gap against the simulator's true mean
offset on held-out (x, u) pairs, using the exact bias when the backend is
synthetic (so the probabilistic claim is tested against ground truth rather
than another estimate). Closed-loop validation replays a synthesized
controller on the stochastic simulator with seeded replicates, averages the
realized trajectories, and checks invariance or reach-avoid satisfaction on
both the mean trajectory and every replicate.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidArgumentError
from .scp import GapModel
from .seeding import derive_seed
from .synth import Controller, lookup
from .systems import NominalModel, StochasticSimulator, SyntheticSimulator, true_mean_gap


def coverage_check(gap: GapModel, model: NominalModel, sim: StochasticSimulator,
                   test_points: Sequence[Tuple[np.ndarray, np.ndarray]],
                   n_test: int = 0, master_seed: int = 0) -> np.ndarray:
    """Per-dimension fraction of test points with |mean gap| <= gamma.

    Synthetic backends use the exact bias; otherwise the mean offset is
    estimated from ``n_test`` fresh replicates per point.
    """
    n = model.spec.state_dim
    hits = np.zeros(n)
    total = 0
    analytic = isinstance(sim, SyntheticSimulator)
    if not analytic and n_test < 2:
        raise InvalidArgumentError("non-synthetic backends need n_test replicates")
    for t, (x, u) in enumerate(test_points):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if analytic:
            offset = true_mean_gap(sim, x, u)
        else:
            seeds = [derive_seed(master_seed, 0xC0, t, k) for k in range(n_test)]
            mean = sim.replicates(x, u, seeds).mean(axis=0)
            offset = np.abs(mean - model.map_batch(x, u))
        hits += (offset <= gap.evaluate(x, u)).astype(float)
        total += 1
    if total == 0:
        raise InvalidArgumentError("coverage_check needs at least one test point")
    return hits / total


@dataclass
class TrajectoryBundle:
    """Replicated closed-loop trajectories sharing an initial state and policy.

    ``states[r]`` has shape (length_r, n) with length_r = horizon + 1 unless
    the replicate left the controller's domain, in which case it is truncated
    at the last resolvable state and flagged. The mean trajectory averages,
    at each step, the replicates still alive at that step.
    """

    initial_state: np.ndarray
    horizon: int
    states: List[np.ndarray]
    inputs: List[np.ndarray]
    truncated: np.ndarray           # (R,) bool
    mean_trajectory: np.ndarray     # (horizon+1, n), trailing rows may be NaN
    master_seed: int

    @property
    def n_replicates(self) -> int:
        return len(self.states)


def _mean_over_prefixes(states: List[np.ndarray], horizon: int, n: int) -> np.ndarray:
    mean = np.full((horizon + 1, n), np.nan)
    for t in range(horizon + 1):
        rows = [s[t] for s in states if s.shape[0] > t]
        if rows:
            mean[t] = np.mean(rows, axis=0)
    return mean


def run_closed_loop(controller: Controller, sim: StochasticSimulator, x0,
                    steps: int, replicates: int, master_seed: int) -> TrajectoryBundle:
    """Roll out ``replicates`` seeded trajectories under the controller.

    Each replicate consults the controller at its own current state; a None
    lookup truncates the replicate and marks it out-of-domain. Replicate r,
    step t uses the seed derived from (master_seed, r, t).
    """
    x0 = np.asarray(x0, dtype=float)
    cell = controller.grid.locate(x0)
    if cell is None or not controller.winning[cell]:
        where = "outside the grid" if cell is None else f"cell {cell} (not winning)"
        raise InvalidArgumentError(f"initial state {x0.tolist()} is {where}")

    all_states: List[np.ndarray] = []
    all_inputs: List[np.ndarray] = []
    truncated = np.zeros(replicates, dtype=bool)
    for r in range(replicates):
        xs = [x0]
        us = []
        x = x0
        for t in range(steps):
            u, status = lookup(controller, x)
            if u is None:
                truncated[r] = True
                break
            x = sim.step(x, u, derive_seed(master_seed, r, t))
            us.append(np.asarray(u, dtype=float))
            xs.append(x)
        all_states.append(np.stack(xs))
        all_inputs.append(np.stack(us) if us else np.zeros((0, controller.inputs.shape[1])))

    mean = _mean_over_prefixes(all_states, steps, x0.shape[0])
    return TrajectoryBundle(
        initial_state=x0, horizon=steps, states=all_states, inputs=all_inputs,
        truncated=truncated, mean_trajectory=mean, master_seed=master_seed,
    )


# ---------------------------------------------------------------------------
# Specification checking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InvarianceSpec:
    safe_box: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "safe_box", np.asarray(self.safe_box, dtype=float))

    def describe(self) -> dict:
        return {"type": "invariance", "safe_box": self.safe_box.tolist()}


@dataclass(frozen=True)
class ReachAvoidSpec:
    target_box: np.ndarray
    obstacle_boxes: tuple
    deadline: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "target_box", np.asarray(self.target_box, dtype=float))
        object.__setattr__(
            self, "obstacle_boxes",
            tuple(np.asarray(b, dtype=float) for b in self.obstacle_boxes),
        )

    def describe(self) -> dict:
        return {
            "type": "reach-avoid",
            "target_box": self.target_box.tolist(),
            "obstacle_boxes": [b.tolist() for b in self.obstacle_boxes],
            "deadline": self.deadline,
        }


def _in_box(x: np.ndarray, box: np.ndarray) -> bool:
    return bool(np.all(x >= box[:, 0]) and np.all(x <= box[:, 1]))


def _trajectory_satisfies(states: np.ndarray, spec, horizon: int,
                          truncated: bool) -> bool:
    """Satisfaction of one trajectory (rows may be fewer than horizon+1)."""
    if isinstance(spec, InvarianceSpec):
        if truncated or states.shape[0] < horizon + 1:
            return False
        return all(_in_box(states[t], spec.safe_box) for t in range(horizon + 1))
    if isinstance(spec, ReachAvoidSpec):
        deadline = spec.deadline if spec.deadline is not None else horizon
        limit = min(deadline, states.shape[0] - 1)
        for t in range(limit + 1):
            x = states[t]
            if any(_in_box(x, b) for b in spec.obstacle_boxes):
                return False
            if _in_box(x, spec.target_box):
                return True
        return False
    raise InvalidArgumentError(f"unknown specification {spec!r}")


@dataclass
class ValidationReport:
    spec_descriptor: dict
    per_replicate_satisfaction: float
    mean_trajectory_satisfied: bool
    n_replicates: int
    horizon: int
    declared_confidence: Optional[float] = None
    coverage: Optional[np.ndarray] = None
    n_truncated: int = 0
    metadata: dict = field(default_factory=dict)

    def validate(self):
        if not 0.0 <= self.per_replicate_satisfaction <= 1.0:
            raise InvalidArgumentError("satisfaction rate outside [0, 1]")
        if self.coverage is not None and (
            np.any(np.asarray(self.coverage) < 0) or np.any(np.asarray(self.coverage) > 1)
        ):
            raise InvalidArgumentError("coverage rates outside [0, 1]")


def check_spec(bundle: TrajectoryBundle, spec, deadline: Optional[int] = None) -> ValidationReport:
    """Evaluate the specification on the mean trajectory and every replicate."""
    if deadline is not None and isinstance(spec, ReachAvoidSpec):
        spec = ReachAvoidSpec(spec.target_box, spec.obstacle_boxes, deadline)
    sat = 0
    for r, states in enumerate(bundle.states):
        if _trajectory_satisfies(states, spec, bundle.horizon, bool(bundle.truncated[r])):
            sat += 1
    mean = bundle.mean_trajectory
    mean_valid = ~np.any(np.isnan(mean), axis=1)
    mean_states = mean[mean_valid]
    mean_ok = _trajectory_satisfies(
        mean_states, spec, bundle.horizon, truncated=bool((~mean_valid).any())
    )
    report = ValidationReport(
        spec_descriptor=spec.describe(),
        per_replicate_satisfaction=sat / max(1, bundle.n_replicates),
        mean_trajectory_satisfied=bool(mean_ok),
        n_replicates=bundle.n_replicates,
        horizon=bundle.horizon,
        n_truncated=int(bundle.truncated.sum()),
        metadata={"master_seed": bundle.master_seed,
                  "initial_state": bundle.initial_state.tolist()},
    )
    report.validate()
    return report


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

def report_to_dict(report: ValidationReport) -> dict:
    return {
        "spec": report.spec_descriptor,
        "per_replicate_satisfaction": report.per_replicate_satisfaction,
        "mean_trajectory_satisfied": report.mean_trajectory_satisfied,
        "n_replicates": report.n_replicates,
        "horizon": report.horizon,
        "n_truncated": report.n_truncated,
        "declared_confidence": report.declared_confidence,
        "coverage": None if report.coverage is None else np.asarray(report.coverage).tolist(),
        "metadata": report.metadata,
    }


def emit_report(report: ValidationReport, bundle: Optional[TrajectoryBundle],
                summary_path: str, trajectories_path: Optional[str] = None) -> None:
    """Write the machine-readable summary and the per-trajectory CSV.

    CSV columns: replicate, step, state components, input components; the
    final state row of each replicate has empty input fields.
    """
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if trajectories_path is None:
        return
    n = bundle.states[0].shape[1] if bundle is not None and bundle.states else 0
    m = bundle.inputs[0].shape[1] if bundle is not None and bundle.inputs else 0
    header = (["replicate", "step"]
              + [f"x{i+1}" for i in range(n)]
              + [f"u{i+1}" for i in range(m)])
    with open(trajectories_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        if bundle is None:
            return
        for r, states in enumerate(bundle.states):
            us = bundle.inputs[r]
            for t in range(states.shape[0]):
                row = [r, t] + [repr(float(v)) for v in states[t]]
                if t < us.shape[0]:
                    row += [repr(float(v)) for v in us[t]]
                else:
                    row += [""] * m
                writer.writerow(row)

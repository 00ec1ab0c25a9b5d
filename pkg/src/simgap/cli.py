"""Command-line pipeline: collect -> estimate -> fit-gap -> synthesize -> validate.

Every stage reads one YAML config, consumes the artifacts of earlier stages
from the output directory, writes its own artifact there, and prints a
one-line summary. ``run-all`` chains the stages. Exit codes: 0 success,
2 validation failed (specification unsatisfied), 1 any other error.

Artifacts, all inside the config's output directory:

    dataset.jsonl      canonical dataset (collect), plus dataset.csv export
    estimation.json    variance/Lipschitz report (estimate)
    gap_model.json     fitted gap function and confidences (fit-gap)
    controller.txt     winning set and input map (synthesize)
    report.json        validation summary (validate)
    trajectories.csv   closed-loop replicate trajectories (validate)
    figures/*.png      rendered views of the run (validate)
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import plots
from .config import PipelineConfig, load_config
from .cover import build_cover, collect_dataset, export_csv, load_dataset, save_dataset
from .errors import ConfigError, MissingArtifactError, SimGapError
from .estimate import estimate_report, load_report, save_report
from .scp import GapModel, fit_gap_model, load_gap_model, save_gap_model
from .seeding import rng_for
from .synth import (
    StateGrid,
    build_abstraction,
    cells_in_box,
    cells_touching_box,
    gap_model_digest,
    load_controller,
    save_controller,
    synthesize_invariance,
    synthesize_reach_avoid,
)
from .validate import (
    InvarianceSpec,
    ReachAvoidSpec,
    check_spec,
    coverage_check,
    emit_report,
    run_closed_loop,
)

_ARTIFACTS = {
    "dataset": "dataset.jsonl",
    "dataset_csv": "dataset.csv",
    "estimation": "estimation.json",
    "gap": "gap_model.json",
    "controller": "controller.txt",
    "report": "report.json",
    "trajectories": "trajectories.csv",
}


def _artifact(cfg: PipelineConfig, name: str) -> str:
    return os.path.join(cfg.output_dir, _ARTIFACTS[name])


def _require(cfg: PipelineConfig, name: str, producer: str) -> str:
    path = _artifact(cfg, name)
    if not os.path.exists(path):
        raise MissingArtifactError(
            f"{_ARTIFACTS[name]} not found in {cfg.output_dir}; run {producer} first"
        )
    return path


def stage_collect(cfg: PipelineConfig) -> None:
    os.makedirs(cfg.output_dir, exist_ok=True)
    model = cfg.build_model()
    sim = cfg.build_simulator(model)
    cover = build_cover(cfg.state_box, cfg.epsilon, max_centers=cfg.max_cover_centers)
    t0 = time.time()
    try:
        ds = collect_dataset(
            model, sim, cover, cfg.input_grid, cfg.n_hat_1, cfg.master_seed,
            workers=cfg.workers, checkpoint_path=_artifact(cfg, "dataset"),
        )
    finally:
        sim.close()
    save_dataset(ds, _artifact(cfg, "dataset"))
    export_csv(ds, _artifact(cfg, "dataset_csv"))
    print(
        f"collect: N={cover.n_centers} M={len(cfg.input_grid)} n_hat_1={cfg.n_hat_1} "
        f"({cover.n_centers * len(cfg.input_grid) * cfg.n_hat_1} samples, "
        f"{time.time() - t0:.1f}s) -> {_artifact(cfg, 'dataset')}"
    )


def stage_estimate(cfg: PipelineConfig) -> None:
    ds = load_dataset(_require(cfg, "dataset", "collect"))
    report = estimate_report(
        ds,
        variance_safety_factor=cfg.variance_safety_factor,
        lipschitz_safety_factor=cfg.lipschitz_safety_factor,
        lipschitz_f_override=cfg.lipschitz_f_override,
        lipschitz_fhat_override=cfg.lipschitz_fhat_override,
    )
    save_report(report, _artifact(cfg, "estimation"))
    bounds = ", ".join(f"{v:.3g}" for v in report.variance_bound)
    print(f"estimate: variance bounds [{bounds}] -> {_artifact(cfg, 'estimation')}")


def stage_fit_gap(cfg: PipelineConfig) -> None:
    ds = load_dataset(_require(cfg, "dataset", "collect"))
    report = load_report(_require(cfg, "estimation", "estimate"))
    gap = fit_gap_model(ds, report, cfg.delta1, cfg.delta2, cfg.basis_degree)
    save_gap_model(gap, _artifact(cfg, "gap"))
    save_report(report, _artifact(cfg, "estimation"))  # now carries basis constants
    confs = ", ".join(f"{d.confidence:.4f}" for d in gap.dims)
    print(
        f"fit-gap: per-dimension confidence [{confs}], "
        f"overall {gap.overall_confidence:.4f} -> {_artifact(cfg, 'gap')}"
    )


def _synthesis_spec_sets(cfg: PipelineConfig, grid: StateGrid):
    if cfg.spec_type == "invariance":
        safe = cells_in_box(grid, cfg.safe_box)
        return safe, None, InvarianceSpec(cfg.safe_box)
    target = cells_in_box(grid, cfg.target_box)
    avoid = np.unique(np.concatenate(
        [cells_touching_box(grid, b) for b in cfg.obstacle_boxes]
    )) if cfg.obstacle_boxes else np.zeros(0, dtype=int)
    target = np.setdiff1d(target, avoid)
    return target, avoid, ReachAvoidSpec(cfg.target_box, cfg.obstacle_boxes, cfg.deadline)


def stage_synthesize(cfg: PipelineConfig) -> None:
    gap = load_gap_model(_require(cfg, "gap", "fit-gap"))
    report = load_report(_require(cfg, "estimation", "estimate"))
    model = cfg.build_model()
    grid = StateGrid(state_box=cfg.state_box, counts=cfg.grid_cells)
    growth = cfg.growth_lipschitz if cfg.growth_lipschitz is not None else report.lipschitz_f
    sym = build_abstraction(model, gap, grid, growth, max_cells=cfg.max_grid_cells)
    digest = gap_model_digest(gap)
    if cfg.spec_type == "invariance":
        safe, _, spec = _synthesis_spec_sets(cfg, grid)
        controller = synthesize_invariance(sym, safe, spec_descriptor=spec.describe(),
                                           gap_digest=digest)
    else:
        target, avoid, spec = _synthesis_spec_sets(cfg, grid)
        controller = synthesize_reach_avoid(sym, target, avoid,
                                            spec_descriptor=spec.describe(),
                                            gap_digest=digest)
    save_controller(controller, _artifact(cfg, "controller"))
    print(
        f"synthesize: {cfg.spec_type}, winning {int(controller.winning.sum())}/"
        f"{grid.n_cells} cells -> {_artifact(cfg, 'controller')}"
    )


def stage_validate(cfg: PipelineConfig) -> int:
    gap = load_gap_model(_require(cfg, "gap", "fit-gap"))
    controller = load_controller(_require(cfg, "controller", "synthesize"))
    model = cfg.build_model()
    sim = cfg.build_simulator(model)
    try:
        bundle = run_closed_loop(
            controller, sim, cfg.initial_state, cfg.horizon, cfg.replicates,
            cfg.master_seed,
        )
        if cfg.spec_type == "invariance":
            spec = InvarianceSpec(cfg.safe_box)
        else:
            spec = ReachAvoidSpec(cfg.target_box, cfg.obstacle_boxes, cfg.deadline)
        report = check_spec(bundle, spec)
        report.declared_confidence = gap.overall_confidence
        if cfg.coverage_points > 0:
            rng = rng_for(cfg.master_seed, 0xC0FFEE)
            box = cfg.state_box
            xs = rng.uniform(box[:, 0], box[:, 1], size=(cfg.coverage_points, box.shape[0]))
            u_idx = rng.integers(0, len(cfg.input_grid), size=cfg.coverage_points)
            points = [(xs[t], cfg.input_grid[u_idx[t]]) for t in range(cfg.coverage_points)]
            report.coverage = coverage_check(gap, model, sim, points,
                                             n_test=min(cfg.n_hat_1, 200),
                                             master_seed=cfg.master_seed)
    finally:
        sim.close()
    emit_report(report, bundle, _artifact(cfg, "report"), _artifact(cfg, "trajectories"))
    if cfg.figures:
        fig_dir = os.path.join(cfg.output_dir, "figures")
        os.makedirs(fig_dir, exist_ok=True)
        if cfg.spec_type == "reach-avoid":
            plots.plot_trajectories_xy(bundle, spec, os.path.join(fig_dir, "trajectories_xy.png"),
                                       state_box=cfg.state_box)
        plots.plot_trajectories_time(bundle, spec,
                                     os.path.join(fig_dir, "trajectories_time.png"))
        plots.plot_winning_set(controller, os.path.join(fig_dir, "winning_set.png"))
        plots.plot_gap_profile(gap, cfg.state_box, cfg.input_grid[0],
                               os.path.join(fig_dir, "gap_profile.png"))

    verdict = "satisfied" if report.mean_trajectory_satisfied else "VIOLATED"
    cov = ""
    if report.coverage is not None:
        cov = " coverage [" + ", ".join(f"{v:.3f}" for v in report.coverage) + "]"
    print(
        f"validate: {cfg.spec_type}: mean-trajectory {verdict}, "
        f"replicate satisfaction {report.per_replicate_satisfaction:.3f}, "
        f"confidence {gap.overall_confidence:.4f}{cov} -> {_artifact(cfg, 'report')}"
    )
    return 0 if report.mean_trajectory_satisfied else 2


_STAGES = {
    "collect": stage_collect,
    "estimate": stage_estimate,
    "fit-gap": stage_fit_gap,
    "synthesize": stage_synthesize,
    "validate": stage_validate,
}


def run_stage(name: str, cfg: PipelineConfig) -> int:
    if name == "run-all":
        for stage in ("collect", "estimate", "fit-gap", "synthesize"):
            _STAGES[stage](cfg)
        return stage_validate(cfg)
    result = _STAGES[name](cfg)
    return int(result) if result is not None else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="simgap",
        description="Quantify a stochastic simulation gap and synthesize a "
                    "controller that survives it.",
    )
    parser.add_argument("command", choices=list(_STAGES) + ["run-all"],
                        help="pipeline stage to run")
    parser.add_argument("-c", "--config", required=True, help="YAML pipeline config")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the master seed from the config")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.master_seed = args.seed
        return run_stage(args.command, cfg)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SimGapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

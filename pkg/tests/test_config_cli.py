import hashlib
import json
import os

import numpy as np
import pytest
import yaml

import simgap as sg
from simgap.cli import main as cli_main
from simgap.config import load_config
from simgap.errors import ConfigError
from simgap.scp import GapModel, save_gap_model

CONFIG_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def tiny_config(out_dir, **overrides):
    cfg = {
        "system": {
            "kind": "affine",
            "tau": 1.0,
            "params": {
                "a_matrix": [[1.0, 0.25], [0.0, 0.7]],
                "b_matrix": [[0.0], [0.2]],
            },
            "state_box": [[0.0, 1.0], [-1.0, 1.0]],
            "input_grid": [[-1.0], [0.0], [1.0]],
        },
        "simulator": {
            "backend": "synthetic",
            "bias": {"kind": "constant", "offset": [0.0, -0.01]},
            "noise": {"law": "gaussian", "sigma": [0.002, 0.003]},
        },
        "gap": {
            "epsilon": 0.12,
            "n_hat_1": 120,
            "delta1": 0.005,
            "delta2": 0.005,
            "basis_degree": 1,
            "lipschitz_f_override": [0.0, 0.0],
            "lipschitz_fhat_override": [0.01, 0.01],
        },
        "synthesis": {
            "grid_cells": [25, 25],
            "growth_lipschitz": [1.05, 0.71],
            "spec": {"type": "invariance", "safe_box": [[0.2, 0.8], [-1.0, 1.0]]},
        },
        "validation": {
            "initial_state": [0.5, 0.0],
            "horizon": 50,
            "replicates": 30,
            "coverage_points": 20,
            "figures": True,
        },
        "seeds": {"master": 3},
        "output_dir": str(out_dir),
        "workers": 1,
    }
    for dotted, value in overrides.items():
        node = cfg
        parts = dotted.split(".")
        for key in parts[:-1]:
            node = node[key]
        node[parts[-1]] = value
    return cfg


def write_config(tmp_path, cfg, name="config.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def digest_dir(out_dir, names):
    out = {}
    for name in names:
        p = os.path.join(out_dir, name)
        with open(p, "rb") as fh:
            out[name] = hashlib.sha256(fh.read()).hexdigest()
    return out


ARTIFACTS = ["dataset.jsonl", "dataset.csv", "estimation.json", "gap_model.json",
             "controller.txt", "report.json", "trajectories.csv"]


class TestConfigValidation:
    def test_bundled_configs_parse(self):
        for name in ("pendulum_invariance.yaml", "turtlebot_reach_avoid.yaml"):
            cfg = load_config(os.path.join(CONFIG_DIR, name))
            assert cfg.state_box is not None
            assert cfg.spec_type in ("invariance", "reach-avoid")

    def test_all_violations_reported_at_once(self, tmp_path):
        cfg = tiny_config(tmp_path / "out")
        cfg["system"]["kind"] = "hovercraft"
        cfg["system"]["tau"] = -1.0
        cfg["gap"]["epsilon"] = 0.0
        cfg["synthesis"]["spec"]["type"] = "liveness"
        path = write_config(tmp_path, cfg)
        with pytest.raises(ConfigError) as info:
            load_config(path)
        text = str(info.value)
        for fragment in ("system.kind", "system.tau", "gap.epsilon", "synthesis.spec.type"):
            assert fragment in text

    def test_dimension_consistency_checked(self, tmp_path):
        cfg = tiny_config(tmp_path / "out")
        cfg["validation"]["initial_state"] = [0.5]
        cfg["synthesis"]["grid_cells"] = [25, 25, 25]
        path = write_config(tmp_path, cfg)
        with pytest.raises(ConfigError) as info:
            load_config(path)
        assert "initial_state" in str(info.value)
        assert "grid_cells" in str(info.value)

    def test_env_overrides(self, tmp_path, monkeypatch):
        cfg = tiny_config(tmp_path / "out")
        path = write_config(tmp_path, cfg)
        monkeypatch.setenv("SIMGAP_OUTPUT_DIR", str(tmp_path / "elsewhere"))
        monkeypatch.setenv("SIMGAP_WORKERS", "4")
        loaded = load_config(path)
        assert loaded.output_dir == str(tmp_path / "elsewhere")
        assert loaded.workers == 4

    def test_external_backend_needs_command(self, tmp_path):
        cfg = tiny_config(tmp_path / "out")
        cfg["simulator"] = {"backend": "external"}
        path = write_config(tmp_path, cfg)
        with pytest.raises(ConfigError) as info:
            load_config(path)
        assert "command" in str(info.value)


class TestPipelineStages:
    def test_run_all_success(self, tmp_path, capsys):
        out = tmp_path / "out"
        path = write_config(tmp_path, tiny_config(out))
        code = cli_main(["run-all", "-c", path])
        captured = capsys.readouterr()
        assert code == 0
        assert "overall" in captured.out
        assert "mean-trajectory satisfied" in captured.out
        for name in ARTIFACTS:
            assert (out / name).exists()
        assert (out / "figures" / "trajectories_time.png").exists()
        report = json.loads((out / "report.json").read_text())
        assert report["mean_trajectory_satisfied"] is True
        assert report["coverage"] is not None

    def test_missing_artifact_message(self, tmp_path, capsys):
        out = tmp_path / "out"
        path = write_config(tmp_path, tiny_config(out))
        code = cli_main(["fit-gap", "-c", path])
        captured = capsys.readouterr()
        assert code == 1
        assert "run collect" in captured.err

    def test_stage_idempotence_and_composition(self, tmp_path, capsys):
        out_a = tmp_path / "a"
        path_a = write_config(tmp_path, tiny_config(out_a), "a.yaml")
        assert cli_main(["run-all", "-c", path_a]) == 0
        first = digest_dir(str(out_a), ARTIFACTS)

        # stage-by-stage rerun into the same directory reproduces every byte
        for stage in ("collect", "estimate", "fit-gap", "synthesize", "validate"):
            assert cli_main([stage, "-c", path_a]) in (0,)
        second = digest_dir(str(out_a), ARTIFACTS)
        assert first == second

        # and an independent run-all elsewhere matches too
        out_b = tmp_path / "b"
        path_b = write_config(tmp_path, tiny_config(out_b), "b.yaml")
        assert cli_main(["run-all", "-c", path_b]) == 0
        third = digest_dir(str(out_b), ARTIFACTS)
        assert first == third
        capsys.readouterr()

    def test_seed_flag_changes_dataset(self, tmp_path, capsys):
        out = tmp_path / "out"
        path = write_config(tmp_path, tiny_config(out))
        assert cli_main(["collect", "-c", path]) == 0
        h1 = digest_dir(str(out), ["dataset.jsonl"])
        assert cli_main(["collect", "-c", path, "--seed", "99"]) == 0
        h2 = digest_dir(str(out), ["dataset.jsonl"])
        assert h1 != h2
        capsys.readouterr()

    def test_forced_violation_exits_2(self, tmp_path, capsys):
        """Zero gap plus a bias no controller can counteract."""
        out = tmp_path / "out"
        cfg = tiny_config(out)
        cfg["simulator"]["bias"] = {"kind": "constant", "offset": [-0.3, 0.0]}
        path = write_config(tmp_path, cfg)
        assert cli_main(["collect", "-c", path]) == 0
        assert cli_main(["estimate", "-c", path]) == 0
        save_gap_model(GapModel.zero(2, 1), str(out / "gap_model.json"))
        assert cli_main(["synthesize", "-c", path]) == 0
        code = cli_main(["validate", "-c", path])
        captured = capsys.readouterr()
        assert code == 2
        assert "VIOLATED" in captured.out

    def test_config_error_exit_1(self, tmp_path, capsys):
        cfg = tiny_config(tmp_path / "out")
        del cfg["system"]
        path = write_config(tmp_path, cfg)
        assert cli_main(["collect", "-c", path]) == 1
        assert "system" in capsys.readouterr().err

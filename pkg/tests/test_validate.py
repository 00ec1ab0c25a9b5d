import csv
import json

import numpy as np
import pytest

import simgap as sg
from simgap.errors import InvalidArgumentError
from simgap.scp import BasisDescriptor, GapDimension, GapModel
from simgap.synth import StateGrid
from simgap.validate import (
    InvarianceSpec,
    ReachAvoidSpec,
    TrajectoryBundle,
    _trajectory_satisfies,
    report_to_dict,
)


def constant_gap(values, state_dim, input_dim):
    basis = BasisDescriptor.monomials(state_dim, input_dim, 0)
    return GapModel(dims=[
        GapDimension(basis=basis, q=np.array([float(v)]), eta=float(v),
                     lipschitz_f=0.0, lipschitz_fhat=0.0, lipschitz_basis=0.0,
                     epsilon=1.0, delta1=0.0, delta2=0.0, beta1=0.0, beta2=0.0)
        for v in values
    ])


def simple_controller(pendulum_model, gap=None, safe=None):
    gap = gap or constant_gap([0.005, 0.02], 2, 1)
    grid = StateGrid(state_box=pendulum_model.spec.state_box, counts=(40, 100))
    sym = sg.build_abstraction(pendulum_model, gap, grid, [1.01, 1.79])
    cells = sg.cells_in_box(grid, safe or [[0.0, 0.2], [-0.5, 0.5]])
    return sg.synthesize_invariance(sym, cells)


class TestCoverageCheck:
    def test_zero_bias_always_covered(self, pendulum_model):
        sim = sg.SyntheticSimulator(pendulum_model)
        gap = constant_gap([0.01, 0.01], 2, 1)
        pts = [(np.array([0.1, 0.0]), np.array([0.0])),
               (np.array([-0.1, 0.3]), np.array([1.0]))]
        cov = sg.coverage_check(gap, pendulum_model, sim, pts)
        np.testing.assert_array_equal(cov, [1.0, 1.0])

    def test_uniform_violation(self, pendulum_model):
        sim = sg.SyntheticSimulator(
            pendulum_model, sg.BiasSpec(kind="constant", offset=[0.05, 0.05]))
        gap = constant_gap([0.04, 0.04], 2, 1)
        pts = [(np.array([0.0, 0.0]), np.array([0.0]))] * 10
        cov = sg.coverage_check(gap, pendulum_model, sim, pts)
        np.testing.assert_array_equal(cov, [0.0, 0.0])

    def test_empirical_fallback_for_nonanalytic(self, pendulum_model):
        class OpaqueSim(sg.StochasticSimulator):
            def __init__(self, inner):
                self.inner = inner
                self.spec = inner.spec
            def step(self, x, u, seed):
                return self.inner.step(x, u, seed)

        inner = sg.SyntheticSimulator(
            pendulum_model, sg.BiasSpec(kind="constant", offset=[0.05, 0.0]),
            sg.NoiseSpec(law="gaussian", sigma=[0.001, 0.001]))
        gap = constant_gap([0.2, 0.2], 2, 1)
        pts = [(np.array([0.0, 0.0]), np.array([0.0]))] * 5
        cov = sg.coverage_check(gap, pendulum_model, OpaqueSim(inner), pts,
                                n_test=200, master_seed=3)
        np.testing.assert_array_equal(cov, [1.0, 1.0])


class TestRunClosedLoop:
    def test_noiseless_replicates_identical(self, pendulum_model):
        ctrl = simple_controller(pendulum_model)
        assert ctrl.winning.any()
        sim = sg.SyntheticSimulator(pendulum_model)
        x0 = np.array([0.1, 0.0])
        bundle = sg.run_closed_loop(ctrl, sim, x0, steps=20, replicates=4, master_seed=1)
        for states in bundle.states[1:]:
            assert states.tobytes() == bundle.states[0].tobytes()
        valid = ~np.any(np.isnan(bundle.mean_trajectory), axis=1)
        np.testing.assert_allclose(bundle.mean_trajectory[valid],
                                   bundle.states[0][valid])

    def test_single_replicate_mean(self, pendulum_model):
        ctrl = simple_controller(pendulum_model)
        sim = sg.SyntheticSimulator(
            pendulum_model, noise=sg.NoiseSpec(law="gaussian", sigma=[0.001, 0.005]))
        bundle = sg.run_closed_loop(ctrl, sim, [0.1, 0.0], 15, 1, master_seed=2)
        np.testing.assert_array_equal(bundle.mean_trajectory[:bundle.states[0].shape[0]],
                                      bundle.states[0])

    def test_mean_is_pointwise_average(self, pendulum_model):
        ctrl = simple_controller(pendulum_model)
        sim = sg.SyntheticSimulator(
            pendulum_model, noise=sg.NoiseSpec(law="gaussian", sigma=[0.001, 0.005]))
        bundle = sg.run_closed_loop(ctrl, sim, [0.1, 0.0], 25, 8, master_seed=3)
        for t in range(26):
            rows = [s[t] for s in bundle.states if s.shape[0] > t]
            if rows:
                np.testing.assert_allclose(bundle.mean_trajectory[t],
                                           np.mean(rows, axis=0), atol=1e-12, rtol=0)

    def test_seed_reproducibility(self, pendulum_model):
        ctrl = simple_controller(pendulum_model)
        sim = sg.SyntheticSimulator(
            pendulum_model, noise=sg.NoiseSpec(law="gaussian", sigma=[0.001, 0.005]))
        b1 = sg.run_closed_loop(ctrl, sim, [0.1, 0.0], 10, 5, master_seed=77)
        b2 = sg.run_closed_loop(ctrl, sim, [0.1, 0.0], 10, 5, master_seed=77)
        for s1, s2 in zip(b1.states, b2.states):
            assert s1.tobytes() == s2.tobytes()

    def test_bad_initial_state(self, pendulum_model):
        ctrl = simple_controller(pendulum_model)
        with pytest.raises(InvalidArgumentError) as info:
            sg.run_closed_loop(ctrl, sg.SyntheticSimulator(pendulum_model),
                               [5.0, 5.0], 10, 2, master_seed=1)
        assert "outside the grid" in str(info.value)
        # inside the box but not winning (x1 < 0 cannot be safe-invariant)
        with pytest.raises(InvalidArgumentError) as info2:
            sg.run_closed_loop(ctrl, sg.SyntheticSimulator(pendulum_model),
                               [-0.19, 0.0], 10, 2, master_seed=1)
        assert "cell" in str(info2.value)


def hand_bundle(states_list, horizon, inputs_dim=1):
    states = [np.asarray(s, dtype=float) for s in states_list]
    truncated = np.array([s.shape[0] < horizon + 1 for s in states])
    from simgap.validate import _mean_over_prefixes
    mean = _mean_over_prefixes(states, horizon, states[0].shape[1])
    return TrajectoryBundle(
        initial_state=states[0][0], horizon=horizon, states=states,
        inputs=[np.zeros((max(0, s.shape[0] - 1), inputs_dim)) for s in states],
        truncated=truncated, mean_trajectory=mean, master_seed=0,
    )


class TestCheckSpec:
    def test_constant_safe_point(self):
        spec = InvarianceSpec([[0.0, 1.0], [0.0, 1.0]])
        traj = np.tile([0.5, 0.5], (4, 1))
        assert _trajectory_satisfies(traj, spec, 3, truncated=False)

    def test_invariance_violation_mid_trajectory(self):
        spec = InvarianceSpec([[0.0, 1.0], [0.0, 1.0]])
        traj = np.array([[0.5, 0.5], [0.8, 0.2], [1.1, 0.5], [0.5, 0.5]])
        assert not _trajectory_satisfies(traj, spec, 3, truncated=False)

    def test_truncation_is_violation_for_invariance(self):
        spec = InvarianceSpec([[0.0, 1.0], [0.0, 1.0]])
        traj = np.tile([0.5, 0.5], (3, 1))  # only 3 of 4 states
        assert not _trajectory_satisfies(traj, spec, 3, truncated=True)

    def test_reach_avoid_start_inside_obstacle(self):
        spec = ReachAvoidSpec([[0.8, 1.0], [0.8, 1.0]], ([[0.4, 0.6], [0.4, 0.6]],))
        traj = np.array([[0.5, 0.5], [0.9, 0.9]])
        assert not _trajectory_satisfies(traj, spec, 1, truncated=False)

    def test_reach_avoid_entry_then_obstacle_is_fine(self):
        spec = ReachAvoidSpec([[0.8, 1.0], [0.8, 1.0]], ([[0.4, 0.6], [0.4, 0.6]],))
        traj = np.array([[0.1, 0.1], [0.9, 0.9], [0.5, 0.5]])
        assert _trajectory_satisfies(traj, spec, 2, truncated=False)

    def test_reach_avoid_deadline(self):
        spec = ReachAvoidSpec([[0.8, 1.0], [0.8, 1.0]], (), deadline=1)
        traj = np.array([[0.1, 0.1], [0.5, 0.5], [0.9, 0.9]])
        assert not _trajectory_satisfies(traj, spec, 2, truncated=False)
        relaxed = ReachAvoidSpec([[0.8, 1.0], [0.8, 1.0]], (), deadline=2)
        assert _trajectory_satisfies(traj, relaxed, 2, truncated=False)

    def test_report_rates(self):
        spec = InvarianceSpec([[0.0, 1.0]])
        good = np.tile([0.5], (4, 1))
        bad = np.array([[0.5], [1.2], [0.5], [0.5]])
        bundle = hand_bundle([good, bad, good], horizon=3)
        report = sg.check_spec(bundle, spec)
        assert report.per_replicate_satisfaction == pytest.approx(2 / 3)
        assert report.mean_trajectory_satisfied  # mean of the three stays inside
        report.validate()

    def test_oracle_three_step_trajectories(self):
        """check_spec agrees with direct per-step predicate evaluation."""
        rng = np.random.default_rng(4)
        safe = np.array([[0.0, 1.0], [0.0, 1.0]])
        spec = InvarianceSpec(safe)
        for _ in range(50):
            traj = rng.uniform(-0.2, 1.2, size=(4, 2))
            direct = all((traj[t] >= 0).all() and (traj[t] <= 1).all() for t in range(4))
            assert _trajectory_satisfies(traj, spec, 3, truncated=False) == direct


class TestEmitReport:
    def make_report(self):
        from simgap.validate import ValidationReport
        return ValidationReport(
            spec_descriptor={"type": "invariance"},
            per_replicate_satisfaction=0.9,
            mean_trajectory_satisfied=True,
            n_replicates=2, horizon=1,
        )

    def test_empty_bundle_header_only(self, tmp_path):
        report = self.make_report()
        sg.emit_report(report, None, str(tmp_path / "r.json"), str(tmp_path / "t.csv"))
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert len(lines) == 1

    def test_row_counts(self, tmp_path):
        states = [np.array([[0.1, 0.2], [0.3, 0.4]]), np.array([[0.1, 0.2], [0.5, 0.6]])]
        bundle = hand_bundle(states, horizon=1, inputs_dim=2)
        sg.emit_report(self.make_report(), bundle,
                       str(tmp_path / "r.json"), str(tmp_path / "t.csv"))
        with open(tmp_path / "t.csv") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1 + 4  # header + R*(T+1) state rows
        assert rows[0][:2] == ["replicate", "step"]

    def test_roundtrip_summary(self, tmp_path):
        report = self.make_report()
        report.coverage = np.array([0.99, 1.0])
        path = tmp_path / "r.json"
        sg.emit_report(report, None, str(path), None)
        back = json.loads(path.read_text())
        assert back == report_to_dict(report)

    def test_csv_states_reparse(self, tmp_path):
        states = [np.array([[0.125, -0.25], [0.375, 0.5]])]
        bundle = hand_bundle(states, horizon=1, inputs_dim=1)
        sg.emit_report(self.make_report(), bundle,
                       str(tmp_path / "r.json"), str(tmp_path / "t.csv"))
        with open(tmp_path / "t.csv") as fh:
            rows = list(csv.reader(fh))[1:]
        parsed = np.array([[float(r[2]), float(r[3])] for r in rows])
        np.testing.assert_array_equal(parsed, states[0])

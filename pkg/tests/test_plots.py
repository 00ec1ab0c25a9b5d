import numpy as np

import simgap as sg
from simgap import plots
from simgap.scp import BasisDescriptor, GapDimension, GapModel
from simgap.synth import StateGrid
from simgap.validate import InvarianceSpec, ReachAvoidSpec

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def constant_gap(values, state_dim, input_dim):
    basis = BasisDescriptor.monomials(state_dim, input_dim, 0)
    return GapModel(dims=[
        GapDimension(basis=basis, q=np.array([float(v)]), eta=float(v),
                     lipschitz_f=0.0, lipschitz_fhat=0.0, lipschitz_basis=0.0,
                     epsilon=1.0, delta1=0.0, delta2=0.0, beta1=0.0, beta2=0.0)
        for v in values
    ])


def make_bundle(pendulum_model):
    gap = constant_gap([0.005, 0.02], 2, 1)
    grid = StateGrid(state_box=pendulum_model.spec.state_box, counts=(40, 100))
    sym = sg.build_abstraction(pendulum_model, gap, grid, [1.01, 1.79])
    ctrl = sg.synthesize_invariance(sym, sg.cells_in_box(grid, [[0.0, 0.2], [-0.5, 0.5]]))
    sim = sg.SyntheticSimulator(
        pendulum_model, noise=sg.NoiseSpec(law="gaussian", sigma=[0.0005, 0.004]))
    bundle = sg.run_closed_loop(ctrl, sim, [0.1, 0.0], 30, 6, master_seed=5)
    return ctrl, bundle, gap


def test_all_figures_render_and_are_deterministic(pendulum_model, tmp_path):
    ctrl, bundle, gap = make_bundle(pendulum_model)
    inv = InvarianceSpec([[0.0, 0.2], [-0.5, 0.5]])
    ra = ReachAvoidSpec([[0.1, 0.2], [0.0, 0.2]], ([[-0.1, 0.0], [-0.2, 0.0]],))

    paths = {
        "xy": tmp_path / "xy.png",
        "time": tmp_path / "time.png",
        "win": tmp_path / "win.png",
        "gap": tmp_path / "gap.png",
    }
    plots.plot_trajectories_xy(bundle, ra, str(paths["xy"]),
                               state_box=pendulum_model.spec.state_box)
    plots.plot_trajectories_time(bundle, inv, str(paths["time"]))
    plots.plot_winning_set(ctrl, str(paths["win"]))
    plots.plot_gap_profile(gap, pendulum_model.spec.state_box, [0.0], str(paths["gap"]))
    for p in paths.values():
        data = p.read_bytes()
        assert data[:8] == PNG_MAGIC and len(data) > 1000

    rerun = tmp_path / "time2.png"
    plots.plot_trajectories_time(bundle, inv, str(rerun))
    assert rerun.read_bytes() == paths["time"].read_bytes()

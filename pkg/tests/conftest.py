import numpy as np
import pytest

import simgap as sg


@pytest.fixture
def pendulum_spec():
    return sg.SystemSpec(
        state_dim=2, input_dim=1, tau=0.1,
        state_box=[[-0.2, 0.2], [-0.5, 0.5]],
        input_grid=[[-1.0], [-0.5], [0.0], [0.5], [1.0]],
    )


@pytest.fixture
def pendulum_model(pendulum_spec):
    return sg.pendulum(pendulum_spec, mass=0.5, length=1.0)


@pytest.fixture
def affine_2d():
    spec = sg.SystemSpec(
        state_dim=2, input_dim=1, tau=0.05,
        state_box=[[0.0, 1.0], [0.0, 1.0]],
        input_grid=[[-1.0], [0.0], [1.0]],
    )
    model = sg.affine(spec, a_matrix=[[1.0, 0.05], [0.0, 0.97]],
                      b_matrix=[[0.0], [0.05]])
    return spec, model


@pytest.fixture
def turtlebot_small():
    spec = sg.SystemSpec(
        state_dim=3, input_dim=2, tau=0.01,
        state_box=[[0.0, 4.0], [0.0, 4.0], [-np.pi, np.pi]],
        input_grid=sg.enumerate_inputs([-1, -1], [1, 1], [0.1, 0.1]),
    )
    return spec, sg.turtlebot(spec)

import math

import numpy as np
import pytest

import simgap as sg
from simgap.errors import InvalidArgumentError, UnsupportedOperationError


class TestNominalModels:
    def test_turtlebot_closed_form(self, turtlebot_small):
        _, model = turtlebot_small
        out = sg.step_nominal(model, [3.5, 2.0, 1.5], [1.0, 0.0])
        expected = [3.5 + 0.01 * math.cos(1.5), 2.0 + 0.01 * math.sin(1.5), 1.5]
        np.testing.assert_allclose(out, expected, rtol=0, atol=0)

    def test_turtlebot_zero_velocity_fixed_point(self, turtlebot_small):
        _, model = turtlebot_small
        for x in ([0.3, 1.2, -2.0], [4.0, 0.0, 3.0]):
            np.testing.assert_array_equal(sg.step_nominal(model, x, [0.0, 0.0]), x)

    def test_pendulum_equilibrium(self):
        spec = sg.SystemSpec(state_dim=2, input_dim=1, tau=0.005,
                             state_box=[[-0.2, 0.2], [-0.5, 0.5]],
                             input_grid=[[0.0], [1.0]])
        model = sg.pendulum(spec, mass=1.0, length=1.0)
        np.testing.assert_array_equal(sg.step_nominal(model, [0.0, 0.0], [0.0]), [0.0, 0.0])

    def test_pendulum_torque_response(self):
        spec = sg.SystemSpec(state_dim=2, input_dim=1, tau=0.005,
                             state_box=[[-0.2, 0.2], [-0.5, 0.5]],
                             input_grid=[[0.0], [1.0]])
        model = sg.pendulum(spec, mass=1.0, length=1.0)
        out = sg.step_nominal(model, [0.0, 0.0], [1.0])
        np.testing.assert_allclose(out, [0.0, 3 * 0.005 * 1.0 / (1.0 * 1.0 ** 2)],
                                   rtol=0, atol=1e-18)

    def test_determinism_bit_identical(self, pendulum_model):
        a = sg.step_nominal(pendulum_model, [0.13, -0.31], [0.5])
        b = sg.step_nominal(pendulum_model, [0.13, -0.31], [0.5])
        assert a.tobytes() == b.tobytes()

    def test_nonfinite_input_rejected(self, pendulum_model):
        with pytest.raises(InvalidArgumentError):
            sg.step_nominal(pendulum_model, [np.nan, 0.0], [0.0])
        with pytest.raises(InvalidArgumentError):
            sg.step_nominal(pendulum_model, [0.0, 0.0], [np.inf])

    def test_affine_map(self, affine_2d):
        _, model = affine_2d
        out = sg.step_nominal(model, [1.0, 2.0], [1.0])
        np.testing.assert_allclose(out, [1.0 + 0.1, 0.97 * 2 + 0.05])


class TestSystemSpecValidation:
    def test_bad_tau(self):
        with pytest.raises(InvalidArgumentError):
            sg.SystemSpec(state_dim=1, input_dim=1, tau=0.0,
                          state_box=[[0, 1]], input_grid=[[0.0]])

    def test_inverted_box(self):
        with pytest.raises(InvalidArgumentError):
            sg.SystemSpec(state_dim=1, input_dim=1, tau=0.1,
                          state_box=[[1, 0]], input_grid=[[0.0]])

    def test_duplicate_inputs(self):
        with pytest.raises(InvalidArgumentError):
            sg.SystemSpec(state_dim=1, input_dim=1, tau=0.1,
                          state_box=[[0, 1]], input_grid=[[0.5], [0.5]])


class TestSyntheticSimulator:
    def test_zero_noise_collapse(self, pendulum_model):
        sim = sg.SyntheticSimulator(pendulum_model)
        x, u = np.array([0.1, 0.2]), np.array([0.5])
        for seed in (0, 1, 99, 2 ** 63):
            np.testing.assert_array_equal(
                sg.step_simulator(sim, x, u, seed),
                sg.step_nominal(pendulum_model, x, u),
            )

    def test_bias_only(self, pendulum_model):
        sim = sg.SyntheticSimulator(
            pendulum_model, sg.BiasSpec(kind="constant", offset=[0.05, 0.0]))
        x, u = np.array([0.1, 0.2]), np.array([0.5])
        np.testing.assert_allclose(
            sg.step_simulator(sim, x, u, 7),
            sg.step_nominal(pendulum_model, x, u) + np.array([0.05, 0.0]),
        )

    def test_seeded_reproducibility(self, pendulum_model):
        sim = sg.SyntheticSimulator(
            pendulum_model, noise=sg.NoiseSpec(law="gaussian", sigma=[0.1, 0.1]))
        x, u = np.array([0.1, 0.2]), np.array([0.5])
        a = sg.step_simulator(sim, x, u, 42)
        b = sg.step_simulator(sim, x, u, 42)
        assert a.tobytes() == b.tobytes()
        assert not np.array_equal(a, sg.step_simulator(sim, x, u, 43))

    def test_common_random_numbers(self, pendulum_model):
        """Equal seeds reuse the same noise draw at different states."""
        sim = sg.SyntheticSimulator(
            pendulum_model, noise=sg.NoiseSpec(law="gaussian", sigma=[0.1, 0.1]))
        u = np.array([0.0])
        x1, x2 = np.array([0.05, 0.1]), np.array([-0.1, -0.3])
        d1 = sg.step_simulator(sim, x1, u, 5) - sg.step_nominal(pendulum_model, x1, u)
        d2 = sg.step_simulator(sim, x2, u, 5) - sg.step_nominal(pendulum_model, x2, u)
        # the draw is identical; subtracting different means leaves 1-ulp dust
        np.testing.assert_allclose(d1, d2, rtol=0, atol=1e-15)
        assert sim.supports_common_random_numbers

    def test_mean_consistency_monte_carlo(self, pendulum_model):
        """Empirical mean converges to nominal + bias at the sigma/sqrt(N) rate."""
        sigma = 0.1
        sim = sg.SyntheticSimulator(
            pendulum_model,
            sg.BiasSpec(kind="constant", offset=[0.02, -0.01]),
            sg.NoiseSpec(law="gaussian", sigma=[sigma, sigma]),
        )
        x, u = np.array([0.1, 0.0]), np.array([0.5])
        n = 100_000
        seeds = [sg.derive_seed(123, k) for k in range(n)]
        mean = sim.replicates(x, u, seeds).mean(axis=0)
        target = sg.step_nominal(pendulum_model, x, u) + np.array([0.02, -0.01])
        assert np.all(np.abs(mean - target) <= 4 * sigma / math.sqrt(n))

    @pytest.mark.parametrize("law,kwargs", [
        ("gaussian", {}),
        ("uniform", {}),
        ("truncated-gaussian", {"clip": 2.0}),
    ])
    def test_noise_zero_mean(self, law, kwargs):
        noise = sg.NoiseSpec(law=law, sigma=[0.2], **kwargs)
        rng = np.random.default_rng(0)
        draws = np.array([noise.draw(rng, 1)[0] for _ in range(40_000)])
        assert abs(draws.mean()) < 4 * 0.2 / math.sqrt(40_000) * 2
        if law == "uniform":
            assert np.all(np.abs(draws) <= 0.2)
        if law == "truncated-gaussian":
            assert np.all(np.abs(draws) <= 2.0 * 0.2 + 1e-12)

    def test_true_mean_gap(self, pendulum_model):
        zero = sg.SyntheticSimulator(pendulum_model)
        np.testing.assert_array_equal(
            sg.true_mean_gap(zero, [0.1, 0.0], [0.0]), [0.0, 0.0])
        const = sg.SyntheticSimulator(
            pendulum_model, sg.BiasSpec(kind="constant", offset=[0.05, 0.0]))
        np.testing.assert_array_equal(
            sg.true_mean_gap(const, [0.1, 0.0], [0.0]), [0.05, 0.0])
        lin = sg.SyntheticSimulator(
            pendulum_model,
            sg.BiasSpec(kind="linear", state_matrix=[[0.01, 0.0], [0.0, 0.0]]))
        np.testing.assert_allclose(
            sg.true_mean_gap(lin, [2.0, 0.3], [0.0]), [0.02, 0.0], atol=1e-17)

    def test_true_mean_gap_linear_is_absolute_value(self, pendulum_model):
        lin = sg.SyntheticSimulator(
            pendulum_model,
            sg.BiasSpec(kind="linear", state_matrix=[[-0.1, 0.0], [0.0, 0.0]]))
        np.testing.assert_allclose(sg.true_mean_gap(lin, [0.2, 0.0], [0.0]), [0.02, 0.0])

    def test_sinusoidal_bias(self, pendulum_model):
        sim = sg.SyntheticSimulator(
            pendulum_model,
            sg.BiasSpec(kind="sinusoidal", amplitude=[0.1, 0.0],
                        frequency=[[1.0, 0.0], [0.0, 0.0]]),
        )
        gap = sg.true_mean_gap(sim, [0.15, 0.0], [0.0])
        np.testing.assert_allclose(gap, [0.1 * abs(math.sin(0.15)), 0.0])

    def test_external_backend_unsupported(self, pendulum_spec):
        ext = sg.ExternalSimulator(pendulum_spec, ["true"])
        with pytest.raises(UnsupportedOperationError):
            sg.true_mean_gap(ext, [0.0, 0.0], [0.0])

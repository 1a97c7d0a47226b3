import numpy as np
import pytest

from pacswarm import (BicycleParams, Trajectory, drift, linearize,
                      rollout_nominal, step_deterministic, step_stochastic)
from pacswarm.dynamics import N_U, N_X, rollout_nominal_batch


@pytest.fixture
def params():
    return BicycleParams()


class TestDrift:
    def test_unit_speed_along_x(self, params):
        np.testing.assert_allclose(drift([0, 0, 0, 1, 0], [0, 0], params),
                                   [1, 0, 0, 0, 0])

    def test_heading_and_steer(self, params):
        out = drift([0, 0, np.pi / 2, 2, 0.2], [1, 1], params)
        expected = [0, 2, 2 * np.tan(0.2) / 0.33, 1, 1]
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_at_rest_zero(self, params):
        np.testing.assert_allclose(drift([5, -3, np.pi, 0, 0], [0, 0], params),
                                   np.zeros(5), atol=1e-12)


class TestStep:
    def test_euler_step(self, params):
        np.testing.assert_allclose(step_deterministic([0, 0, 0, 1, 0], [0, 0], params),
                                   [0.1, 0, 0, 1, 0], atol=1e-12)

    def test_speed_upper_clamp(self, params):
        x1 = step_deterministic([0, 0, 0, 2, 0], [1, 0], params)
        assert x1[3] == 2.0

    def test_speed_lower_clamp(self, params):
        x1 = step_deterministic([0, 0, 0, -0.5, 0], [-1, 0], params)
        assert x1[3] == -0.5

    def test_steer_clamp(self, params):
        x1 = step_deterministic([0, 0, 0, 1, 0.4], [0, 1], params)
        assert x1[4] == 0.4

    def test_input_clamp(self, params):
        a = step_deterministic([0, 0, 0, 1, 0], [5.0, 0], params)
        b = step_deterministic([0, 0, 0, 1, 0], [1.0, 0], params)
        np.testing.assert_allclose(a, b)

    def test_stochastic_zero_noise_matches_deterministic(self):
        p = BicycleParams(process_cov=np.zeros(5))
        rng = np.random.default_rng(0)
        a = step_stochastic([0, 0, 0, 1, 0], [0.3, 0.1], p, rng)
        b = step_deterministic([0, 0, 0, 1, 0], [0.3, 0.1], p)
        np.testing.assert_allclose(a, b)

    def test_stochastic_deterministic_in_seed(self, params):
        a = step_stochastic([0, 0, 0, 1, 0], [0, 0], params, np.random.default_rng(3))
        b = step_stochastic([0, 0, 0, 1, 0], [0, 0], params, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_heading_noise_variance(self, params):
        # heading increment variance per step is cov_theta * dt^2
        rng = np.random.default_rng(1)
        x = np.zeros((100_000, 5))
        x[:, 3] = 1.0
        x1 = step_stochastic(x, np.zeros((100_000, 2)), params, rng)
        var = np.var(x1[:, 2] - x[:, 2])
        assert abs(var - 0.1 * 0.1 ** 2) / (0.1 * 0.1 ** 2) < 0.05


class TestLinearize:
    def test_analytic_entries(self, params):
        A, B = linearize([0, 0, 0, 1, 0], [0, 0], params)
        assert A[2, 4] == pytest.approx(0.1 / 0.33)
        assert A[0, 2] == pytest.approx(0.0)
        np.testing.assert_allclose(B[3:, :], 0.1 * np.eye(2))
        assert np.count_nonzero(B[:3, :]) == 0

    def test_jacobian_matches_finite_differences(self, params):
        # interior points only: the FD oracle is valid away from the clamps
        rng = np.random.default_rng(0)
        h = 1e-5
        for _ in range(100):
            x = rng.uniform([-5, -5, -np.pi, -0.4, -0.3], [5, 5, np.pi, 1.9, 0.3])
            u = rng.uniform(-0.9, 0.9, 2)
            A, B = linearize(x, u, params)
            A_fd = np.empty((N_X, N_X))
            for k in range(N_X):
                dx = np.zeros(N_X)
                dx[k] = h
                A_fd[:, k] = (step_deterministic(x + dx, u, params)
                              - step_deterministic(x - dx, u, params)) / (2 * h)
            np.testing.assert_allclose(A, A_fd, atol=1e-6)
            B_fd = np.empty((N_X, N_U))
            for k in range(N_U):
                du = np.zeros(N_U)
                du[k] = h
                B_fd[:, k] = (step_deterministic(x, u + du, params)
                              - step_deterministic(x, u - du, params)) / (2 * h)
            np.testing.assert_allclose(B, B_fd, atol=1e-6)


class TestRollout:
    def test_at_rest_constant(self, params):
        traj = rollout_nominal(np.zeros(5), np.zeros((20, 2)), params)
        np.testing.assert_allclose(traj.states, np.zeros((21, 5)))

    def test_coasting_distance(self, params):
        traj = rollout_nominal([0, 0, 0, 1, 0], np.zeros((20, 2)), params)
        assert traj.states[-1, 0] == pytest.approx(2.0)

    def test_shape_invariant(self, params):
        traj = rollout_nominal(np.zeros(5), np.zeros((7, 2)), params)
        assert traj.states.shape == (8, 5)
        assert len(traj) == 7

    def test_max_reach_from_rest(self, params):
        # full throttle from rest under forward Euler: dt^2 * (0+1+...+19) = 1.9 m
        U = np.zeros((20, 2))
        U[:, 0] = 1.0
        traj = rollout_nominal(np.zeros(5), U, params)
        assert traj.states[-1, 0] == pytest.approx(1.9)

    def test_batch_matches_scalar(self, params):
        rng = np.random.default_rng(2)
        U = rng.uniform(-1, 1, (4, 10, 2))
        x0 = rng.uniform(-1, 1, (4, 5))
        X, _ = rollout_nominal_batch(x0, U, params)
        for m in range(4):
            traj = rollout_nominal(x0[m], U[m], params)
            np.testing.assert_allclose(X[m], traj.states, atol=1e-12)


class TestTrajectory:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            Trajectory(np.zeros((5, 5)), np.zeros((5, 2)))

    def test_nonfinite_rejected(self):
        states = np.zeros((3, 5))
        states[1, 0] = np.nan
        with pytest.raises(ValueError):
            Trajectory(states, np.zeros((2, 2)))


class TestBicycleParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            BicycleParams(wheel_base=0.0)
        with pytest.raises(ValueError):
            BicycleParams(process_cov=[-1, 0, 0, 0, 0])

    def test_from_dict(self):
        p = BicycleParams.from_dict({"wheel_base": 0.5, "dt": 0.05})
        assert p.wheel_base == 0.5 and p.dt == 0.05

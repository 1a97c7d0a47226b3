import numpy as np
import pytest

from pacswarm import (CostParams, GoalSpec, ObstacleEntry, Trajectory,
                      constraint_violation, desired_velocity, give_way,
                      gyro_matrix_term, k1, k2, running_cost, smooth_sign,
                      terminal_cost, trajectory_cost)
from pacswarm.costs import E_HAT, give_way_batch
from pacswarm.world import Circle, ObstacleField


@pytest.fixture
def params():
    return CostParams()


EMPTY_FIELD = ObstacleField((), [-100, -100], [100, 100])
WIDE_LO = np.array([-100.0, -100.0, -1e9, -0.5, -0.4])
WIDE_HI = np.array([100.0, 100.0, 1e9, 2.0, 0.4])


class TestSmoothSign:
    def test_at_zero(self):
        assert smooth_sign(0.0) == 0.5

    def test_saturation(self):
        assert smooth_sign(10.0) == pytest.approx(0.9999546, rel=1e-5)

    def test_symmetry(self):
        for s in (-3.0, -0.5, 0.7, 4.0):
            assert smooth_sign(s) + smooth_sign(-s) == pytest.approx(1.0)

    def test_no_overflow_for_large_negative(self):
        assert smooth_sign(-800.0) == 0.0


class TestGains:
    def test_k1_values(self):
        assert k1(1.0, 8.0) == 1.0
        assert k1(0.0, 8.0) == pytest.approx(np.exp(-8))
        assert k1(-1.0, 8.0) == pytest.approx(np.exp(-16))

    def test_k2_logistic_midpoint(self, params):
        r = 0.6
        d = params.r_d + r - params.epsilon
        expected = 1.0 * 0.5 / (d - r)
        assert k2(d, r, 1.0, params) == pytest.approx(expected)

    def test_k2_far_field_vanishes(self, params):
        assert k2(100.0, 0.6, 1.0, params) == pytest.approx(0.0, abs=1e-12)

    def test_k2_zero_gain(self, params):
        assert k2(1.0, 0.6, 0.0, params) == 0.0

    def test_k2_penetration_guard_finite(self, params):
        val = k2(0.6, 0.6, 1.0, params)
        assert np.isfinite(val) and val > 0

    def test_k2_monotone_decay_past_detection(self, params):
        r = 0.6
        ds = np.linspace(params.r_d + r, params.r_d + r + 3, 10)
        vals = [k2(d, r, 1.0, params) for d in ds]
        assert np.all(np.diff(vals) < 0)


class TestGiveWay:
    def test_c4_opposed(self):
        assert give_way([1, 0], [-1, 0], [1, 0]) == 0

    def test_c1_tie_positive(self):
        assert give_way([1, 0], [1, 0.1], [1, -0.1]) == 1

    def test_c2_negative(self):
        assert give_way([1, 0], [1, 0], [-1, 0.2]) == -1

    def test_c3_strict(self):
        # d.v_i < 0 and d.v_j < 0; equal angles -> strict sign gives -1
        assert give_way([1, 0], [-1, 0.1], [-1, -0.1]) == -1

    def test_c3_positive(self):
        # v_i makes the larger unsigned angle with d, so the difference is > 0
        assert give_way([1, 0], [-1, 0.1], [-1, 0.5]) == 1

    def test_zero_vectors_route_to_c4(self):
        assert give_way([0, 0], [1, 0], [1, 0]) == 0
        assert give_way([1, 0], [0, 0], [1, 0]) == 0
        assert give_way([1, 0], [1, 0], [0, 0]) == 0

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(0)
        d = rng.normal(size=(50, 2))
        vi = rng.normal(size=(50, 2))
        vj = rng.normal(size=(50, 2))
        batch = give_way_batch(d, vi, vj)
        for m in range(50):
            assert batch[m] == give_way(d[m], vi[m], vj[m])

    def test_head_on_deconfliction(self, params):
        # two converging agents rotate to pass on opposite sides: the induced
        # one-step motions separate more than the no-rotation baseline
        rng = np.random.default_rng(1)
        improved = 0
        for _ in range(200):
            p_i = rng.normal(size=2)
            gap = rng.uniform(1.0, 2.5) * _unit(rng.normal(size=2))
            p_j = p_i + gap
            goal_i, goal_j = p_j + 0.5 * gap, p_i - 0.5 * gap  # head-on
            obs_i = [ObstacleEntry(p_j, -params.k * (p_j - goal_j), params.L, "agent")]
            obs_j = [ObstacleEntry(p_i, -params.k * (p_i - goal_i), params.L, "agent")]
            v_i = desired_velocity(p_i, goal_i, None, obs_i, params)
            v_j = desired_velocity(p_j, goal_j, None, obs_j, params)
            b_i = desired_velocity(p_i, goal_i, None, [], params)
            b_j = desired_velocity(p_j, goal_j, None, [], params)
            h = 0.3
            with_rot = np.hypot(*((p_i + h * v_i) - (p_j + h * v_j)))
            baseline = np.hypot(*((p_i + h * b_i) - (p_j + h * b_j)))
            improved += with_rot >= baseline
        assert improved >= 190  # allow rare near-parallel geometries


def _unit(v):
    return v / np.hypot(*v)


class TestGyroMatrix:
    def test_c4_zero_matrix(self, params):
        G = gyro_matrix_term([1, 0], [2, 0], [-1, 0], [1, 0], 0.5, 8.0, 1.0, params)
        np.testing.assert_allclose(G, np.zeros((2, 2)))

    def test_at_goal_zero_matrix(self, params):
        G = gyro_matrix_term([1, 0], [0, 0], [1, 0], [1, 0], 0.5, 8.0, 1.0, params)
        np.testing.assert_allclose(G, np.zeros((2, 2)))

    def test_aligned_obstacle_gain(self, params):
        # obstacle along the desired direction: theta = 1, k1 = 1, G = e * k2 * E
        p_tilde = np.array([2.0, 0.0])
        d = -p_tilde / 2.0  # toward the goal
        v_i = -params.k * p_tilde
        v_j = np.array([0.0, 1.0])
        G = gyro_matrix_term(d, p_tilde, v_i, v_j, 0.5, 8.0, 1.0, params)
        e = give_way(d, v_i, v_j)
        expected = e * k2(np.hypot(*d), 0.5, 1.0, params) * E_HAT
        np.testing.assert_allclose(G, expected)

    def test_behind_obstacle_negligible(self, params):
        p_tilde = np.array([2.0, 0.0])
        d = p_tilde.copy()  # directly behind (theta = -1)
        G = gyro_matrix_term(d, p_tilde, [-1, 0], [0, 1], 0.5, 8.0, 1.0, params)
        assert np.max(np.abs(G)) < np.exp(-15)


class TestDesiredVelocity:
    def test_no_obstacles_capped(self, params):
        # attraction points at the goal and is capped at v_max
        v = desired_velocity([0, 0], [10, 0], None, [], params)
        np.testing.assert_allclose(v, [2.0, 0.0])

    def test_at_goal_zero(self, params):
        np.testing.assert_allclose(desired_velocity([3, 4], [3, 4], None, [], params),
                                   np.zeros(2))

    def test_single_obstacle_matches_matrix_assembly(self, params):
        p = np.array([0.0, 0.0])
        goal = np.array([3.0, 0.0])
        ob = ObstacleEntry(np.array([1.5, 0.2]), np.zeros(2), 0.5, "static")
        v = desired_velocity(p, goal, None, [ob], params)
        att = params.k * (p - goal)
        G = gyro_matrix_term(p - ob.position, p - goal, -att, ob.velocity,
                             ob.radius, params.k_att_static, params.k_obs_static, params)
        raw = -(G + np.eye(2)) @ att
        if np.hypot(*raw) > params.v_max:
            raw *= params.v_max / np.hypot(*raw)
        np.testing.assert_allclose(v, raw, atol=1e-12)

    def test_norm_never_exceeds_vmax(self, params):
        rng = np.random.default_rng(2)
        for _ in range(100):
            p = rng.normal(size=2) * 5
            goal = rng.normal(size=2) * 5
            obs = [ObstacleEntry(rng.normal(size=2) * 3, rng.normal(size=2), 0.5, "agent")
                   for _ in range(3)]
            v = desired_velocity(p, goal, None, obs, params)
            assert np.hypot(*v) <= params.v_max + 1e-12

    def test_rotation_preserves_norm_before_cap(self, params):
        # single obstacle with gain g: ||v_raw||^2 = (1 + g^2) ||k p~||^2
        small = CostParams(k=0.2)  # keep below the cap
        p = np.array([0.0, 0.0])
        goal = np.array([2.0, 0.0])
        ob = ObstacleEntry(np.array([1.0, 0.3]), np.zeros(2), 0.4, "static")
        att = small.k * (p - goal)
        G = gyro_matrix_term(p - ob.position, p - goal, -att, ob.velocity,
                             ob.radius, small.k_att_static, small.k_obs_static, small)
        g = G[1, 0]  # gain times E_HAT
        v = desired_velocity(p, goal, None, [ob], small)
        assert np.hypot(*v) ** 2 == pytest.approx((1 + g ** 2) * (att @ att))

    def test_far_obstacle_ignored(self, params):
        ob = ObstacleEntry(np.array([50.0, 0.0]), np.zeros(2), 0.5, "static")
        a = desired_velocity([0, 0], [3, 0], None, [ob], params)
        b = desired_velocity([0, 0], [3, 0], None, [], params)
        np.testing.assert_allclose(a, b)


class TestRunningCost:
    def test_at_goal_rest_zero(self, params):
        assert running_cost([0, 0, 0, 0, 0], [0, 0], GoalSpec([0, 0]), params) == 0.0

    def test_speed_matches_capped_target(self, params):
        # far from goal the target speed caps at v_max = 2
        assert running_cost([10, 0, 0, 2, 0], [0, 0], GoalSpec([0, 0]), params) == 0.0

    def test_direct_value(self, params):
        # p~ = [-1, 0], k = 3 capped at 2; v = 0 -> 0.5 * 4
        assert running_cost([-1, 0, 0, 0, 0], [0, 0], GoalSpec([0, 0]), params) \
            == pytest.approx(2.0)

    def test_input_term(self, params):
        val = running_cost([0, 0, 0, 0, 0], [1.0, -1.0], GoalSpec([0, 0]), params)
        assert val == pytest.approx(params.omega_u * 2.0)

    def test_reverse_speed_counted_by_magnitude(self, params):
        a = running_cost([-1, 0, 0, 0.5, 0], [0, 0], GoalSpec([0, 0]), params)
        b = running_cost([-1, 0, 0, -0.5, 0], [0, 0], GoalSpec([0, 0]), params)
        assert a == pytest.approx(b)


class TestTerminalCost:
    def test_zero_when_velocity_matches(self, params):
        # at rest at the goal: v_d = 0 = v_N
        assert terminal_cost([0, 0, 0, 0, 0], GoalSpec([0, 0]), [], params) == 0.0

    def test_follower_weight_arithmetic(self, params):
        # v~ = [1, 1] with Q_f = diag([1, 1.5]) -> 2.5
        qf = np.diag([1.0, 1.5])
        vt = np.array([1.0, 1.0])
        assert float(vt @ qf @ vt) == pytest.approx(2.5)

    def test_zero_qf(self, params):
        val = terminal_cost([5, 5, 1.0, 2, 0], GoalSpec([0, 0]), [], params,
                            qf=np.zeros((2, 2)))
        assert val == 0.0

    def test_uses_planar_velocity(self, params):
        # moving at v_max straight at a far goal: v_N = v_d -> 0
        x = [10, 0, np.pi, 2.0, 0]
        assert terminal_cost(x, GoalSpec([0, 0]), [], params) == pytest.approx(0.0)


class TestTrajectoryCost:
    def test_parked_at_goal_zero(self, params):
        traj = Trajectory(np.zeros((4, 5)), np.zeros((3, 2)))
        assert trajectory_cost(traj, GoalSpec([0, 0]), [], params) == 0.0

    def test_single_step_decomposition(self, params):
        states = np.array([[1, 0, 0, 0.5, 0], [1.05, 0, 0, 0.5, 0]])
        inputs = np.array([[0.3, 0.1]])
        traj = Trajectory(states, inputs)
        goal = GoalSpec([3, 1])
        expected = running_cost(states[0], inputs[0], goal, params) \
            + terminal_cost(states[1], goal, [], params)
        assert trajectory_cost(traj, goal, [], params) == pytest.approx(expected)

    def test_nonnegative(self, params):
        rng = np.random.default_rng(4)
        for _ in range(20):
            states = rng.normal(size=(6, 5))
            inputs = rng.normal(size=(5, 2))
            assert trajectory_cost(Trajectory(states, inputs), GoalSpec(rng.normal(size=2)),
                                   [], params) >= 0.0


class TestConstraintViolation:
    def _traj(self, xy):
        states = np.zeros((len(xy), 5))
        states[:, :2] = xy
        return Trajectory(states, np.zeros((len(xy) - 1, 2)))

    def test_clean_trajectory(self, params):
        traj = self._traj([[0, 0], [1, 0], [2, 0]])
        assert constraint_violation(traj, EMPTY_FIELD, None, WIDE_LO, WIDE_HI, params) == 0

    def test_obstacle_hit(self, params):
        fld = ObstacleField((Circle([1, 0], 0.6),), [-100, -100], [100, 100])
        traj = self._traj([[0, 0], [1.5, 0], [3, 0]])
        assert constraint_violation(traj, fld, None, WIDE_LO, WIDE_HI, params) == 1

    def test_obstacle_boundary_is_free(self, params):
        fld = ObstacleField((Circle([1, 0], 0.6),), [-100, -100], [100, 100])
        traj = self._traj([[0, 0], [1, 0.6], [3, 0]])
        assert constraint_violation(traj, fld, None, WIDE_LO, WIDE_HI, params) == 0

    def test_state_bound_violation(self, params):
        traj = self._traj([[0, 0], [150, 0]])
        assert constraint_violation(traj, EMPTY_FIELD, None, WIDE_LO, WIDE_HI, params) == 1

    def test_agent_proximity_same_timestep(self, params):
        traj = self._traj([[0, 0], [1, 0]])
        others = [[np.array([0.3, 0.0])], []]
        assert constraint_violation(traj, EMPTY_FIELD, others, WIDE_LO, WIDE_HI, params) == 1

    def test_agent_at_exactly_l_is_free(self, params):
        traj = self._traj([[0, 0], [1, 0]])
        others = [[np.array([params.L, 0.0])], []]
        assert constraint_violation(traj, EMPTY_FIELD, others, WIDE_LO, WIDE_HI, params) == 0

    def test_or_semantics(self, params):
        # any single source of violation flips the OR
        fld = ObstacleField((Circle([50, 50], 0.6),), [-100, -100], [100, 100])
        traj = self._traj([[0, 0], [1, 0]])
        assert constraint_violation(traj, fld, [[], []], WIDE_LO, WIDE_HI, params) == 0
        assert constraint_violation(traj, fld, [[], [np.array([1.1, 0.0])]],
                                    WIDE_LO, WIDE_HI, params) == 1

    def test_planning_separation_widens_check(self):
        wide = CostParams(l_plan=0.8)
        traj = self._traj([[0, 0], [1, 0]])
        others = [[np.array([0.7, 0.0])], []]
        assert constraint_violation(traj, EMPTY_FIELD, others, WIDE_LO, WIDE_HI, wide) == 1
        base = CostParams()
        assert constraint_violation(traj, EMPTY_FIELD, others, WIDE_LO, WIDE_HI, base) == 0


class TestBatchConsistency:
    def test_trajectory_cost_batch_matches_scalar(self, params):
        from pacswarm.costs import trajectory_cost_batch
        rng = np.random.default_rng(5)
        M, N = 8, 6
        X = rng.normal(size=(M, N + 1, 5))
        U = rng.normal(size=(M, N, 2))
        goal = np.array([2.0, 1.0])
        batch = trajectory_cost_batch(X, U, goal, params, params.qf)
        for m in range(M):
            scalar = trajectory_cost(Trajectory(X[m], U[m]), GoalSpec(goal), [], params)
            assert batch[m] == pytest.approx(scalar, rel=1e-9)

    def test_constraint_batch_matches_scalar(self, params):
        from pacswarm.costs import constraint_violation_batch
        rng = np.random.default_rng(6)
        M, N = 16, 5
        X = np.zeros((M, N + 1, 5))
        X[:, :, :2] = rng.uniform(-3, 3, (M, N + 1, 2))
        centers = np.array([[1.0, 0.0], [-1.0, 1.0]])
        radii = np.array([0.6, 0.6])
        fld = ObstacleField((Circle(centers[0], 0.6), Circle(centers[1], 0.6)),
                            [-100, -100], [100, 100])
        pred = rng.uniform(-3, 3, (4, N + 1, 2))
        batch = constraint_violation_batch(X, centers, radii, pred, WIDE_LO, WIDE_HI, params)
        for m in range(M):
            others = [[pred[p, t] for p in range(4)] for t in range(N + 1)]
            scalar = constraint_violation(Trajectory(X[m], np.zeros((N, 2))), fld,
                                          others, WIDE_LO, WIDE_HI, params)
            assert batch[m] == scalar


class TestCostParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            CostParams(v_max=0.0)
        with pytest.raises(ValueError):
            CostParams(L=-1.0)

    def test_planning_separation_defaults_to_l(self):
        assert CostParams().planning_L == 0.5
        assert CostParams(l_plan=0.8).planning_L == 0.8

    def test_from_dict_diagonals(self):
        p = CostParams.from_dict({"k": 1.0, "qf": [2.0, 2.0], "qf_follower": [1.0, 1.5]})
        assert p.k == 1.0
        np.testing.assert_allclose(p.qf, 2 * np.eye(2))
        np.testing.assert_allclose(p.qf_follower, np.diag([1.0, 1.5]))

import json

import numpy as np
import pytest

from pacswarm import (Circle, ObstacleField, PlacementError, RngStream, Scenario,
                      dist_to_circle, generate_obstacle_field)


class TestCircle:
    def test_positive_radius_required(self):
        with pytest.raises(ValueError):
            Circle(np.zeros(2), 0.0)

    def test_dist_345(self):
        assert dist_to_circle([0, 0], Circle([3, 4], 1.0)) == pytest.approx(5.0)

    def test_dist_at_center(self):
        assert dist_to_circle([1, 2], Circle([1, 2], 0.5)) == 0.0

    def test_dist_direct(self):
        assert dist_to_circle([1.5, 0], Circle([1, 0], 0.6)) == pytest.approx(0.5)

    def test_dist_ignores_extra_state_dims(self):
        # full 5-dim states are accepted; only x, y matter
        assert dist_to_circle([3, 4, 9.0, 9.0, 9.0], Circle([0, 0], 1.0)) == pytest.approx(5.0)


class TestObstacleField:
    def test_generate_is_deterministic(self):
        a = generate_obstacle_field(1, 10, 0.6, [3, -4], [10, 4])
        b = generate_obstacle_field(1, 10, 0.6, [3, -4], [10, 4])
        np.testing.assert_array_equal(a.centers, b.centers)

    def test_generate_respects_count_and_bounds(self):
        fld = generate_obstacle_field(1, 10, 0.6, [3, -4], [10, 4])
        assert len(fld.obstacles) == 10
        assert np.all(fld.centers >= [3, -4]) and np.all(fld.centers <= [10, 4])

    def test_generated_obstacles_disjoint(self):
        fld = generate_obstacle_field(1, 10, 0.6, [3, -4], [10, 4])
        c = fld.centers
        for i in range(10):
            for j in range(i + 1, 10):
                assert np.hypot(*(c[i] - c[j])) > 1.2

    def test_zero_count(self):
        fld = generate_obstacle_field(7, 0, 0.6, [3, -4], [10, 4])
        assert fld.obstacles == ()
        assert fld.centers.shape == (0, 2)

    def test_impossible_request_raises(self):
        with pytest.raises(PlacementError):
            generate_obstacle_field(0, 50, 2.0, [0, 0], [1, 1], max_attempts=200)

    def test_json_round_trip(self):
        fld = generate_obstacle_field(3, 5, 0.6, [3, -4], [10, 4])
        back = ObstacleField.from_json(fld.to_json(), fld.bounds_lo, fld.bounds_hi)
        np.testing.assert_allclose(back.centers, fld.centers)
        np.testing.assert_allclose(back.radii, fld.radii)

    def test_overlap_invariant_rejected(self):
        fld = ObstacleField((Circle([0, 0], 1.0), Circle([1, 0], 1.0)), [-5, -5], [5, 5])
        with pytest.raises(ValueError):
            fld.check_invariants()


class TestRngStream:
    def test_same_key_same_draws(self):
        a = RngStream(42, ("plan", 3)).generator.standard_normal(8)
        b = RngStream(42, ("plan", 3)).generator.standard_normal(8)
        np.testing.assert_array_equal(a, b)

    def test_different_keys_differ(self):
        a = RngStream(42, ("plan", 3)).generator.standard_normal(8)
        b = RngStream(42, ("plan", 4)).generator.standard_normal(8)
        assert not np.allclose(a, b)

    def test_derive_matches_direct_construction(self):
        a = RngStream(7).derive("exec", 0, 2).generator.standard_normal(4)
        b = RngStream(7, ("exec", 0, 2)).generator.standard_normal(4)
        np.testing.assert_array_equal(a, b)

    def test_string_keys_stable(self):
        a = RngStream(7, ("broadcast",)).generator.standard_normal(4)
        b = RngStream(7, ("broadcast",)).generator.standard_normal(4)
        np.testing.assert_array_equal(a, b)


class TestScenario:
    def test_json_round_trip(self):
        sc = Scenario(mode="centralized", agent_count=4, seed=9,
                      cost={"k": 1.0}, optimizer={"sample_count": 64})
        back = Scenario.from_json(sc.to_json())
        assert back == sc

    def test_partial_json_uses_defaults(self):
        sc = Scenario.from_json(json.dumps({"layout": "antipodal"}))
        assert sc.layout == "antipodal"
        assert sc.agent_count == 3
        assert sc.mode == "distributed"

    def test_validation(self):
        with pytest.raises(ValueError):
            Scenario(mode="telepathic")
        with pytest.raises(ValueError):
            Scenario(agent_count=0)
        with pytest.raises(ValueError):
            Scenario(sigma_p=[-0.1, 0, 0, 0, 0])

    def test_explicit_obstacles(self):
        sc = Scenario(obstacles=[{"cx": 4.0, "cy": 0.0, "r": 0.6}])
        fld = sc.obstacle_field()
        assert len(fld.obstacles) == 1
        assert fld.obstacles[0].radius == 0.6

    def test_antipodal_field_is_empty(self):
        assert Scenario(layout="antipodal").obstacle_field().obstacles == ()

    def test_generated_field_keyed_by_seed(self):
        a = Scenario(seed=1).obstacle_field()
        b = Scenario(seed=1).obstacle_field()
        np.testing.assert_array_equal(a.centers, b.centers)

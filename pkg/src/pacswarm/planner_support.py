"""Leader RRT path planning, wedge formation geometry, and formation-point methods."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .world import ObstacleField


class PlanningError(RuntimeError):
    """RRT could not connect start and goal within the node budget."""


@dataclass
class RrtConfig:
    step: float = 0.5
    goal_bias: float = 0.1
    max_nodes: int = 5000
    shortcut_attempts: int = 100
    goal_radius: float = 0.5
    margin: float = 2.0      # sampling-box margin around start/goal/field
    clearance: float = 0.6   # obstacle inflation during planning; relaxed if infeasible


@dataclass(frozen=True)
class FormationSpec:
    l: float = 1.0   # longitudinal offset behind the leader
    h: float = 1.0   # lateral offset

    def __post_init__(self):
        if self.l <= 0 or self.h <= 0:
            raise ValueError("formation offsets must be positive")


@dataclass
class Path:
    waypoints: np.ndarray  # (W, 2)

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float)
        if self.waypoints.ndim != 2 or self.waypoints.shape[0] < 2:
            raise ValueError("path needs at least two waypoints")

    @property
    def segment_lengths(self) -> np.ndarray:
        d = np.diff(self.waypoints, axis=0)
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def length(self) -> float:
        return float(self.segment_lengths.sum())

    def arclength_of(self, p) -> float:
        """Arc length of the closest point on the path to p."""
        p = np.asarray(p, dtype=float)
        best_s, best_d = 0.0, np.inf
        s_acc = 0.0
        for a, b, seg in zip(self.waypoints[:-1], self.waypoints[1:], self.segment_lengths):
            if seg < 1e-12:
                continue
            t = np.clip(np.dot(p - a, b - a) / seg ** 2, 0.0, 1.0)
            q = a + t * (b - a)
            d = np.hypot(*(p - q))
            if d < best_d:
                best_d, best_s = d, s_acc + t * seg
            s_acc += seg
        return best_s

    def point_at(self, s: float) -> np.ndarray:
        s = float(np.clip(s, 0.0, self.length))
        s_acc = 0.0
        for a, b, seg in zip(self.waypoints[:-1], self.waypoints[1:], self.segment_lengths):
            if s <= s_acc + seg or seg < 1e-12:
                if seg < 1e-12:
                    continue
                t = (s - s_acc) / seg
                return a + t * (b - a)
            s_acc += seg
        return self.waypoints[-1].copy()

    def tangent_at(self, s: float) -> float:
        """Heading (rad) of the segment containing arc length s."""
        s = float(np.clip(s, 0.0, self.length))
        s_acc = 0.0
        for a, b, seg in zip(self.waypoints[:-1], self.waypoints[1:], self.segment_lengths):
            if (s <= s_acc + seg and seg >= 1e-12) or np.isclose(s_acc + seg, self.length):
                if seg >= 1e-12:
                    return float(np.arctan2(b[1] - a[1], b[0] - a[0]))
            s_acc += seg
        d = self.waypoints[-1] - self.waypoints[-2]
        return float(np.arctan2(d[1], d[0]))


def _segment_clear(a, b, field: ObstacleField, clearance: float = 0.0) -> bool:
    centers = field.centers
    if not centers.shape[0]:
        return True
    ab = b - a
    denom = max(float(ab @ ab), 1e-12)
    t = np.clip(((centers - a) @ ab) / denom, 0.0, 1.0)
    closest = a + t[:, None] * ab
    d = np.hypot(centers[:, 0] - closest[:, 0], centers[:, 1] - closest[:, 1])
    return bool(np.all(d > field.radii + clearance))


def _point_clear(p, field: ObstacleField, clearance: float = 0.0) -> bool:
    centers = field.centers
    if not centers.shape[0]:
        return True
    d = np.hypot(centers[:, 0] - p[0], centers[:, 1] - p[1])
    return bool(np.all(d > field.radii + clearance))


def rrt_plan(start, goal, field: ObstacleField, rng: np.random.Generator,
             config: RrtConfig = None) -> Path:
    """RRT with greedy shortcutting; deterministic in rng.

    Obstacles are inflated by config.clearance so the path runs down the
    middle of corridors; if the inflated problem is infeasible the clearance
    is halved, then dropped.
    """
    config = config or RrtConfig()
    last = None
    for clearance in (config.clearance, 0.5 * config.clearance, 0.0):
        try:
            return _rrt_plan_once(start, goal, field, rng, config, clearance)
        except PlanningError as exc:
            last = exc
    raise last


def _rrt_plan_once(start, goal, field: ObstacleField, rng: np.random.Generator,
                   config: RrtConfig, clearance: float) -> Path:
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    if not _point_clear(start, field, clearance):
        raise PlanningError("start lies inside an obstacle")
    if not _point_clear(goal, field, clearance):
        raise PlanningError("goal lies inside an obstacle")
    if _segment_clear(start, goal, field, clearance):
        return Path(np.array([start, goal]))

    pts = np.vstack([start[None, :], goal[None, :], field.centers]) \
        if field.centers.shape[0] else np.vstack([start[None, :], goal[None, :]])
    lo = pts.min(axis=0) - config.margin
    hi = pts.max(axis=0) + config.margin

    nodes = np.empty((config.max_nodes, 2))
    parents = np.full(config.max_nodes, -1, dtype=int)
    nodes[0] = start
    n = 1
    goal_idx = -1
    while n < config.max_nodes:
        target = goal if rng.random() < config.goal_bias else rng.uniform(lo, hi)
        d = np.hypot(nodes[:n, 0] - target[0], nodes[:n, 1] - target[1])
        near = int(np.argmin(d))
        dist = d[near]
        if dist < 1e-9:
            continue
        new = nodes[near] + (target - nodes[near]) * min(config.step / dist, 1.0)
        if not _segment_clear(nodes[near], new, field, clearance):
            continue
        nodes[n] = new
        parents[n] = near
        if np.hypot(*(new - goal)) <= config.goal_radius \
                and _segment_clear(new, goal, field, clearance):
            goal_idx = n
            n += 1
            break
        n += 1
    if goal_idx < 0:
        raise PlanningError(f"RRT failed after {config.max_nodes} nodes")

    chain = [goal]
    i = goal_idx
    while i >= 0:
        chain.append(nodes[i].copy())
        i = parents[i]
    chain.reverse()
    way = np.array(chain)

    # greedy shortcutting
    for _ in range(config.shortcut_attempts):
        if way.shape[0] <= 2:
            break
        i = int(rng.integers(0, way.shape[0] - 2))
        j = int(rng.integers(i + 2, way.shape[0]))
        if _segment_clear(way[i], way[j], field, clearance):
            way = np.vstack([way[:i + 1], way[j:]])
    return Path(way)


def wedge_points(leader_p, leader_theta: float, spec: FormationSpec):
    """Formation goal points behind the leader (follower 2 upper signs, 3 lower).

    p = p_leader - [[cos t, +/-sin t], [sin t, -/+cos t]] @ [l, h]
    """
    p = np.asarray(leader_p, dtype=float)
    c, s = np.cos(leader_theta), np.sin(leader_theta)
    lh = np.array([spec.l, spec.h])
    m2 = np.array([[c, s], [s, -c]])
    m3 = np.array([[c, -s], [s, c]])
    return p - m2 @ lh, p - m3 @ lh


def project_goal_from_obstacles(goal, field: ObstacleField, leader_p,
                                margin: float = 0.1) -> np.ndarray:
    """Pull a formation goal out of obstacles, toward the leader.

    If the goal is within r of a circle center it is moved along the
    obstacle-center-to-leader direction to distance r + margin; up to 5
    rounds, then a ring search around the worst obstacle.
    """
    goal = np.asarray(goal, dtype=float).copy()
    leader_p = np.asarray(leader_p, dtype=float)
    if not field.obstacles:
        return goal
    for _ in range(5):
        hit = None
        for c in field.obstacles:
            if np.hypot(*(goal - c.center)) < c.radius:
                hit = c
                break
        if hit is None:
            return goal
        direction = leader_p - hit.center
        nrm = np.hypot(*direction)
        direction = direction / nrm if nrm > 1e-9 else np.array([1.0, 0.0])
        goal = hit.center + (hit.radius + margin) * direction
    # ring search around the last contested position
    for radius_scale in (1.0, 1.5, 2.0):
        for ang in np.linspace(0.0, 2 * np.pi, 16, endpoint=False):
            cand = goal + radius_scale * np.array([np.cos(ang), np.sin(ang)])
            if _point_clear(cand, field):
                return cand
    return goal


def formation_goals(method: str, leader_state, leader_path, leader_nu_mean_traj,
                    field: ObstacleField, spec: FormationSpec,
                    follower_states=None, rng: np.random.Generator = None,
                    lookahead: float = 2.0, rrt_config: RrtConfig = None):
    """Formation goal points for the two followers.

    leader_rrt: wedge at the path point `lookahead` ahead of the leader's
    arc-length projection, with the path tangent as the heading.
    mean_final_state: wedge at the terminal pose of the leader's current mean
    trajectory.
    follower_rrt: each follower plans its own RRT to the leader_rrt wedge
    point and tracks a lookahead point on that path.
    """
    if method not in ("leader_rrt", "mean_final_state", "follower_rrt"):
        raise ValueError(f"unknown formation method {method!r}")
    leader_state = np.asarray(leader_state, dtype=float)
    if method == "mean_final_state":
        xN = np.asarray(leader_nu_mean_traj, dtype=float)
        g2, g3 = wedge_points(xN[:2], xN[2], spec)
        return [project_goal_from_obstacles(g, field, leader_state[:2])
                for g in (g2, g3)]
    if leader_path is None:
        g2, g3 = wedge_points(leader_state[:2], leader_state[2], spec)
        return [project_goal_from_obstacles(g, field, leader_state[:2])
                for g in (g2, g3)]
    s = leader_path.arclength_of(leader_state[:2])
    ref = leader_path.point_at(s + lookahead)
    theta = leader_path.tangent_at(s + lookahead)
    g2, g3 = wedge_points(ref, theta, spec)
    if method == "leader_rrt":
        return [project_goal_from_obstacles(g, field, ref) for g in (g2, g3)]
    if method == "follower_rrt":
        out = []
        for fs, g in zip(follower_states, (g2, g3)):
            fs = np.asarray(fs, dtype=float)
            g = project_goal_from_obstacles(g, field, ref)
            try:
                p = rrt_plan(fs[:2], g, field, rng, rrt_config)
            except PlanningError:
                out.append(g)
                continue
            s_f = p.arclength_of(fs[:2])
            out.append(p.point_at(s_f + lookahead))
        return out
    raise AssertionError("unreachable")

"""Geometry, obstacle fields, scenario definitions, and seeded RNG streams."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np


class PlacementError(RuntimeError):
    """Raised when rejection sampling cannot place the requested obstacles."""


@dataclass(frozen=True)
class Circle:
    """A circular obstacle with an inflated radius (obstacle + max robot radius)."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.radius > 0:
            raise ValueError(f"circle radius must be > 0, got {self.radius}")


def dist_to_circle(p, c: Circle) -> float:
    """Euclidean distance from a planar point to the circle center.

    Distance is computed on position components only; the caller subtracts
    the inflated radius when evaluating clearance.
    """
    p = np.asarray(p, dtype=float)
    return float(np.hypot(p[0] - c.center[0], p[1] - c.center[1]))


@dataclass(frozen=True)
class ObstacleField:
    obstacles: tuple
    bounds_lo: np.ndarray
    bounds_hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "bounds_lo", np.asarray(self.bounds_lo, dtype=float))
        object.__setattr__(self, "bounds_hi", np.asarray(self.bounds_hi, dtype=float))

    def check_invariants(self):
        obs = self.obstacles
        for i, a in enumerate(obs):
            if not (np.all(a.center >= self.bounds_lo) and np.all(a.center <= self.bounds_hi)):
                raise ValueError(f"obstacle {i} center outside bounds")
            for b in obs[i + 1:]:
                if np.hypot(*(a.center - b.center)) <= a.radius + b.radius:
                    raise ValueError("overlapping obstacles")

    @property
    def centers(self) -> np.ndarray:
        """(O, 2) array of obstacle centers (empty -> shape (0, 2))."""
        if not self.obstacles:
            return np.zeros((0, 2))
        return np.array([c.center for c in self.obstacles])

    @property
    def radii(self) -> np.ndarray:
        return np.array([c.radius for c in self.obstacles])

    def to_json(self) -> str:
        return json.dumps(
            [{"cx": float(c.center[0]), "cy": float(c.center[1]), "r": float(c.radius)}
             for c in self.obstacles]
        )

    @classmethod
    def from_json(cls, text: str, bounds_lo=(-np.inf, -np.inf), bounds_hi=(np.inf, np.inf)) -> "ObstacleField":
        entries = json.loads(text)
        obstacles = [Circle(np.array([e["cx"], e["cy"]]), e["r"]) for e in entries]
        return cls(tuple(obstacles), np.asarray(bounds_lo), np.asarray(bounds_hi))


def generate_obstacle_field(seed: int, count: int, radius: float,
                            bounds_lo, bounds_hi, max_attempts: int = 10000) -> ObstacleField:
    """Rejection-sample `count` non-overlapping circles inside the box.

    Deterministic in `seed`. Raises PlacementError if the request cannot be
    satisfied within `max_attempts` candidate draws.
    """
    lo = np.asarray(bounds_lo, dtype=float)
    hi = np.asarray(bounds_hi, dtype=float)
    rng = RngStream(seed, ("obstacle_field",)).generator
    placed: list[Circle] = []
    attempts = 0
    while len(placed) < count:
        if attempts >= max_attempts:
            raise PlacementError(
                f"failed to place {count} obstacles of radius {radius} "
                f"in {lo}..{hi} after {max_attempts} attempts")
        attempts += 1
        center = rng.uniform(lo, hi)
        if all(np.hypot(*(center - c.center)) > radius + c.radius for c in placed):
            placed.append(Circle(center, radius))
    fld = ObstacleField(tuple(placed), lo, hi)
    fld.check_invariants()
    return fld


class RngStream:
    """Deterministic random stream keyed by (seed, stream id).

    Two streams built from the same (seed, key) produce identical draws. A
    stream is owned by a single consumer; use `derive` to branch independent
    child streams for other consumers (per agent, per purpose).
    """

    def __init__(self, seed: int, key=()):
        self.seed = int(seed)
        if isinstance(key, (int, str)):
            key = (key,)
        self.key = tuple(key)
        spawn = tuple(_key_to_int(k) for k in self.key)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=self.seed, spawn_key=spawn)))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def derive(self, *key) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(key))


def _key_to_int(k) -> int:
    if isinstance(k, (int, np.integer)):
        return int(k)
    # stable string hash (builtin hash is salted per process)
    h = 2166136261
    for ch in str(k).encode():
        h = ((h ^ ch) * 16777619) & 0xFFFFFFFF
    return h


# ---------------------------------------------------------------------------
# Scenario


@dataclass
class Scenario:
    """Everything needed to reproduce a trial, loadable from a JSON config.

    Nested parameter sections (`cost`, `optimizer`, `dynamics`, `lqr`) are
    stored as plain dicts; the consuming modules apply their own defaults.
    """

    mode: str = "distributed"                    # distributed | centralized
    layout: str = "formation"                    # formation | antipodal
    agent_count: int = 3
    seed: int = 0

    # initial-state sampling (formation layout)
    leader_lo: list = field(default_factory=lambda: [-1.0, -2.0, -np.pi / 8, 0.0, -0.2])
    leader_hi: list = field(default_factory=lambda: [1.0, 2.0, np.pi / 8, 1.0, 0.2])
    follower_noise: list = field(default_factory=lambda: [0.5, 0.5, np.pi / 16, 0.5, 0.2])

    # goals: explicit per-agent positions, or formation spec for followers
    goals: Optional[list] = None                 # [[x, y], ...] per agent
    leader_goal: list = field(default_factory=lambda: [15.0, 0.0])
    formation_l: float = 1.0
    formation_h: float = 1.0
    formation_method: str = "leader_rrt"         # leader_rrt | mean_final_state | follower_rrt
    lookahead: float = 4.0                       # path-goal lookahead (m)
    antipodal_radius: float = 5.0

    # obstacle field: explicit list of {cx, cy, r} or generation parameters
    obstacles: Optional[list] = None
    obstacle_count: int = 10
    obstacle_radius: float = 0.6
    field_lo: list = field(default_factory=lambda: [3.0, -4.0])
    field_hi: list = field(default_factory=lambda: [10.0, 4.0])

    # gyroscopic-avoidance flags
    static_gyro_on: bool = True
    agent_gyro_on: bool = True

    # measurement noise
    sigma_p: list = field(default_factory=lambda: [0.0, 0.0, 0.0, 0.0, 0.0])
    noise_aware: bool = False

    # simulation
    max_time: float = 60.0
    goal_tolerance: float = 1.0
    executed_steps: int = 5
    m_pred: int = 8
    state_lo: list = field(default_factory=lambda: [-25.0, -25.0, -1e9, -0.5, -0.4])
    state_hi: list = field(default_factory=lambda: [25.0, 25.0, 1e9, 2.0, 0.4])

    # nested parameter sections (module-level defaults apply to missing keys)
    cost: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    dynamics: dict = field(default_factory=dict)
    lqr: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.agent_count < 1:
            raise ValueError("agent_count must be >= 1")
        if any(s < 0 for s in self.sigma_p):
            raise ValueError("sigma_p entries must be >= 0")
        if self.mode not in ("distributed", "centralized"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.layout not in ("formation", "antipodal"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.formation_method not in ("leader_rrt", "mean_final_state", "follower_rrt"):
            raise ValueError(f"unknown formation_method {self.formation_method!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        data = json.loads(text)
        return cls(**data)

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path) as f:
            return cls.from_json(f.read())

    def obstacle_field(self) -> ObstacleField:
        if self.obstacles is not None:
            obstacles = [Circle(np.array([e["cx"], e["cy"]]), e["r"]) for e in self.obstacles]
            return ObstacleField(tuple(obstacles), self.field_lo, self.field_hi)
        if self.layout == "antipodal":
            return ObstacleField((), self.field_lo, self.field_hi)
        return generate_obstacle_field(self.seed, self.obstacle_count, self.obstacle_radius,
                                       self.field_lo, self.field_hi)

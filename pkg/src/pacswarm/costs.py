"""Trajectory costs and constraints.

Running/terminal formation cost, gyroscopic desired terminal velocity with the
give-way direction rule, and the binary collision/state-bound constraint.
Scalar entry points operate on one state; *_batch helpers vectorize over a
leading sample axis for the optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import Trajectory
from .world import ObstacleField

# rotation generator e_hat = [[0, -1], [1, 0]]
E_HAT = np.array([[0.0, -1.0], [1.0, 0.0]])

_ZERO_NORM = 1e-9
_DIST_GUARD = 1e-6


@dataclass
class CostParams:
    omega1: float = 0.5          # running velocity-shaping weight
    omega_u: float = 0.1         # input weight (paper lists it as omega_2/omega_3)
    k: float = 3.0               # proportional feedback gain
    k_att_static: float = 8.0
    k_obs_static: float = 1.0
    k_att_agent: float = 0.5
    k_obs_agent: float = 0.5
    qf: np.ndarray = field(default_factory=lambda: np.diag([1.0, 1.0]))
    qf_follower: np.ndarray = field(default_factory=lambda: np.diag([1.0, 1.5]))
    v_max: float = 2.0
    r_d: float = 3.0             # detection radius
    epsilon: float = 0.5         # detection-edge tuning
    gamma: float = 100.0         # constraint-bound weight in the planning objective
    L: float = 0.5               # inter-agent collision radius
    l_plan: Optional[float] = None  # separation enforced while planning; defaults to L
    detection_margin: float = 1.0

    def __post_init__(self):
        self.qf = np.asarray(self.qf, dtype=float)
        self.qf_follower = np.asarray(self.qf_follower, dtype=float)
        if self.v_max <= 0 or self.r_d <= 0 or self.L <= 0:
            raise ValueError("v_max, r_d and L must be positive")

    @property
    def planning_L(self) -> float:
        """Inter-agent separation the planner enforces; >= L buys noise margin."""
        return self.L if self.l_plan is None else self.l_plan

    @classmethod
    def from_dict(cls, d: dict) -> "CostParams":
        kw = dict(d)
        if "qf" in kw:
            kw["qf"] = np.diag(kw["qf"])
        if "qf_follower" in kw:
            kw["qf_follower"] = np.diag(kw["qf_follower"])
        return cls(**kw)


@dataclass(frozen=True)
class ObstacleEntry:
    position: np.ndarray
    velocity: np.ndarray
    radius: float
    kind: str  # static | agent

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float))
        if self.kind == "static" and np.any(self.velocity != 0):
            raise ValueError("static entries must have zero velocity")


@dataclass(frozen=True)
class GoalSpec:
    p_goal: np.ndarray
    v_desired_terminal: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "p_goal", np.asarray(self.p_goal, dtype=float))


def smooth_sign(s):
    """Logistic S(s) = 1 / (1 + exp(-s))."""
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    es = np.exp(s[~pos])
    out[~pos] = es / (1.0 + es)
    return out if out.ndim else float(out)


def k1(theta, k_att):
    """Attraction-alignment gain exp(k_att (theta - 1)); theta is a cosine."""
    return np.exp(np.asarray(k_att, dtype=float) * (np.asarray(theta, dtype=float) - 1.0))


def k2(d_norm, r, k_obs, params: CostParams):
    """Distance gain k_obs S(r_d + r - d - eps) / (d - r), guarded near penetration."""
    d_norm = np.asarray(d_norm, dtype=float)
    denom = np.maximum(d_norm - r, _DIST_GUARD)
    val = k_obs * smooth_sign(params.r_d + np.asarray(r) - d_norm - params.epsilon) / denom
    return val if np.ndim(val) else float(val)


def _angle(ax, ay, bx, by):
    """Unsigned angle between planar vectors, in [0, pi]."""
    na = np.hypot(ax, ay)
    nb = np.hypot(bx, by)
    c = (ax * bx + ay * by) / np.maximum(na * nb, _ZERO_NORM)
    return np.arccos(np.clip(c, -1.0, 1.0))


def give_way_batch(d, v_i, v_j):
    """Vectorized give-way direction e in {-1, 0, +1}; see `give_way`."""
    d = np.asarray(d, dtype=float)
    v_i = np.broadcast_to(np.asarray(v_i, dtype=float), d.shape)
    v_j = np.broadcast_to(np.asarray(v_j, dtype=float), d.shape)
    dx, dy = d[..., 0], d[..., 1]
    di = dx * v_i[..., 0] + dy * v_i[..., 1]
    dj = dx * v_j[..., 0] + dy * v_j[..., 1]
    phi_dvi = _angle(dx, dy, v_i[..., 0], v_i[..., 1])
    phi_dvj = _angle(dx, dy, v_j[..., 0], v_j[..., 1])

    zero = (np.hypot(*np.moveaxis(v_i, -1, 0)) < _ZERO_NORM) \
        | (np.hypot(*np.moveaxis(v_j, -1, 0)) < _ZERO_NORM) \
        | (np.hypot(dx, dy) < _ZERO_NORM)
    sign1 = np.where(phi_dvi - phi_dvj >= 0, 1.0, -1.0)          # C1 (and C2: phi is symmetric)
    sign3 = np.where(phi_dvi - phi_dvj > 0, 1.0, -1.0)           # C3 strict
    e = np.zeros(d.shape[:-1])
    c1 = (di >= 0) & (dj >= 0)
    c2 = (di >= 0) & (dj < 0)
    c3 = (di < 0) & (dj < 0)
    e = np.where(c1, sign1, np.where(c2, sign1, np.where(c3, sign3, 0.0)))
    return np.where(zero, 0.0, e)


def give_way(d, v_i, v_j) -> int:
    """Give-way direction per conditions C1-C4.

    C1: d.v_i >= 0 and d.v_j >= 0 -> sign(phi(d, v_i) - phi(d, v_j)), ties +1.
    C2: d.v_i >= 0 and d.v_j <  0 -> sign(phi(d, v_i) - phi(v_j, d)), ties +1.
    C3: d.v_i <  0 and d.v_j <  0 -> sign(phi(d, v_i) - phi(d, v_j)), strict.
    C4 (else, including zero-norm inputs): 0.
    """
    return int(give_way_batch(np.asarray(d, dtype=float)[None, :],
                              np.asarray(v_i, dtype=float)[None, :],
                              np.asarray(v_j, dtype=float)[None, :])[0])


def gyro_matrix_term(d, p_tilde, v_i, v_j, r, k_att, k_obs, params: CostParams):
    """G = k1(theta) k2(d) e(d, p_tilde, v_j) e_hat for a single obstacle."""
    p_tilde = np.asarray(p_tilde, dtype=float)
    d = np.asarray(d, dtype=float)
    if np.hypot(*p_tilde) < _ZERO_NORM:
        return np.zeros((2, 2))
    att = params.k * p_tilde
    d_norm = float(np.hypot(*d))
    # theta = cosine of the angle between d and the desired direction -k p_tilde
    theta = float(np.dot(-d, att) / max(d_norm * np.hypot(*att), _ZERO_NORM))
    e = give_way(d, v_i, v_j)
    gain = k1(theta, k_att) * k2(d_norm, r, k_obs, params) * e
    return gain * E_HAT


def desired_velocity(p_terminal, goal, v_terminal, obstacles, params: CostParams):
    """Gyroscopic desired terminal velocity v_d = -(sum_j G_j + I) k p_tilde.

    `obstacles` is an iterable of ObstacleEntry; static entries use the static
    gains and zero velocity, agent entries the agent gains and their terminal
    velocities. The result is rescaled to norm v_max when it exceeds it.
    """
    p_tilde = np.asarray(p_terminal, dtype=float) - np.asarray(goal, dtype=float)
    if np.hypot(*p_tilde) < _ZERO_NORM:
        return np.zeros(2)
    att = params.k * p_tilde
    v_i = -att
    g_total = 0.0
    for ob in obstacles:
        d = np.asarray(p_terminal, dtype=float) - ob.position
        d_norm = float(np.hypot(*d))
        if d_norm - ob.radius > params.r_d + params.detection_margin:
            continue
        if ob.kind == "static":
            k_att, k_obs = params.k_att_static, params.k_obs_static
        else:
            k_att, k_obs = params.k_att_agent, params.k_obs_agent
        theta = float(np.dot(-d, att) / max(d_norm * np.hypot(*att), _ZERO_NORM))
        e = give_way(d, v_i, ob.velocity)
        g_total += k1(theta, k_att) * k2(d_norm, ob.radius, k_obs, params) * e
    v_raw = -(att + g_total * (E_HAT @ att))
    n = float(np.hypot(*v_raw))
    if n > params.v_max:
        v_raw *= params.v_max / n
    return v_raw


def running_cost(x, u, goal: GoalSpec, params: CostParams) -> float:
    """omega1 (min(||k p_tilde||, v_max) - |v|)^2 + omega_u ||u||^2."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    p_tilde = x[:2] - goal.p_goal
    target = min(params.k * float(np.hypot(*p_tilde)), params.v_max)
    return float(params.omega1 * (target - abs(x[3])) ** 2 + params.omega_u * np.dot(u, u))


def terminal_cost(x_N, goal: GoalSpec, obstacles, params: CostParams, qf=None) -> float:
    """(v_d - v_N)' Q_f (v_d - v_N) with v_N the planar terminal velocity."""
    x_N = np.asarray(x_N, dtype=float)
    if qf is None:
        qf = params.qf
    v_d = desired_velocity(x_N[:2], goal.p_goal, None, obstacles, params)
    v_N = x_N[3] * np.array([np.cos(x_N[2]), np.sin(x_N[2])])
    vt = v_d - v_N
    return float(vt @ qf @ vt)


def trajectory_cost(traj: Trajectory, goal: GoalSpec, obstacles, params: CostParams,
                    qf=None) -> float:
    """Sum of running costs over t = 0..N-1 plus the terminal cost."""
    total = sum(running_cost(traj.states[t], traj.inputs[t], goal, params)
                for t in range(len(traj)))
    return total + terminal_cost(traj.states[-1], goal, obstacles, params, qf=qf)


def constraint_violation(traj: Trajectory, obstacles: ObstacleField,
                         other_agent_positions, state_lo, state_hi,
                         params: CostParams) -> int:
    """1 if any timestep violates state bounds, hits a static obstacle, or
    comes within L of another agent's same-timestep position; else 0.

    other_agent_positions: sequence over timesteps, each a list of 2-vectors
    (may be empty); indexed on the same grid as traj.states.
    """
    X = traj.states
    lo = np.asarray(state_lo, dtype=float)
    hi = np.asarray(state_hi, dtype=float)
    if np.any(X < lo) or np.any(X > hi):
        return 1
    centers = obstacles.centers
    if centers.shape[0]:
        radii = obstacles.radii
        d = np.hypot(X[:, None, 0] - centers[None, :, 0],
                     X[:, None, 1] - centers[None, :, 1])
        if np.any(d < radii):
            return 1
    if other_agent_positions is not None:
        for t, plist in enumerate(other_agent_positions):
            for p in plist:
                if np.hypot(X[t, 0] - p[0], X[t, 1] - p[1]) < params.planning_L:
                    return 1
    return 0


# ---------------------------------------------------------------------------
# Batched hot-path helpers


def desired_velocity_batch(pN, goal, obs_pos, obs_vel, obs_radius, obs_katt, obs_kobs,
                           params: CostParams):
    """Vectorized desired velocity.

    pN: (M, 2) terminal positions; obs_*: (M, J, ...) or broadcastable.
    Returns (M, 2).
    """
    pN = np.asarray(pN, dtype=float)
    M = pN.shape[0]
    p_tilde = pN - np.asarray(goal, dtype=float)
    att = params.k * p_tilde                       # (M, 2)
    at_goal = np.hypot(att[:, 0], att[:, 1]) < _ZERO_NORM
    if obs_pos is not None and obs_pos.shape[-2]:
        d = pN[:, None, :] - obs_pos               # (M, J, 2)
        d_norm = np.hypot(d[..., 0], d[..., 1])
        att_norm = np.hypot(att[:, 0], att[:, 1])[:, None]
        theta = -(d[..., 0] * att[:, None, 0] + d[..., 1] * att[:, None, 1]) \
            / np.maximum(d_norm * att_norm, _ZERO_NORM)
        e = give_way_batch(d, -att[:, None, :], obs_vel)
        in_range = (d_norm - obs_radius) <= (params.r_d + params.detection_margin)
        gains = k1(theta, obs_katt) * k2(d_norm, obs_radius, obs_kobs, params) * e
        g = np.sum(np.where(in_range, gains, 0.0), axis=-1)   # (M,)
    else:
        g = np.zeros(M)
    v_raw = -(att + g[:, None] * (att @ E_HAT.T))
    v_raw[at_goal] = 0.0
    n = np.hypot(v_raw[:, 0], v_raw[:, 1])
    scale = np.where(n > params.v_max, params.v_max / np.maximum(n, _ZERO_NORM), 1.0)
    return v_raw * scale[:, None]


def trajectory_cost_batch(X, U, goal, params: CostParams, qf,
                          static_centers=None, static_radii=None,
                          agent_pos=None, agent_vel=None,
                          static_gyro_on=True, agent_gyro_on=True):
    """Vectorized trajectory cost over a batch of rollouts.

    X: (M, N+1, 5); U: (M, N, 2); agent_pos/agent_vel: (M, Ja, 2) per-sample
    terminal positions/velocities of the other agents (or None).
    Returns (M,).
    """
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    M, N = U.shape[0], U.shape[1]
    goal = np.asarray(goal, dtype=float)

    p_tilde = X[:, :N, :2] - goal
    target = np.minimum(params.k * np.hypot(p_tilde[..., 0], p_tilde[..., 1]), params.v_max)
    run = params.omega1 * np.sum((target - np.abs(X[:, :N, 3])) ** 2, axis=1)
    run += params.omega_u * np.sum(U ** 2, axis=(1, 2))

    # assemble the terminal obstacle view: statics (optional) + agent entries
    pos_parts, vel_parts, rad_parts, katt_parts, kobs_parts = [], [], [], [], []
    if static_gyro_on and static_centers is not None and len(static_centers):
        O = len(static_centers)
        pos_parts.append(np.broadcast_to(static_centers, (M, O, 2)))
        vel_parts.append(np.zeros((M, O, 2)))
        rad_parts.append(np.broadcast_to(np.asarray(static_radii, dtype=float), (M, O)))
        katt_parts.append(np.full((M, O), params.k_att_static))
        kobs_parts.append(np.full((M, O), params.k_obs_static))
    if agent_gyro_on and agent_pos is not None and agent_pos.shape[1]:
        Ja = agent_pos.shape[1]
        pos_parts.append(agent_pos)
        vel_parts.append(agent_vel)
        rad_parts.append(np.full((M, Ja), params.L))
        katt_parts.append(np.full((M, Ja), params.k_att_agent))
        kobs_parts.append(np.full((M, Ja), params.k_obs_agent))
    if pos_parts:
        obs_pos = np.concatenate(pos_parts, axis=1)
        obs_vel = np.concatenate(vel_parts, axis=1)
        obs_rad = np.concatenate(rad_parts, axis=1)
        obs_katt = np.concatenate(katt_parts, axis=1)
        obs_kobs = np.concatenate(kobs_parts, axis=1)
    else:
        obs_pos = obs_vel = obs_rad = obs_katt = obs_kobs = None
        obs_pos = np.zeros((M, 0, 2))
        obs_vel = np.zeros((M, 0, 2))
        obs_rad = np.zeros((M, 0))
        obs_katt = np.zeros((M, 0))
        obs_kobs = np.zeros((M, 0))

    v_d = desired_velocity_batch(X[:, N, :2], goal, obs_pos, obs_vel, obs_rad,
                                 obs_katt, obs_kobs, params)
    v_N = X[:, N, 3:4] * np.stack([np.cos(X[:, N, 2]), np.sin(X[:, N, 2])], axis=-1)
    vt = v_d - v_N
    term = np.einsum("mi,ij,mj->m", vt, qf, vt)
    return run + term


def constraint_violation_batch(X, static_centers, static_radii, pred_pos,
                               state_lo, state_hi, params: CostParams):
    """Vectorized binary constraint over a batch of rollouts.

    X: (M, N+1, 5); pred_pos: (P, N+1, 2) predicted other-agent positions
    (all agents x prediction samples stacked on axis 0), or None.
    Returns (M,) of {0., 1.}.
    """
    X = np.asarray(X, dtype=float)
    lo = np.asarray(state_lo, dtype=float)
    hi = np.asarray(state_hi, dtype=float)
    viol = np.any((X < lo) | (X > hi), axis=(1, 2))
    if static_centers is not None and len(static_centers):
        d = np.hypot(X[:, :, None, 0] - static_centers[None, None, :, 0],
                     X[:, :, None, 1] - static_centers[None, None, :, 1])
        viol |= np.any(d < np.asarray(static_radii, dtype=float), axis=(1, 2))
    if pred_pos is not None and pred_pos.shape[0]:
        d = np.hypot(X[:, None, :, 0] - pred_pos[None, :, :, 0],
                     X[:, None, :, 1] - pred_pos[None, :, :, 1])
        viol |= np.any(d < params.planning_L, axis=(1, 2))
    return viol.astype(float)

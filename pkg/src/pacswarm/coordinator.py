"""Multi-agent orchestration.

Policy-exchange messages, other-agent trajectory prediction, measurement-noise
injection, the distributed and centralized planning loops, and event detection.
Planning intervals are synchronous and lock-stepped: messages are frozen at the
interval start, every agent plans against them, then all agents execute the
same number of steps on the true states.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import policy_dist as pd
from .costs import CostParams, constraint_violation_batch, trajectory_cost_batch
from .dynamics import N_U, N_X, BicycleParams
from .pac_optimizer import (BoundReport, PacConfig, PlanContext, plan,
                            rollout_closed_loop_batch, warm_start)
from .policy_dist import PolicyDistribution
from .tvlqr import LqrWeights
from .world import ObstacleField, RngStream


@dataclass
class AgentMessage:
    """One agent's broadcast: noisy initial state plus policy parameters."""

    agent_id: int
    plan_index: int
    x0: np.ndarray
    policy: PolicyDistribution
    state_cov: np.ndarray     # per-dimension measurement variances

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.state_cov = np.asarray(self.state_cov, dtype=float)
        if np.any(self.state_cov < 0):
            raise ValueError("state_cov entries must be >= 0")

    def to_json(self) -> str:
        return json.dumps({
            "agent_id": int(self.agent_id),
            "plan_index": int(self.plan_index),
            "x0": self.x0.tolist(),
            "mu": self.policy.mu.tolist(),
            "sigma2": self.policy.sigma2.tolist(),
            "state_cov": self.state_cov.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "AgentMessage":
        d = json.loads(text)
        return cls(d["agent_id"], d["plan_index"], np.array(d["x0"]),
                   PolicyDistribution(np.array(d["mu"]), np.array(d["sigma2"])),
                   np.array(d["state_cov"]))


@dataclass
class PredictionSet:
    """Sampled trajectory predictions for every other agent.

    positions: (Jo, M_pred, N+1, 2); velocities: (Jo, M_pred, N+1, 2) planar.
    """

    agent_ids: list
    positions: np.ndarray
    velocities: np.ndarray

    @property
    def m_pred(self) -> int:
        return self.positions.shape[1] if self.positions.size else 0

    def constraint_positions(self) -> Optional[np.ndarray]:
        """All predicted position trajectories stacked: (Jo*M_pred, N+1, 2)."""
        if not self.agent_ids:
            return None
        jo, mp, n1, _ = self.positions.shape
        return self.positions.reshape(jo * mp, n1, 2)

    def terminal_positions(self) -> Optional[np.ndarray]:
        """(M_pred, Jo, 2) terminal positions, indexed sample-first."""
        if not self.agent_ids:
            return None
        return np.swapaxes(self.positions[:, :, -1, :], 0, 1)

    def terminal_velocities(self) -> Optional[np.ndarray]:
        if not self.agent_ids:
            return None
        return np.swapaxes(self.velocities[:, :, -1, :], 0, 1)


@dataclass(frozen=True)
class SimEvent:
    kind: str        # obstacle_crash | agent_collision | trapped | goal_reached
    time: float
    agent_id: int

    KINDS = ("obstacle_crash", "agent_collision", "trapped", "goal_reached")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "time": float(self.time), "agent_id": int(self.agent_id)}


@dataclass
class Team:
    """Static per-trial configuration shared by every planning interval."""

    params: BicycleParams
    weights: LqrWeights
    cost_params: CostParams
    pac: PacConfig
    field: ObstacleField
    sigma_p: np.ndarray = field(default_factory=lambda: np.zeros(N_X))
    noise_aware: bool = False
    static_gyro_on: bool = True
    agent_gyro_on: bool = True
    m_pred: int = 8
    executed_steps: int = 5
    warm_iteration_count: Optional[int] = None
    goal_tolerance: float = 1.0
    state_lo: np.ndarray = field(default_factory=lambda: np.array([-25., -25., -1e9, -0.5, -0.4]))
    state_hi: np.ndarray = field(default_factory=lambda: np.array([25., 25., 1e9, 2.0, 0.4]))

    def __post_init__(self):
        self.sigma_p = np.asarray(self.sigma_p, dtype=float)
        self.state_lo = np.asarray(self.state_lo, dtype=float)
        self.state_hi = np.asarray(self.state_hi, dtype=float)

    def pac_for(self, plan_index: int) -> PacConfig:
        if plan_index > 0 and self.warm_iteration_count is not None:
            return replace(self.pac, iteration_count=self.warm_iteration_count)
        return self.pac


def broadcast_states(states, policies, plan_index: int, sigma_p,
                     rng: np.random.Generator) -> list:
    """Each agent shares x_hat = x + eta, eta ~ N(0, diag(sigma_p)), plus nu."""
    states = np.asarray(states, dtype=float)
    sigma_p = np.asarray(sigma_p, dtype=float)
    noise = rng.standard_normal(states.shape) * np.sqrt(sigma_p)
    return [AgentMessage(i, plan_index, states[i] + noise[i], policies[i], sigma_p)
            for i in range(states.shape[0])]


def sample_other_trajectories(messages, own_id: int, m_pred: int,
                              params: BicycleParams, weights: LqrWeights,
                              noise_aware: bool, rng: np.random.Generator) -> PredictionSet:
    """Sample M_pred closed-loop trajectory predictions for each other agent.

    With noise_aware, each prediction rollout draws a fresh initial state from
    N(x_hat, Sigma_p); otherwise all rollouts start at the broadcast x_hat.
    """
    ids, positions, velocities = [], [], []
    for msg in messages:
        if msg.agent_id == own_id:
            continue
        Xi = pd.sample(msg.policy, rng, size=m_pred)
        x0 = msg.x0
        if noise_aware and np.any(msg.state_cov > 0):
            x0 = x0 + rng.standard_normal((m_pred, N_X)) * np.sqrt(msg.state_cov)
        X, _ = rollout_closed_loop_batch(Xi, x0, params, weights, rng)
        ids.append(msg.agent_id)
        positions.append(X[:, :, :2])
        vel = X[:, :, 3:4] * np.stack([np.cos(X[:, :, 2]), np.sin(X[:, :, 2])], axis=-1)
        velocities.append(vel)
    if not ids:
        return PredictionSet([], np.zeros((0, m_pred, 0, 2)), np.zeros((0, m_pred, 0, 2)))
    return PredictionSet(ids, np.stack(positions), np.stack(velocities))


def _execute(nu: PolicyDistribution, x_true, team: Team, rng: np.random.Generator):
    """Run the mean policy closed-loop on the true state with process noise.

    Returns the executed state segment (executed_steps + 1, 5) and the applied
    inputs (executed_steps, 2).
    """
    X, U = rollout_closed_loop_batch(nu.mu[None, :], np.asarray(x_true, dtype=float),
                                     team.params, team.weights, rng)
    s = team.executed_steps
    return X[0, :s + 1], U[0, :s]


def _hold(x_true, team: Team):
    """Executed segment of a parked agent: brakes locked, no process noise."""
    s = team.executed_steps
    return np.tile(np.asarray(x_true, dtype=float), (s + 1, 1)), np.zeros((s, N_U))


def detect_interval_events(exec_states, goals, team: Team, t0: float) -> list:
    """Events on the executed TRUE states of one interval.

    exec_states: (A, S+1, 5). Collision/crash events fire at the first step
    they hold; goal_reached fires when an agent ends the interval within
    tolerance of its goal.
    """
    exec_states = np.asarray(exec_states, dtype=float)
    A, S1 = exec_states.shape[0], exec_states.shape[1]
    dt = team.params.dt
    events = []
    centers, radii = team.field.centers, team.field.radii
    for i in range(A):
        P = exec_states[i, :, :2]
        if centers.shape[0]:
            d = np.hypot(P[:, None, 0] - centers[None, :, 0],
                         P[:, None, 1] - centers[None, :, 1])
            hits = np.any(d < radii, axis=1)
            if np.any(hits):
                t = int(np.argmax(hits))
                events.append(SimEvent("obstacle_crash", t0 + t * dt, i))
        for j in range(i + 1, A):
            d = np.hypot(P[:, 0] - exec_states[j, :, 0], P[:, 1] - exec_states[j, :, 1])
            if np.any(d < team.cost_params.L):
                t = int(np.argmax(d < team.cost_params.L))
                events.append(SimEvent("agent_collision", t0 + t * dt, i))
                events.append(SimEvent("agent_collision", t0 + t * dt, j))
    for i in range(A):
        if np.hypot(*(exec_states[i, -1, :2] - np.asarray(goals[i]))) <= team.goal_tolerance:
            events.append(SimEvent("goal_reached", t0 + (S1 - 1) * dt, i))
    return events


def parked_policy(dim: int) -> PolicyDistribution:
    """Zero-mean, near-deterministic policy: an agent at rest stays in place."""
    return PolicyDistribution(np.zeros(dim), np.full(dim, 1e-8))


def distributed_step(team: Team, states, nus, goals, qfs, plan_index: int,
                     rng: RngStream, frozen=frozenset(), fresh=frozenset()):
    """One lock-stepped distributed planning interval.

    Every agent plans against the interval-start broadcasts with the others'
    policies held fixed, then executes the first executed_steps of its new
    mean policy on its true state.

    Agents in `frozen` (already at their final goals) skip planning and hold
    position with the parked policy; others see them as stationary. Agents in
    `fresh` (restarted after a stall) plan with the full iteration budget
    instead of the warm-start budget.

    Returns (new_states, exec_states (A, S+1, 5), exec_inputs (A, S, 2),
    nus_next (warm-started), reports, messages, events).
    """
    states = np.asarray(states, dtype=float)
    A = states.shape[0]
    nus = [parked_policy(nus[i].dim) if i in frozen else nus[i] for i in range(A)]
    messages = broadcast_states(states, nus, plan_index, team.sigma_p,
                                rng.derive("broadcast", plan_index).generator)
    pac = team.pac_for(plan_index)
    nus_new, reports = [], []
    for i in range(A):
        if i in frozen:
            nus_new.append(nus[i])
            reports.append(None)
            continue
        preds = sample_other_trajectories(
            messages, i, team.m_pred, team.params, team.weights, team.noise_aware,
            rng.derive("pred", plan_index, i).generator)
        context = PlanContext(
            x0=states[i], goal=np.asarray(goals[i], dtype=float),
            params=team.params, weights=team.weights, cost_params=team.cost_params,
            qf=qfs[i], static_centers=team.field.centers, static_radii=team.field.radii,
            pred_positions=preds.constraint_positions(),
            pred_term_pos=preds.terminal_positions(),
            pred_term_vel=preds.terminal_velocities(),
            state_lo=team.state_lo, state_hi=team.state_hi,
            static_gyro_on=team.static_gyro_on, agent_gyro_on=team.agent_gyro_on,
            sigma_p=team.sigma_p, noise_aware=team.noise_aware)
        nu_i, report = plan(nus[i], context, team.pac if i in fresh else pac,
                            rng.derive("plan", plan_index, i).generator)
        nus_new.append(nu_i)
        reports.append(report)

    segs = [_hold(states[i], team) if i in frozen else
            _execute(nus_new[i], states[i], team,
                     rng.derive("exec", plan_index, i).generator) for i in range(A)]
    exec_states = np.stack([s for s, _ in segs])
    exec_inputs = np.stack([u for _, u in segs])
    new_states = exec_states[:, -1].copy()
    events = detect_interval_events(exec_states, goals, team,
                                    t0=plan_index * team.executed_steps * team.params.dt)
    nus_next = [nus_new[i] if i in frozen else warm_start(nus_new[i], team.executed_steps, team.pac)
                for i in range(A)]
    return new_states, exec_states, exec_inputs, nus_next, reports, messages, events


@dataclass
class JointPlanContext:
    """Evaluator over the stacked team policy (dim = A * N * 2).

    Cost is the sum of per-agent costs with same-sample teammates acting as
    dynamic obstacles; the constraint ORs per-agent static/bounds checks with
    same-sample pairwise separation.
    """

    x0: np.ndarray           # (A, 5)
    goals: np.ndarray        # (A, 2)
    qfs: list
    team: Team

    def evaluate(self, Xi: np.ndarray, rng: np.random.Generator):
        team = self.team
        M = Xi.shape[0]
        A = self.x0.shape[0]
        D = Xi.shape[1] // A
        rollouts = []
        for i in range(A):
            x0 = self.x0[i]
            if team.noise_aware and np.any(team.sigma_p > 0):
                x0 = x0 + rng.standard_normal((M, N_X)) * np.sqrt(team.sigma_p)
            X, U = rollout_closed_loop_batch(Xi[:, i * D:(i + 1) * D], x0,
                                             team.params, team.weights, rng)
            rollouts.append((X, U))
        J = np.zeros(M)
        C = np.zeros(M, dtype=bool)
        for i in range(A):
            X, U = rollouts[i]
            others = [j for j in range(A) if j != i]
            if others and team.agent_gyro_on:
                agent_pos = np.stack([rollouts[j][0][:, -1, :2] for j in others], axis=1)
                xo = np.stack([rollouts[j][0][:, -1] for j in others], axis=1)
                agent_vel = xo[..., 3:4] * np.stack([np.cos(xo[..., 2]),
                                                     np.sin(xo[..., 2])], axis=-1)
            else:
                agent_pos = agent_vel = None
            J += trajectory_cost_batch(X, U, self.goals[i], team.cost_params, self.qfs[i],
                                       static_centers=team.field.centers,
                                       static_radii=team.field.radii,
                                       agent_pos=agent_pos, agent_vel=agent_vel,
                                       static_gyro_on=team.static_gyro_on,
                                       agent_gyro_on=team.agent_gyro_on)
            C |= constraint_violation_batch(X, team.field.centers, team.field.radii,
                                            None, team.state_lo, team.state_hi,
                                            team.cost_params).astype(bool)
        for i in range(A):
            for j in range(i + 1, A):
                d = np.hypot(rollouts[i][0][:, :, 0] - rollouts[j][0][:, :, 0],
                             rollouts[i][0][:, :, 1] - rollouts[j][0][:, :, 1])
                C |= np.any(d < team.cost_params.planning_L, axis=1)
        return J, C.astype(float), None


def _pin_frozen_blocks(nu: PolicyDistribution, frozen, D: int) -> PolicyDistribution:
    if not frozen:
        return nu
    mu = nu.mu.copy()
    s2 = nu.sigma2.copy()
    for i in frozen:
        mu[i * D:(i + 1) * D] = 0.0
        s2[i * D:(i + 1) * D] = 1e-8
    return PolicyDistribution(mu, s2)


def centralized_step(team: Team, states, nu_joint: PolicyDistribution, goals, qfs,
                     plan_index: int, rng: RngStream, frozen=frozenset(),
                     fresh: bool = False):
    """One planning interval with a single optimizer over the stacked team policy.

    Frozen agents' policy blocks are pinned to the parked policy so they hold
    position while the rest of the team keeps planning around them.

    Returns (new_states, exec_states, exec_inputs, nu_joint_next, report, events).
    """
    states = np.asarray(states, dtype=float)
    A = states.shape[0]
    D = nu_joint.dim // A
    nu_joint = _pin_frozen_blocks(nu_joint, frozen, D)
    context = JointPlanContext(states, np.asarray(goals, dtype=float), list(qfs), team)
    nu_new, report = plan(nu_joint, context,
                          team.pac if fresh else team.pac_for(plan_index),
                          rng.derive("plan", plan_index).generator)
    nu_new = _pin_frozen_blocks(nu_new, frozen, D)
    segs = []
    for i in range(A):
        if i in frozen:
            segs.append(_hold(states[i], team))
            continue
        nu_i = PolicyDistribution(nu_new.mu[i * D:(i + 1) * D],
                                  nu_new.sigma2[i * D:(i + 1) * D])
        segs.append(_execute(nu_i, states[i], team,
                             rng.derive("exec", plan_index, i).generator))
    exec_states = np.stack([s for s, _ in segs])
    exec_inputs = np.stack([u for _, u in segs])
    new_states = exec_states[:, -1].copy()
    events = detect_interval_events(exec_states, goals, team,
                                    t0=plan_index * team.executed_steps * team.params.dt)
    # warm-start each agent's block, then re-stack
    mus, s2s = [], []
    for i in range(A):
        nu_i = PolicyDistribution(nu_new.mu[i * D:(i + 1) * D],
                                  nu_new.sigma2[i * D:(i + 1) * D])
        if i not in frozen:
            nu_i = warm_start(nu_i, team.executed_steps, team.pac)
        mus.append(nu_i.mu)
        s2s.append(nu_i.sigma2)
    nu_joint_next = PolicyDistribution(np.concatenate(mus), np.concatenate(s2s))
    return new_states, exec_states, exec_inputs, nu_joint_next, report, events


def detect_outcome(events, agent_count: int, goal_flags, max_time: float) -> list:
    """Final per-agent classification from the accumulated interval events.

    Priority: first agent_collision/obstacle_crash; else goal_reached; else
    trapped at max_time.
    """
    out = []
    for i in range(agent_count):
        mine = sorted((e for e in events if e.agent_id == i
                       and e.kind in ("agent_collision", "obstacle_crash")),
                      key=lambda e: e.time)
        if mine:
            out.append(mine[0])
            continue
        goals = [e for e in events if e.agent_id == i and e.kind == "goal_reached"]
        if goal_flags[i] and goals:
            out.append(goals[0])
        elif goal_flags[i]:
            out.append(SimEvent("goal_reached", max_time, i))
        else:
            out.append(SimEvent("trapped", max_time, i))
    return out

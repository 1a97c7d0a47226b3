"""Stochastic kinematic bicycle model with control limits and analytic linearization.

State x = [p_x, p_y, theta, v, delta_s]; input u = [accel, steer_rate].
All operations accept either a single vector or a batch with leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_X = 5
N_U = 2

# paper process-noise covariance (diagonal)
DEFAULT_PROCESS_COV = (0.001, 0.001, 0.1, 0.2, 0.001)


@dataclass
class BicycleParams:
    wheel_base: float = 0.33
    process_cov: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_PROCESS_COV))
    dt: float = 0.1
    horizon: int = 20
    v_lo: float = -0.5
    v_hi: float = 2.0
    delta_max: float = 0.4
    accel_max: float = 1.0
    steer_rate_max: float = 1.0

    def __post_init__(self):
        self.process_cov = np.asarray(self.process_cov, dtype=float)
        if self.wheel_base <= 0 or self.dt <= 0:
            raise ValueError("wheel_base and dt must be positive")
        if np.any(self.process_cov < 0):
            raise ValueError("process covariance entries must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "BicycleParams":
        return cls(**d)


@dataclass
class Trajectory:
    """Alternating state/input sequence: N+1 states, N inputs."""

    states: np.ndarray   # (N+1, 5)
    inputs: np.ndarray   # (N, 2)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.states.shape[0] != self.inputs.shape[0] + 1:
            raise ValueError("states length must be inputs length + 1")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.inputs))):
            raise ValueError("trajectory entries must be finite")

    def __len__(self):
        return self.inputs.shape[0]


def clamp_input(u, params: BicycleParams):
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    out[..., 0] = np.clip(u[..., 0], -params.accel_max, params.accel_max)
    out[..., 1] = np.clip(u[..., 1], -params.steer_rate_max, params.steer_rate_max)
    return out


def clamp_state(x, params: BicycleParams):
    x = np.asarray(x, dtype=float)
    out = np.array(x, copy=True)
    out[..., 3] = np.clip(x[..., 3], params.v_lo, params.v_hi)
    out[..., 4] = np.clip(x[..., 4], -params.delta_max, params.delta_max)
    return out


def drift(x, u, params: BicycleParams):
    """f(x, u) = [v cos(theta), v sin(theta), v tan(delta)/l, accel, steer_rate]."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    theta = x[..., 2]
    v = x[..., 3]
    delta = x[..., 4]
    out = np.empty(np.broadcast_shapes(x[..., 0].shape, u[..., 0].shape) + (N_X,))
    out[..., 0] = v * np.cos(theta)
    out[..., 1] = v * np.sin(theta)
    out[..., 2] = v * np.tan(delta) / params.wheel_base
    out[..., 3] = u[..., 0]
    out[..., 4] = u[..., 1]
    return out


def step_deterministic(x, u, params: BicycleParams):
    """Euler step: inputs clamped before the drift, v/delta clamped after."""
    u = clamp_input(u, params)
    x1 = np.asarray(x, dtype=float) + drift(x, u, params) * params.dt
    return clamp_state(x1, params)


def step_stochastic(x, u, params: BicycleParams, rng: np.random.Generator):
    """Euler step with additive drift noise: x + (f + w) dt, w ~ N(0, Gamma)."""
    u = clamp_input(u, params)
    x = np.asarray(x, dtype=float)
    w = rng.standard_normal(x.shape) * np.sqrt(params.process_cov)
    x1 = x + (drift(x, u, params) + w) * params.dt
    return clamp_state(x1, params)


def linearize(x, u, params: BicycleParams):
    """Discrete-time Jacobians about (x, u): A = I + dt df/dx, B = dt df/du."""
    x = np.asarray(x, dtype=float)
    batch = x.shape[:-1]
    theta = x[..., 2]
    v = x[..., 3]
    delta = x[..., 4]
    dt = params.dt
    l = params.wheel_base

    A = np.zeros(batch + (N_X, N_X))
    A[..., np.arange(N_X), np.arange(N_X)] = 1.0
    A[..., 0, 2] = -dt * v * np.sin(theta)
    A[..., 0, 3] = dt * np.cos(theta)
    A[..., 1, 2] = dt * v * np.cos(theta)
    A[..., 1, 3] = dt * np.sin(theta)
    A[..., 2, 3] = dt * np.tan(delta) / l
    A[..., 2, 4] = dt * v / (l * np.cos(delta) ** 2)

    B = np.zeros(batch + (N_X, N_U))
    B[..., 3, 0] = dt
    B[..., 4, 1] = dt
    return A, B


def rollout_nominal(x0, input_sequence, params: BicycleParams) -> Trajectory:
    """Deterministic rollout of an input sequence; inputs are clamped."""
    U = clamp_input(np.asarray(input_sequence, dtype=float), params)
    states = np.empty((U.shape[0] + 1, N_X))
    states[0] = np.asarray(x0, dtype=float)
    for t in range(U.shape[0]):
        states[t + 1] = step_deterministic(states[t], U[t], params)
    return Trajectory(states, U)


# ---------------------------------------------------------------------------
# Batched hot-path variants (leading sample axis M)


def rollout_nominal_batch(x0, U, params: BicycleParams):
    """Batched deterministic rollout.

    x0: (5,) or (M, 5); U: (M, N, 2). Returns (X (M, N+1, 5), Uc (M, N, 2)).
    """
    U = np.asarray(U, dtype=float)
    M, N, _ = U.shape
    Uc = clamp_input(U, params)
    X = np.empty((M, N + 1, N_X))
    x0 = np.asarray(x0, dtype=float)
    X[:, 0] = x0 if x0.ndim == 2 else np.broadcast_to(x0, (M, N_X))
    for t in range(N):
        X[:, t + 1] = step_deterministic(X[:, t], Uc[:, t], params)
    return X, Uc

"""Finite-horizon discrete TVLQR gain synthesis and the feedback-policy evaluator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import (N_U, N_X, BicycleParams, Trajectory, clamp_input, linearize)


class NumericalError(RuntimeError):
    """Raised when the Riccati recursion hits a singular (R + B'PB)."""


@dataclass
class LqrWeights:
    Q: np.ndarray = field(default_factory=lambda: np.diag([10.0, 10.0, 1.0, 1.0, 0.1]))
    R: np.ndarray = field(default_factory=lambda: np.diag([1.0, 1.0]))
    Q_N: np.ndarray = None

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        if self.Q_N is None:
            self.Q_N = self.Q.copy()
        self.Q_N = np.asarray(self.Q_N, dtype=float)
        if not (np.allclose(self.Q, self.Q.T) and np.allclose(self.R, self.R.T)
                and np.allclose(self.Q_N, self.Q_N.T)):
            raise ValueError("LQR weights must be symmetric")

    @classmethod
    def from_dict(cls, d: dict) -> "LqrWeights":
        kw = {}
        if "q" in d:
            kw["Q"] = np.diag(d["q"])
        if "r" in d:
            kw["R"] = np.diag(d["r"])
        if "q_n" in d:
            kw["Q_N"] = np.diag(d["q_n"])
        return cls(**kw)


@dataclass
class GainSchedule:
    gains: np.ndarray  # (N, 2, 5)

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=float)
        if not np.all(np.isfinite(self.gains)):
            raise ValueError("gains must be finite")

    def __len__(self):
        return self.gains.shape[0]


def tvlqr_gains(nominal: Trajectory, weights: LqrWeights, params: BicycleParams,
                return_cost_to_go: bool = False):
    """Backward Riccati recursion about a nominal trajectory.

    K_t = (R + B'P_{t+1}B)^-1 B'P_{t+1}A;  P_t = Q + A'P_{t+1}(A - B K_t).
    """
    A, B = linearize(nominal.states[:-1], nominal.inputs, params)
    K, P_hist = _riccati(A, B, weights)
    sched = GainSchedule(K)
    if return_cost_to_go:
        return sched, P_hist
    return sched


def _riccati(A, B, weights: LqrWeights):
    N = A.shape[-3]
    batch = A.shape[:-3]
    K = np.empty(batch + (N, N_U, N_X))
    P = np.broadcast_to(weights.Q_N, batch + (N_X, N_X)).copy()
    P_hist = [P.copy()]
    for t in range(N - 1, -1, -1):
        At = A[..., t, :, :]
        Bt = B[..., t, :, :]
        BtT = np.swapaxes(Bt, -1, -2)
        S = weights.R + BtT @ P @ Bt
        try:
            K[..., t, :, :] = np.linalg.solve(S, BtT @ P @ At)
        except np.linalg.LinAlgError as e:
            raise NumericalError(f"singular R + B'PB at t={t}") from e
        P = weights.Q + np.swapaxes(At, -1, -2) @ P @ (At - Bt @ K[..., t, :, :])
        P = 0.5 * (P + np.swapaxes(P, -1, -2))
        P_hist.append(P.copy())
    P_hist.reverse()
    return K, P_hist


def riccati_gains_batch(A, weights: LqrWeights, dt: float):
    """Batched Riccati exploiting the bicycle's constant B (dt into rows 3, 4).

    A: (M, N, 5, 5). Returns K: (M, N, 2, 5).
    """
    M, N = A.shape[0], A.shape[1]
    K = np.empty((M, N, N_U, N_X))
    P = np.broadcast_to(weights.Q_N, (M, N_X, N_X)).copy()
    R = weights.R
    for t in range(N - 1, -1, -1):
        At = A[:, t]
        # B'P = dt * P[3:5, :]
        S = R + dt * dt * P[:, 3:5, 3:5]
        BtPA = dt * (P[:, 3:5, :] @ At)
        det = S[:, 0, 0] * S[:, 1, 1] - S[:, 0, 1] * S[:, 1, 0]
        if np.any(np.abs(det) < 1e-300):
            raise NumericalError(f"singular R + B'PB at t={t}")
        inv = np.empty_like(S)
        inv[:, 0, 0] = S[:, 1, 1]
        inv[:, 1, 1] = S[:, 0, 0]
        inv[:, 0, 1] = -S[:, 0, 1]
        inv[:, 1, 0] = -S[:, 1, 0]
        inv /= det[:, None, None]
        Kt = inv @ BtPA
        K[:, t] = Kt
        Acl = At.copy()
        Acl[:, 3, :] -= dt * Kt[:, 0, :]
        Acl[:, 4, :] -= dt * Kt[:, 1, :]
        P = weights.Q + np.swapaxes(At, -1, -2) @ (P @ Acl)
        P = 0.5 * (P + np.swapaxes(P, -1, -2))
    return K


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def apply_policy(K, x_nominal, u_nominal, x_actual, params: BicycleParams):
    """u = u_nom + K (x_nom - x), heading error wrapped, result clamped."""
    err = np.asarray(x_nominal, dtype=float) - np.asarray(x_actual, dtype=float)
    err = np.array(err, copy=True)
    err[..., 2] = wrap_angle(err[..., 2])
    u = np.asarray(u_nominal, dtype=float) + np.einsum("...ij,...j->...i", K, err)
    return clamp_input(u, params)

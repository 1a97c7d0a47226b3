"""PAC-NMPC planning loop.

Samples feedback policies from the surrogate Gaussian, rolls them out under
stochastic dynamics, and updates the distribution by natural-gradient descent
on the weighted PAC bound objective J+ + gamma C+ with a Renyi-2 trust region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import policy_dist as pd
from .costs import (CostParams, constraint_violation_batch, trajectory_cost_batch)
from .dynamics import (N_U, N_X, BicycleParams, Trajectory, clamp_input,
                       drift, linearize, rollout_nominal_batch)
from .policy_dist import PolicyDistribution, ValidityError
from .tvlqr import LqrWeights, riccati_gains_batch, wrap_angle


@dataclass
class PacConfig:
    sample_count: int = 256
    iteration_count: int = 50
    delta: float = 0.05
    cost_scale: float = 100.0        # b: normalized loss is min(J/b, 1)
    gamma: float = 100.0             # weight on the constraint bound
    alpha_lo: float = 1e-3
    alpha_hi: float = 1e3
    alpha_iters: int = 30
    step_size: float = 1.0
    grad_steps: int = 2
    trust_region_d2_max: float = 0.5
    sigma_init: float = 0.25
    sigma_floor: float = 1e-4
    warm_start: bool = True
    mu_init_accel: float = 0.5   # initial mean forward acceleration (symmetry break)

    def __post_init__(self):
        if self.sample_count < 2:
            raise ValueError("sample_count must be >= 2")
        if not (0 < self.delta < 1):
            raise ValueError("delta must be in (0, 1)")
        if self.cost_scale <= 0 or self.trust_region_d2_max <= 0:
            raise ValueError("cost_scale and trust_region_d2_max must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "PacConfig":
        return cls(**d)


@dataclass
class BoundReport:
    j_hat: float
    d_term: float
    phi_term: float
    j_plus: float
    c_hat: float
    c_plus: float
    alpha_star_cost: float
    alpha_star_constraint: float


@dataclass
class SampleSet:
    xi: np.ndarray        # (M, D)
    costs: np.ndarray     # (M,) raw trajectory costs
    constraints: np.ndarray  # (M,) in {0, 1}
    log_pdf: np.ndarray   # (M,) under the sampling distribution
    nu_sampling: PolicyDistribution

    @property
    def size(self) -> int:
        return self.xi.shape[0]


@dataclass
class PlanContext:
    """Frozen per-interval planning inputs for one agent."""

    x0: np.ndarray
    goal: np.ndarray
    params: BicycleParams
    weights: LqrWeights
    cost_params: CostParams
    qf: np.ndarray
    static_centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    static_radii: np.ndarray = field(default_factory=lambda: np.zeros(0))
    pred_positions: Optional[np.ndarray] = None   # (P, N+1, 2) all agents x samples
    pred_term_pos: Optional[np.ndarray] = None    # (M_pred, Ja, 2)
    pred_term_vel: Optional[np.ndarray] = None    # (M_pred, Ja, 2)
    state_lo: np.ndarray = field(default_factory=lambda: np.array([-25., -25., -1e9, -0.5, -0.4]))
    state_hi: np.ndarray = field(default_factory=lambda: np.array([25., 25., 1e9, 2.0, 0.4]))
    static_gyro_on: bool = True
    agent_gyro_on: bool = True
    sigma_p: Optional[np.ndarray] = None
    noise_aware: bool = False

    def evaluate(self, Xi: np.ndarray, rng: np.random.Generator):
        """Roll out M policy samples and return (J, C, X) arrays."""
        M = Xi.shape[0]
        x0 = np.asarray(self.x0, dtype=float)
        if self.noise_aware and self.sigma_p is not None and np.any(self.sigma_p > 0):
            x0 = x0 + rng.standard_normal((M, N_X)) * np.sqrt(self.sigma_p)
        X, Uapp = rollout_closed_loop_batch(Xi, x0, self.params, self.weights, rng)
        if self.pred_term_pos is not None and self.pred_term_pos.shape[0]:
            idx = np.arange(M) % self.pred_term_pos.shape[0]
            agent_pos = self.pred_term_pos[idx]
            agent_vel = self.pred_term_vel[idx]
        else:
            agent_pos = agent_vel = None
        J = trajectory_cost_batch(X, Uapp, self.goal, self.cost_params, self.qf,
                                  static_centers=self.static_centers,
                                  static_radii=self.static_radii,
                                  agent_pos=agent_pos, agent_vel=agent_vel,
                                  static_gyro_on=self.static_gyro_on,
                                  agent_gyro_on=self.agent_gyro_on)
        C = constraint_violation_batch(X, self.static_centers, self.static_radii,
                                       self.pred_positions, self.state_lo,
                                       self.state_hi, self.cost_params)
        return J, C, X


# ---------------------------------------------------------------------------
# Rollouts


def rollout_closed_loop_batch(Xi, x0, params: BicycleParams, weights: LqrWeights,
                              rng: np.random.Generator):
    """Batched closed-loop stochastic rollout of stacked-input policy samples.

    Xi: (M, N*2); x0: (5,) or (M, 5). Returns (X (M, N+1, 5), Uapp (M, N, 2)).
    """
    Xi = np.asarray(Xi, dtype=float)
    M = Xi.shape[0]
    N = Xi.shape[1] // N_U
    U = Xi.reshape(M, N, N_U)
    Xnom, Unom = rollout_nominal_batch(np.asarray(x0, dtype=float) if np.ndim(x0) == 1 else x0,
                                       U, params)
    A, _ = linearize(Xnom[:, :-1], Unom, params)
    K = riccati_gains_batch(A, weights, params.dt)

    sig = np.sqrt(params.process_cov)
    noise = rng.standard_normal((N, M, N_X)) * sig
    X = np.empty((M, N + 1, N_X))
    Uapp = np.empty((M, N, N_U))
    x = Xnom[:, 0].copy() if np.ndim(x0) == 1 else np.array(x0, dtype=float)
    X[:, 0] = x
    dt = params.dt
    for t in range(N):
        err = Xnom[:, t] - x
        err[:, 2] = wrap_angle(err[:, 2])
        u = Unom[:, t] + np.einsum("mij,mj->mi", K[:, t], err)
        u = clamp_input(u, params)
        Uapp[:, t] = u
        x = x + (drift(x, u, params) + noise[t]) * dt
        x[:, 3] = np.clip(x[:, 3], params.v_lo, params.v_hi)
        x[:, 4] = np.clip(x[:, 4], -params.delta_max, params.delta_max)
        X[:, t + 1] = x
    return X, Uapp


def rollout_closed_loop(xi, x0, params: BicycleParams, weights: LqrWeights,
                        rng: np.random.Generator) -> Trajectory:
    """Single closed-loop stochastic rollout (batch of one)."""
    X, Uapp = rollout_closed_loop_batch(np.asarray(xi, dtype=float)[None, :],
                                        np.asarray(x0, dtype=float), params, weights, rng)
    return Trajectory(X[0], Uapp[0])


def evaluate_batch(nu_sampling: PolicyDistribution, context: PlanContext,
                   config: PacConfig, rng: np.random.Generator) -> SampleSet:
    """Sample M policies from nu and evaluate cost and constraint per sample."""
    Xi = pd.sample(nu_sampling, rng, size=config.sample_count)
    J, C, _ = context.evaluate(Xi, rng)
    return SampleSet(Xi, J, C, pd.log_pdf(nu_sampling, Xi), nu_sampling)


# ---------------------------------------------------------------------------
# Bound machinery


def robust_estimate(values, weights, alpha) -> float:
    """Truncated estimator (1 / (M alpha)) sum ln(1 + alpha l_m w_m)."""
    values = np.asarray(values, dtype=float)
    return float(np.mean(np.log1p(alpha * values * weights)) / alpha)


def _golden_min(f, lo: float, hi: float, iters: int):
    """Golden-section minimization on [lo, hi]; returns (x*, f(x*))."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = c if fc < fd else d
    return x, min(fc, fd)


def _optimize_alpha(values, weights, dist, phi_scale, config: PacConfig):
    """min over alpha of robust(values, w, a) + a*dist + phi_scale/a on ln-grid."""
    def f(ln_a):
        a = math.exp(ln_a)
        return robust_estimate(values, weights, a) + a * dist + phi_scale / a
    ln_star, val = _golden_min(f, math.log(config.alpha_lo), math.log(config.alpha_hi),
                               config.alpha_iters)
    return math.exp(ln_star), val


def pac_bound(sample_set: SampleSet, nu_candidate: PolicyDistribution,
              nu_sampling: PolicyDistribution, config: PacConfig, which: str):
    """PAC bound J+ = robust estimate + alpha d(nu) + Phi_alpha(delta).

    which: "cost" (losses min(J/b, 1)) or "constraint" (losses C in {0,1}).
    Returns (hat, d_term, phi_term, total, alpha_star).
    """
    if which == "cost":
        losses = np.minimum(sample_set.costs / config.cost_scale, 1.0)
    elif which == "constraint":
        losses = sample_set.constraints
    else:
        raise ValueError(f"unknown bound kind {which!r}")
    if nu_candidate is nu_sampling:
        w = np.ones(sample_set.size)
        d2 = 0.0
    else:
        w = np.exp(np.clip(pd.log_pdf(nu_candidate, sample_set.xi) - sample_set.log_pdf,
                           -700.0, 700.0))
        d2 = pd.renyi2_divergence(nu_candidate, nu_sampling)
    dist = 0.5 * math.exp(d2)
    phi_scale = math.log(1.0 / config.delta) / sample_set.size
    alpha_star, total = _optimize_alpha(losses, w, dist, phi_scale, config)
    hat = robust_estimate(losses, w, alpha_star)
    return hat, alpha_star * dist, phi_scale / alpha_star, total, alpha_star


def _losses(sample_set: SampleSet, config: PacConfig):
    lc = np.minimum(sample_set.costs / config.cost_scale, 1.0)
    return lc, sample_set.constraints


def bound_objective(nu: PolicyDistribution, sample_set: SampleSet, config: PacConfig,
                    alpha_cost: float, alpha_constr: float) -> float:
    """J+ + gamma C+ for a candidate nu at fixed alphas, on frozen samples."""
    lc, lg = _losses(sample_set, config)
    nu0 = sample_set.nu_sampling
    d2 = pd.renyi2_divergence(nu, nu0)
    dist = 0.5 * math.exp(d2)
    w = np.exp(np.clip(pd.log_pdf(nu, sample_set.xi) - sample_set.log_pdf, -700.0, 700.0))
    phi = math.log(1.0 / config.delta) / sample_set.size
    j_plus = robust_estimate(lc, w, alpha_cost) + alpha_cost * dist + phi / alpha_cost
    c_plus = robust_estimate(lg, w, alpha_constr) + alpha_constr * dist + phi / alpha_constr
    return j_plus + config.gamma * c_plus


def bound_gradient(nu: PolicyDistribution, sample_set: SampleSet, config: PacConfig,
                   alpha_cost: float, alpha_constr: float):
    """Analytic score-function gradient of bound_objective w.r.t. (mu, ln sigma2)."""
    lc, lg = _losses(sample_set, config)
    nu0 = sample_set.nu_sampling
    d2 = pd.renyi2_divergence(nu, nu0)
    w = np.exp(np.clip(pd.log_pdf(nu, sample_set.xi) - sample_set.log_pdf, -700.0, 700.0))

    z = (sample_set.xi - nu.mu) / np.sqrt(nu.sigma2)   # (M, D)
    s_mu = z / np.sqrt(nu.sigma2)
    s_ls = 0.5 * (z ** 2 - 1.0)

    def robust_grad(losses, alpha):
        # d/dnu (1/(M a)) sum ln(1 + a l w) = (1/M) sum l w s / (1 + a l w)
        coef = losses * w / (1.0 + alpha * losses * w)  # (M,)
        return coef @ s_mu / len(coef), coef @ s_ls / len(coef)

    g_mu_c, g_ls_c = robust_grad(lc, alpha_cost)
    g_mu_g, g_ls_g = robust_grad(lg, alpha_constr)

    d2_mu, d2_ls = pd.renyi2_divergence_grad(nu, nu0)
    dist_coef = 0.5 * math.exp(d2) * (alpha_cost + config.gamma * alpha_constr)

    g_mu = g_mu_c + config.gamma * g_mu_g + dist_coef * d2_mu
    g_ls = g_ls_c + config.gamma * g_ls_g + dist_coef * d2_ls
    return g_mu, g_ls


def _search_direction(nu: PolicyDistribution, sample_set: SampleSet, config: PacConfig,
                      alpha_cost: float, alpha_constr: float):
    """Baselined score-function descent direction (same expectation as the
    analytic gradient; the per-sample baseline only reduces estimator noise)."""
    lc, lg = _losses(sample_set, config)
    w = np.exp(np.clip(pd.log_pdf(nu, sample_set.xi) - sample_set.log_pdf, -700.0, 700.0))
    z = (sample_set.xi - nu.mu) / np.sqrt(nu.sigma2)
    s_mu = z / np.sqrt(nu.sigma2)
    s_ls = 0.5 * (z ** 2 - 1.0)

    def centered_grad(losses, alpha):
        coef = losses * w / (1.0 + alpha * losses * w)
        coef = coef - coef.mean()
        return coef @ s_mu / len(coef), coef @ s_ls / len(coef)

    g_mu_c, g_ls_c = centered_grad(lc, alpha_cost)
    g_mu_g, g_ls_g = centered_grad(lg, alpha_constr)
    g_mu = g_mu_c + config.gamma * g_mu_g
    g_ls = g_ls_c + config.gamma * g_ls_g
    return g_mu, g_ls


def update_distribution(nu_current: PolicyDistribution, sample_set: SampleSet,
                        config: PacConfig) -> PolicyDistribution:
    """One outer iteration: preconditioned gradient steps on the bound objective.

    Each step is line-searched so the frozen-sample objective never increases
    and the trust region D2(next || current) <= trust_region_d2_max holds.
    """
    lc, lg = _losses(sample_set, config)
    nu0 = sample_set.nu_sampling
    phi = math.log(1.0 / config.delta) / sample_set.size
    ones = np.ones(sample_set.size)

    def estimate(w, alpha_c, alpha_g):
        # trust-region surrogate: the robust estimates at fixed alphas; the
        # divergence/concentration terms are handled by the hard D2 cap.
        # Returns (estimate, standard error) so step acceptance can be judged
        # against the estimator's own Monte Carlo noise.
        a = np.log1p(alpha_c * lc * w) / alpha_c \
            + config.gamma * np.log1p(alpha_g * lg * w) / alpha_g
        return float(a.mean()), float(a.std() / math.sqrt(len(a)))

    nu = nu_current
    for _ in range(config.grad_steps):
        # re-optimize both alphas at the current iterate
        d2 = pd.renyi2_divergence(nu, nu0)
        dist = 0.5 * math.exp(d2)
        w = np.exp(np.clip(pd.log_pdf(nu, sample_set.xi) - sample_set.log_pdf, -700.0, 700.0)) \
            if nu is not nu0 else ones
        alpha_c, _ = _optimize_alpha(lc, w, dist, phi, config)
        alpha_g, _ = _optimize_alpha(lg, w, dist, phi, config)

        obj, se0 = estimate(w, alpha_c, alpha_g)
        g_mu, g_ls = _search_direction(nu, sample_set, config, alpha_c, alpha_g)
        # diagonal-Fisher preconditioning: F_mu = 1/sigma2, F_ln sigma2 = 1/2
        d_mu = nu.sigma2 * g_mu
        d_ls = 2.0 * g_ls

        def candidate(eta):
            mu_new = nu.mu - eta * d_mu
            s2_new = nu.sigma2 * np.exp(-eta * d_ls)
            s2_new = np.clip(s2_new, config.sigma_floor, (2.0 - 1e-9) * nu0.sigma2)
            cand = PolicyDistribution(mu_new, s2_new)
            if pd.renyi2_divergence(cand, nu0) > config.trust_region_d2_max:
                return cand, None
            w_c = np.exp(np.clip(pd.log_pdf(cand, sample_set.xi) - sample_set.log_pdf,
                                 -700.0, 700.0))
            est, _ = estimate(w_c, alpha_c, alpha_g)
            return cand, est

        # A step is acceptable when the surrogate does not worsen beyond the
        # current iterate's standard error: surrogate differences between
        # nearby steps are below estimator noise, so demanding monotone
        # improvement stalls the search at vanishing steps. Take the largest
        # acceptable step inside the trust region.
        eta = config.step_size
        best = None
        for _bt in range(24):
            cand, cand_obj = candidate(eta)
            if cand_obj is not None and cand_obj <= obj + se0:
                best = cand
                break
            eta *= 0.5
        if best is None:
            break
        for _ex in range(12):
            cand, cand_obj = candidate(eta * 2.0)
            if cand_obj is None or cand_obj > obj + se0:
                break
            eta *= 2.0
            best = cand
        nu = best
    return nu


def plan(nu_warm: PolicyDistribution, context: PlanContext, config: PacConfig,
         rng: np.random.Generator):
    """Iterate sample/evaluate/update; return (nu_star, BoundReport)."""
    nu = nu_warm
    for _ in range(config.iteration_count):
        sset = evaluate_batch(nu, context, config, rng)
        try:
            nu = update_distribution(nu, sset, config)
        except ValidityError:
            continue
    sset = evaluate_batch(nu, context, config, rng)
    j_hat, d_term, phi_term, j_plus, a_c = pac_bound(sset, nu, nu, config, "cost")
    c_hat, _, _, c_plus, a_g = pac_bound(sset, nu, nu, config, "constraint")
    report = BoundReport(j_hat=j_hat, d_term=d_term, phi_term=phi_term, j_plus=j_plus,
                         c_hat=c_hat, c_plus=c_plus, alpha_star_cost=a_c,
                         alpha_star_constraint=a_g)
    return nu, report


def initial_distribution(horizon: int, config: PacConfig) -> PolicyDistribution:
    """Fresh policy prior: gentle forward acceleration, zero steering.

    The cost surface is nearly symmetric in +/- acceleration from rest (the
    running term tracks |v|), so a zero mean leaves the optimizer on a ridge
    between driving forward and reversing; a small forward bias breaks the tie
    toward the controllable direction.
    """
    mu = np.zeros((horizon, N_U))
    mu[:, 0] = config.mu_init_accel
    return PolicyDistribution(mu.ravel(), np.full(horizon * N_U, config.sigma_init))


def braking_distribution(v0: float, horizon: int, config: PacConfig,
                         u_max: float = 1.0, dt: float = 0.1) -> PolicyDistribution:
    """Policy prior that brakes to rest, then holds zero input.

    Used to restart a stalled agent: stopping first is safe near obstacles,
    and the wide initial sigma lets the next optimization explore headings
    from low speed instead of committing to the stale travel direction.
    """
    mu = np.zeros((horizon, N_U))
    n_brake = min(horizon, int(np.ceil(abs(v0) / (u_max * dt))))
    mu[:n_brake, 0] = -np.sign(v0) * u_max
    return PolicyDistribution(mu.ravel(), np.full(horizon * N_U, config.sigma_init))


def warm_start(nu_prev: PolicyDistribution, executed_steps: int,
               config: PacConfig, n_u: int = N_U) -> PolicyDistribution:
    """Receding-horizon shift: drop executed inputs, pad the tail with zeros.

    Retained variances are inflated 1.5x (capped at sigma_init); the padded
    tail is reset to sigma_init.
    """
    if executed_steps == 0:
        return nu_prev
    k = executed_steps * n_u
    if k >= nu_prev.dim:
        raise ValueError("executed_steps must be < horizon")
    mu = np.concatenate([nu_prev.mu[k:], np.zeros(k)])
    s2_head = np.minimum(1.5 * nu_prev.sigma2[k:], config.sigma_init)
    s2_head = np.maximum(s2_head, config.sigma_floor)
    s2 = np.concatenate([s2_head, np.full(k, config.sigma_init)])
    return PolicyDistribution(mu, s2)

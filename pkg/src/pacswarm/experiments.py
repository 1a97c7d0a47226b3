"""Monte Carlo harness: trial setup, metrics, sweeps, and artifact output."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from .coordinator import (SimEvent, Team, centralized_step, detect_outcome,
                          distributed_step)
from .costs import CostParams
from .dynamics import N_U, BicycleParams
from .pac_optimizer import PacConfig, braking_distribution, initial_distribution
from .planner_support import (FormationSpec, PlanningError, formation_goals,
                              rrt_plan, wedge_points)
from .policy_dist import PolicyDistribution
from .tvlqr import LqrWeights
from .world import ObstacleField, RngStream, Scenario

# trial-level outcome severity (worst event wins)
_SEVERITY = {"agent_collision": 3, "obstacle_crash": 2, "trapped": 1, "goal_reached": 0}


@dataclass
class TrialRecord:
    trial_id: int
    seed: int
    rows: list = field(default_factory=list)        # (t, agent, state(5), input(2))
    messages: list = field(default_factory=list)    # JSON strings
    bounds: list = field(default_factory=list)      # (t, agent, BoundReport)
    events: list = field(default_factory=list)      # SimEvent
    formation_errors: list = field(default_factory=list)  # (t, error)
    outcomes: list = field(default_factory=list)    # per-agent terminal SimEvent
    outcome: str = "trapped"                        # trial-level classification
    failure: str = ""                               # planner failure note, if any
    wall_time: float = 0.0
    plan_cycles: int = 0
    leader_exit_time: float = np.inf                # leader past the obstacle field


@dataclass
class SummaryStats:
    trial_count: int
    outcome_counts: dict
    collision_count: int
    mean_formation_error: float
    max_formation_error: float
    steady_state_formation_error: float
    mean_c_plus_leader: float
    mean_c_plus_follower: float
    mean_wall_per_cycle: float

    def to_dict(self) -> dict:
        return {k: (v if isinstance(v, (dict, int)) else float(v))
                for k, v in self.__dict__.items()}


def formation_error(states, leader_state, spec: FormationSpec) -> float:
    """Mean follower distance to its wedge point at the leader's current pose."""
    leader_state = np.asarray(leader_state, dtype=float)
    g2, g3 = wedge_points(leader_state[:2], leader_state[2], spec)
    errs = [float(np.hypot(*(np.asarray(s, dtype=float)[:2] - g)))
            for s, g in zip(states, (g2, g3))]
    return float(np.mean(errs))


def _initial_states(scenario: Scenario, spec: FormationSpec,
                    rng: np.random.Generator) -> np.ndarray:
    A = scenario.agent_count
    if scenario.layout == "antipodal":
        angles = 2 * np.pi * np.arange(A) / A
        states = np.zeros((A, 5))
        states[:, 0] = scenario.antipodal_radius * np.cos(angles)
        states[:, 1] = scenario.antipodal_radius * np.sin(angles)
        states[:, 2] = _wrap(angles + np.pi)  # facing the antipodal goal
        return states
    lo = np.asarray(scenario.leader_lo, dtype=float)
    hi = np.asarray(scenario.leader_hi, dtype=float)
    leader = rng.uniform(lo, hi)
    states = [leader]
    g2, g3 = wedge_points(leader[:2], leader[2], spec)
    noise = np.asarray(scenario.follower_noise, dtype=float)
    for g in list((g2, g3))[:A - 1]:
        x = np.concatenate([g, leader[2:]]) + rng.uniform(-noise, noise)
        states.append(x)
    return np.stack(states)


def _wrap(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def _antipodal_goals(scenario: Scenario) -> np.ndarray:
    A = scenario.agent_count
    angles = 2 * np.pi * np.arange(A) / A
    r = scenario.antipodal_radius
    return np.stack([-r * np.cos(angles), -r * np.sin(angles)], axis=1)


def _build_team(scenario: Scenario, fld: ObstacleField) -> Team:
    opt = dict(scenario.optimizer)
    warm_iters = opt.pop("warm_iteration_count", None)
    opt.pop("horizon", None)
    return Team(
        params=BicycleParams.from_dict(scenario.dynamics),
        weights=LqrWeights.from_dict(scenario.lqr),
        cost_params=CostParams.from_dict(scenario.cost),
        pac=PacConfig.from_dict(opt),
        field=fld,
        sigma_p=np.asarray(scenario.sigma_p, dtype=float),
        noise_aware=scenario.noise_aware,
        static_gyro_on=scenario.static_gyro_on,
        agent_gyro_on=scenario.agent_gyro_on,
        m_pred=scenario.m_pred,
        executed_steps=scenario.executed_steps,
        warm_iteration_count=warm_iters,
        goal_tolerance=scenario.goal_tolerance,
        state_lo=np.asarray(scenario.state_lo, dtype=float),
        state_hi=np.asarray(scenario.state_hi, dtype=float))


def run_trial(scenario: Scenario, seed: int, trial_id: int = 0) -> TrialRecord:
    """One lock-stepped multi-agent trial; deterministic in (scenario, seed)."""
    t_start = time.perf_counter()
    record = TrialRecord(trial_id=trial_id, seed=seed)
    rng = RngStream(seed, ("trial",))
    fld = scenario.obstacle_field()
    team = _build_team(scenario, fld)
    spec = FormationSpec(scenario.formation_l, scenario.formation_h)
    A = scenario.agent_count
    dt = team.params.dt
    horizon = int(scenario.optimizer.get("horizon", 20))
    interval_time = team.executed_steps * dt
    max_intervals = max(1, int(round(scenario.max_time / interval_time)))

    states = _initial_states(scenario, spec, rng.derive("init").generator)
    qfs = [team.cost_params.qf] + [team.cost_params.qf_follower] * (A - 1) \
        if scenario.layout == "formation" else [team.cost_params.qf] * A

    leader_path = None
    if scenario.goals is not None:
        fixed_goals = np.asarray(scenario.goals, dtype=float)
    elif scenario.layout == "antipodal":
        fixed_goals = _antipodal_goals(scenario)
    else:
        fixed_goals = None
        try:
            leader_path = rrt_plan(states[0, :2], scenario.leader_goal, fld,
                                   rng.derive("rrt").generator)
        except PlanningError as exc:
            record.failure = f"leader path planning failed: {exc}"
            record.outcome = "trapped"
            record.wall_time = time.perf_counter() - t_start
            return record
    final_goals = fixed_goals if fixed_goals is not None \
        else np.vstack([np.asarray(scenario.leader_goal, dtype=float)[None, :],
                        np.stack(wedge_points(np.asarray(scenario.leader_goal, dtype=float),
                                              leader_path.tangent_at(leader_path.length),
                                              spec))[:A - 1]])

    if scenario.mode == "centralized":
        nu = initial_distribution(A * horizon, team.pac)  # stacked team policy
    else:
        nus = [initial_distribution(horizon, team.pac) for _ in range(A)]

    reached = np.zeros(A, dtype=bool)
    frozen = set()
    field_exit_x = scenario.field_hi[0] if fld.obstacles else -np.inf
    t_now = 0.0
    # stall restart: warm-started policies can settle into a tight loop in an
    # obstacle pocket; a fresh policy with the full iteration budget escapes it
    stall_window = 6
    stall_dist = 1.5
    runaway_window = 8
    runaway_rise = 2.5
    pos_hist = [states[:, :2].copy()]
    dist_hist = [[] for _ in range(A)]  # per-agent, reset when its goal moves
    prev_goals = None
    fresh = set()

    for k in range(max_intervals):
        # per-interval goals
        if fixed_goals is not None:
            goals = fixed_goals
        elif 0 in frozen:
            # leader parked: follower goals are the wedge at its actual pose
            goals = final_goals
        else:
            s = leader_path.arclength_of(states[0, :2])
            leader_goal = leader_path.point_at(s + scenario.lookahead)
            mean_term = None
            if scenario.formation_method == "mean_final_state":
                from .dynamics import rollout_nominal
                mu = (nu.mu[:horizon * N_U] if scenario.mode == "centralized"
                      else nus[0].mu)
                traj = rollout_nominal(states[0], mu.reshape(horizon, N_U), team.params)
                mean_term = traj.states[-1]
            follower_goals = formation_goals(
                scenario.formation_method, states[0], leader_path, mean_term,
                fld, spec, follower_states=states[1:A],
                rng=rng.derive("fgoal", k).generator, lookahead=scenario.lookahead)
            goals = np.vstack([leader_goal[None, :], np.stack(follower_goals)[:A - 1]])

        try:
            if scenario.mode == "centralized":
                states_new, xs, us, nu, report, events = centralized_step(
                    team, states, nu, goals, qfs, k, rng, frozen=frozen,
                    fresh=bool(fresh))
                reports = [report] * A
            else:
                states_new, xs, us, nus, reports, msgs, events = distributed_step(
                    team, states, nus, goals, qfs, k, rng, frozen=frozen,
                    fresh=fresh)
                record.messages.extend(m.to_json() for m in msgs)
        except (PlanningError, FloatingPointError) as exc:
            record.failure = f"planner failure at interval {k}: {exc}"
            break

        record.plan_cycles += 1
        for i in range(A):
            for t in range(team.executed_steps):
                record.rows.append((t_now + t * dt, i, xs[i, t], us[i, t]))
            if reports[i] is not None:
                record.bounds.append((t_now, i, reports[i]))
        record.events.extend(events)

        states = states_new
        t_now += interval_time
        if scenario.layout == "formation" and A >= 3:
            record.formation_errors.append(
                (t_now, formation_error(states[1:3], states[0], spec)))
        if states[0, 0] > field_exit_x and not np.isfinite(record.leader_exit_time):
            record.leader_exit_time = t_now

        for e in events:
            if e.kind == "goal_reached":
                reached[e.agent_id] = True
        # final-goal attainment (interval goals are moving lookahead targets);
        # park agents that are done so the rest plan around a stationary teammate
        for i in range(A):
            if i not in frozen and \
                    np.hypot(*(states[i, :2] - final_goals[i])) <= team.goal_tolerance:
                reached[i] = True
                frozen.add(i)
                states[i, 3] = 0.0
                states[i, 4] = 0.0
                if i == 0 and fixed_goals is None and A >= 2:
                    # re-anchor the follower wedge on the parked leader pose;
                    # goals derived from the nominal leader goal can sit inside
                    # the planning separation radius of where it actually stopped
                    g2, g3 = wedge_points(states[0, :2], states[0, 2], spec)
                    if A >= 3:
                        # assign wedge sides by proximity so neither follower
                        # has to cross past the other to park
                        straight = (np.hypot(*(states[1, :2] - g2))
                                    + np.hypot(*(states[2, :2] - g3)))
                        crossed = (np.hypot(*(states[1, :2] - g3))
                                   + np.hypot(*(states[2, :2] - g2)))
                        if crossed < straight:
                            g2, g3 = g3, g2
                    final_goals = np.vstack([final_goals[0][None, :],
                                             np.stack((g2, g3))[:A - 1]])
        if any(e.kind in ("agent_collision", "obstacle_crash") for e in record.events):
            break
        if reached.all():
            break

        pos_hist.append(states[:, :2].copy())
        d_goal = np.hypot(*(states[:, :2] - goals).T)
        for i in range(A):
            if prev_goals is not None and np.hypot(*(goals[i] - prev_goals[i])) > 0.5:
                dist_hist[i] = []  # moving target: distance changes say nothing
            dist_hist[i].append(d_goal[i])
        prev_goals = np.array(goals, dtype=float)
        fresh = set()
        # pocket stalls: restart around obstacles, and in open space once the
        # leader has parked and follower goals are fixed (an agent idling in
        # place in front of a fixed parking spot is stuck, not negotiating).
        # Deliberately NOT applied to point-goal layouts: there, lack of
        # progress IS the deadlock outcome under study and must not be
        # auto-rescued.
        if (fld.obstacles or 0 in frozen) and len(pos_hist) > stall_window:
            net = np.hypot(*(pos_hist[-1] - pos_hist[-1 - stall_window]).T)
            for i in range(A):
                if i not in frozen and net[i] < stall_dist:
                    fresh.add(i)
                    pos_hist = pos_hist[-1:]  # restart the window
        # runaways: an agent moving steadily away from a STATIC goal is not
        # negotiating, its warm-started policy has settled on fleeing
        for i in range(A):
            hist = dist_hist[i][-runaway_window:]
            if i not in frozen and len(hist) >= 3 \
                    and hist[-1] - min(hist) > runaway_rise:
                fresh.add(i)
                dist_hist[i] = dist_hist[i][-1:]
        if fresh:
            if scenario.mode == "centralized":
                D = horizon * N_U
                mus, s2s = nu.mu.copy(), nu.sigma2.copy()
                for i in fresh:
                    nu_i = braking_distribution(states[i, 3], horizon, team.pac, dt=dt)
                    mus[i * D:(i + 1) * D] = nu_i.mu
                    s2s[i * D:(i + 1) * D] = nu_i.sigma2
                nu = PolicyDistribution(mus, s2s)
            else:
                for i in fresh:
                    nus[i] = braking_distribution(states[i, 3], horizon, team.pac, dt=dt)

    record.outcomes = detect_outcome(record.events, A, reached, scenario.max_time)
    record.outcome = max((e.kind for e in record.outcomes), key=_SEVERITY.get)
    record.wall_time = time.perf_counter() - t_start
    return record


def summarize(records, leader_only_cplus: bool = False) -> SummaryStats:
    counts = {k: 0 for k in _SEVERITY}
    for r in records:
        counts[r.outcome] += 1
    collisions = sum(1 for r in records if r.outcome == "agent_collision")
    all_err = [e for r in records for _, e in r.formation_errors]
    steady = []
    for r in records:
        steady.extend(e for t, e in r.formation_errors if t >= r.leader_exit_time)
    cl = [b.c_plus for r in records for _, i, b in r.bounds if i == 0]
    cf = [b.c_plus for r in records for _, i, b in r.bounds if i != 0]
    cycles = sum(r.plan_cycles for r in records)
    wall = sum(r.wall_time for r in records)
    return SummaryStats(
        trial_count=len(records),
        outcome_counts=counts,
        collision_count=collisions,
        mean_formation_error=float(np.mean(all_err)) if all_err else 0.0,
        max_formation_error=float(np.max(all_err)) if all_err else 0.0,
        steady_state_formation_error=float(np.mean(steady)) if steady else 0.0,
        mean_c_plus_leader=float(np.mean(cl)) if cl else 0.0,
        mean_c_plus_follower=float(np.mean(cf)) if cf else 0.0,
        mean_wall_per_cycle=wall / cycles if cycles else 0.0)


def run_monte_carlo(scenario: Scenario, trial_count: int, base_seed: int,
                    out_dir=None):
    """Independent seeded trials; returns (SummaryStats, records)."""
    records = [run_trial(scenario, base_seed + 1000 * t, trial_id=t)
               for t in range(trial_count)]
    stats = summarize(records)
    if out_dir is not None:
        write_outputs(FsPath(out_dir), scenario, stats, records)
    return stats, records


def sweep_noise(scenario: Scenario, variances, trial_count: int, base_seed: int,
                out_dir=None):
    """Collision percentage per (gyro, noise_mode, variance) cell.

    Returns {(gyro_on, noise_aware): {variance: percent}}; also the first
    variance with any collision per cell (inf when collision-free).
    """
    from dataclasses import replace as dc_replace
    results = {}
    for gyro_on in (True, False):
        for aware in (True, False):
            per_var = {}
            for v in variances:
                scn = dc_replace(scenario, agent_gyro_on=gyro_on, noise_aware=aware,
                                 sigma_p=[v, v, 0.0, 0.0, 0.0])
                stats, _ = run_monte_carlo(scn, trial_count, base_seed)
                per_var[float(v)] = 100.0 * stats.collision_count / trial_count
            results[(gyro_on, aware)] = per_var
    if out_dir is not None:
        out = FsPath(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dump = [{"gyro_on": g, "noise_aware": a, "collision_percent": pv}
                for (g, a), pv in results.items()]
        (out / "sweep.json").write_text(json.dumps(dump, indent=2))
    return results


def first_collision_variance(per_var: dict) -> float:
    hits = [v for v, pct in sorted(per_var.items()) if pct > 0]
    return hits[0] if hits else np.inf


# ---------------------------------------------------------------------------
# Artifact output


def write_outputs(out: FsPath, scenario: Scenario, stats: SummaryStats, records):
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(stats.to_dict(), indent=2))
    (out / "scenario.json").write_text(scenario.to_json())

    with open(out / "formation_error.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["trial_id", "t", "formation_error"])
        for r in records:
            for t, e in r.formation_errors:
                w.writerow([r.trial_id, f"{t:.3f}", f"{e:.6f}"])

    with open(out / "bounds.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["trial_id", "t", "agent_id", "j_hat", "j_plus", "c_hat",
                    "c_plus", "alpha_cost", "alpha_constr"])
        for r in records:
            for t, i, b in r.bounds:
                w.writerow([r.trial_id, f"{t:.3f}", i, f"{b.j_hat:.6f}",
                            f"{b.j_plus:.6f}", f"{b.c_hat:.6f}", f"{b.c_plus:.6f}",
                            f"{b.alpha_star_cost:.6g}", f"{b.alpha_star_constraint:.6g}"])

    for r in records:
        tdir = out / "trials" / str(r.trial_id)
        tdir.mkdir(parents=True, exist_ok=True)
        with open(tdir / "states.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "agent_id", "px", "py", "theta", "v", "delta",
                        "u_accel", "u_steer"])
            for t, i, x, u in r.rows:
                w.writerow([f"{t:.3f}", i] + [f"{val:.6f}" for val in x]
                           + [f"{val:.6f}" for val in u])
        with open(tdir / "messages.jsonl", "w") as f:
            for m in r.messages:
                f.write(m + "\n")
        (tdir / "events.json").write_text(json.dumps({
            "events": [e.to_dict() for e in r.events],
            "outcomes": [e.to_dict() for e in r.outcomes],
            "trial_outcome": r.outcome,
            "failure": r.failure,
            "seed": r.seed,
        }, indent=2))

"""Distributed PAC-NMPC multi-robot formation control toolkit."""

from .world import (Circle, ObstacleField, PlacementError, RngStream, Scenario,
                    dist_to_circle, generate_obstacle_field)
from .dynamics import (BicycleParams, Trajectory, drift, linearize,
                       rollout_nominal, step_deterministic, step_stochastic)
from .tvlqr import GainSchedule, LqrWeights, NumericalError, apply_policy, tvlqr_gains
from .policy_dist import (PolicyDistribution, ValidityError, importance_weight,
                          log_pdf, renyi2_divergence, sample)
from .costs import (CostParams, GoalSpec, ObstacleEntry, constraint_violation,
                    desired_velocity, give_way, gyro_matrix_term, k1, k2,
                    running_cost, smooth_sign, terminal_cost, trajectory_cost)
from .pac_optimizer import (BoundReport, PacConfig, PlanContext, evaluate_batch,
                            initial_distribution, pac_bound, plan, robust_estimate,
                            rollout_closed_loop, update_distribution, warm_start)
from .planner_support import (FormationSpec, Path, PlanningError, RrtConfig,
                              formation_goals, project_goal_from_obstacles,
                              rrt_plan, wedge_points)
from .coordinator import (AgentMessage, PredictionSet, SimEvent, Team,
                          broadcast_states, centralized_step, detect_outcome,
                          distributed_step, sample_other_trajectories)
from .experiments import (SummaryStats, TrialRecord, formation_error,
                          run_monte_carlo, run_trial, summarize, sweep_noise)

__version__ = "0.1.0"

"""Adaptive primal-dual methods for constrained MDPs.

Multiplier-dependent learning-rate schedules, PID dual control, desk-scale
constrained environments, an analytic quadratic testbed, and numerical
certificates for the method's convergence and feasibility bounds.
"""

from .cmdp import (
    Cmdp,
    SamplingConfig,
    Trajectory,
    collect_batch,
    default_horizon,
    derived_seed,
    discounted_value,
    estimate_objectives,
    sample_trajectory,
)
from .duals import PidGains, PidState, dual_ascent_step, pid_dual_step, project_nonneg
from .envs import (
    GridworldSpec,
    N_ACTIONS,
    PointEnvConfig,
    circle_reward_cost,
    default_hazard_gridworld,
    exact_policy_eval,
    gridworld_kernel,
    make_gridworld,
    make_point_env,
    policy_state_values,
    run_reward_cost,
)
from .harness import (
    ConfigError,
    CurveStats,
    ExperimentConfig,
    ExperimentResult,
    VerificationError,
    aggregate_seeds,
    final_window_stats,
    load_config,
    parse_config,
    read_record_csv,
    record_to_csv,
    run_experiment,
    sweep,
    verify_dir,
)
from .lagrangian import (
    AdvantageBatch,
    ConstraintSpec,
    Multiplier,
    PpolConfig,
    advantage_batch,
    constraint_value,
    gae_advantages,
    lagrangian_value,
    ppol_surrogate,
    ppol_surrogate_grad,
    reinforce_grad,
)
from .policy import (
    LinearGaussian,
    PolicyParams,
    TabularSoftmax,
    init_params,
    policy_act,
    policy_grad_log_prob,
    policy_log_prob,
    softmax_table,
)
from .quadprog import (
    KktSolution,
    QuadProgram,
    dual_values_batch,
    quad_default,
    quad_dual_value,
    quad_kkt_solve,
    quad_make,
    quad_primal_min,
)
from .schedules import (
    LrSchedule,
    SmoothnessConstants,
    exact_lr,
    lipschitz_of_lambda,
    practical_lr,
)
from .solver import (
    BoundCertificate,
    FeasibilityReport,
    RunRecord,
    SolverConfig,
    apd_run,
    dual_asymptotic_term,
    feasibility_check,
    papd_run,
    verify_bounds,
)

__version__ = "0.1.0"

"""Planning and learning toolkit for finite-horizon restless multi-armed
multi-action bandits: occupancy-measure LP planning, an index policy that
needs no indexability condition, a generative-model UCB learner, and a
seeded Monte-Carlo benchmark harness with exact oracles."""

__version__ = "0.1.0"

from .model import (
    ArmModel,
    BanditInstance,
    InvariantViolation,
    RandomizedPolicy,
    RunRecord,
    sample_reward,
    sample_transition,
    validate_instance,
)
from .lp import (
    LpProgram,
    OccupancySolution,
    build_relaxed_lp,
    recover_policy,
    relaxed_upper_bound,
    solve_lp,
    solve_relaxed,
)
from .policy import (
    ActivationDecision,
    GreedyExecutor,
    OmrExecutor,
    RandomExecutor,
    compute_indices,
    make_omr_policy,
    select_actions,
)
from .learner import (
    ConfigError,
    EmpiricalModel,
    build_extended_lp,
    generative_sample,
    recover_learned_policy,
    rmab_ucb,
)
from .simulate import (
    ClassCounts,
    GapReport,
    SizeGuardError,
    dp_oracle,
    evaluate_baselines,
    run_policy,
    scaling_experiment,
)
from .scenarios import (
    build_birth_death,
    build_deadline,
    build_random_multi_action,
    build_video_streaming,
)

"""Abstraction-based environment shaping for finite MDPs."""

from .abstraction import (
    Abstraction,
    IrrelevanceReport,
    abstract_transition_mass,
    analyze_abstraction,
    lemma1_conversion,
    lift_policy,
    model_irrelevance_coefficients,
    qstar_irrelevance_error,
    vstar_irrelevance_error,
)
from .mdp import (
    EquivalenceGap,
    FiniteMdp,
    Policy,
    ValueTable,
    equivalence_gap,
    greedy_policy,
    optimality_margin,
    policy_evaluation,
    policy_iteration,
    policy_l1_distance,
    suboptimality_gap,
    validate_mdp,
    value_iteration,
)
from .shaping import (
    ShapingConfig,
    ShapingReport,
    compress,
    lift_dynamics_only,
    lift_full,
    lift_reward_only,
    shape_environment,
    shaping_distance,
    teach_rewards,
)

__version__ = "0.1.0"

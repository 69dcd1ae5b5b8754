"""Reward-free exploration in layered low-rank MDPs.

Library + CLI implementing VoX and SpanRL together with their
subroutines (representation learning, optimal-design construction,
robust spanners, policy-search-by-dynamic-programming) and exact
evaluation utilities for desk-scale synthetic environments.
"""

from voxlab.core import (
    BudgetError,
    Discriminator,
    FeatureClass,
    LayerRangeError,
    LayeredLowRankMDP,
    Policy,
    PolicyDistribution,
    VoxlabError,
    as_distribution,
    compose_policies,
    mixture_sample,
    validate_mdp,
)
from voxlab.simenv import (
    EnvSpec,
    EpisodeCounter,
    Trajectory,
    argmax_policy,
    exact_feature_expectation,
    exact_occupancy,
    exact_occupancy_sa,
    exact_policy_value,
    exact_q_tables,
    exact_second_moment,
    generate_low_rank_mdp,
    make_feature_class,
    max_occupancies,
    max_value,
    mixture_occupancy,
    reachability_eta,
    sample_trajectories,
    sample_trajectory,
)
from voxlab.estimators import est_mat, est_vec
from voxlab.psdp import (
    RewardSpec,
    ValueClass,
    ball_constrained_least_squares,
    fit_value_class,
    psdp,
)
from voxlab.optdesign import (
    DesignOracles,
    DesignState,
    design_certificate,
    design_objective,
    fw_iteration_bound,
    fw_optdesign,
)
from voxlab.spanner import (
    SpannerState,
    robust_spanner,
    spanner_direction,
    spanner_rounds_bound,
    verify_spanner,
)
from voxlab.replearn import (
    RepLearnConfig,
    RepLearnDataset,
    adversarial_gap,
    discriminator_search,
    exact_transfer_error,
    feature_selection,
    rep_learn,
)
from voxlab.evalcover import (
    check_design_on_policies,
    check_policy_cover,
    coverability_ratio,
    pdl_check,
    reachability_diagnostics,
)
from voxlab.drivers import (
    CoverSet,
    RunResult,
    SpanrlSchedule,
    VoxSchedule,
    mix_distributions,
    optimize_reward,
    run_spanrl,
    run_vox,
)

__version__ = "0.1.0"

__all__ = [
    "BudgetError",
    "CoverSet",
    "DesignOracles",
    "DesignState",
    "Discriminator",
    "EnvSpec",
    "EpisodeCounter",
    "FeatureClass",
    "LayerRangeError",
    "LayeredLowRankMDP",
    "Policy",
    "PolicyDistribution",
    "RepLearnConfig",
    "RepLearnDataset",
    "RewardSpec",
    "RunResult",
    "SpannerState",
    "SpanrlSchedule",
    "Trajectory",
    "ValueClass",
    "VoxSchedule",
    "VoxlabError",
    "adversarial_gap",
    "argmax_policy",
    "as_distribution",
    "ball_constrained_least_squares",
    "check_design_on_policies",
    "check_policy_cover",
    "compose_policies",
    "coverability_ratio",
    "design_certificate",
    "design_objective",
    "discriminator_search",
    "est_mat",
    "est_vec",
    "exact_feature_expectation",
    "exact_occupancy",
    "exact_occupancy_sa",
    "exact_policy_value",
    "exact_q_tables",
    "exact_second_moment",
    "exact_transfer_error",
    "feature_selection",
    "fit_value_class",
    "fw_iteration_bound",
    "fw_optdesign",
    "generate_low_rank_mdp",
    "make_feature_class",
    "max_occupancies",
    "max_value",
    "mix_distributions",
    "mixture_occupancy",
    "mixture_sample",
    "optimize_reward",
    "pdl_check",
    "psdp",
    "reachability_diagnostics",
    "reachability_eta",
    "rep_learn",
    "robust_spanner",
    "run_spanrl",
    "run_vox",
    "sample_trajectories",
    "sample_trajectory",
    "spanner_direction",
    "spanner_rounds_bound",
    "validate_mdp",
    "verify_spanner",
    "__version__",
]

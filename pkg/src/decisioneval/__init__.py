"""Evaluation of human, AI and human-with-AI decision systems from randomized trials.

Point estimation of identified risk differences, sharp bounds for the
AI-alone system, preference regions over loss ratios, monotone policy
learning, and a simulation oracle.
"""

__version__ = "0.1.0"

from .core import (
    AgreementTable,
    ConfusionMatrix,
    Dataset,
    DatasetSchema,
    LossSpec,
    Subgroup,
    agreement_difference,
    agreement_table,
    classification_risk,
    from_arrays,
    validate_dataset,
)
from .nuisance import NuisanceConfig, NuisanceFit, fit_nuisance, predict
from .point import (
    RiskDiffEstimate,
    estimate_generic_loss_difference,
    estimate_metric_difference,
    estimate_risk_difference,
    subgroup_analysis,
)
from .bounds import (
    BoundEstimate,
    IntervalBound,
    Observables,
    alt_metric_bounds,
    estimate_ai_vs_human_bounds,
    generic_rule_risk_bounds,
    per_system_risk_bounds,
    theta_bounds,
    xi_bounds,
)
from .preference import PreferenceRegion, invert_preference
from .policy import (
    MonotonePolicy,
    ScoreLattice,
    build_lattice,
    evaluate_policy_value,
    learn_follow_policy,
    learn_provision_policy,
)
from .oracle import (
    OraclePopulation,
    SimConfig,
    make_population,
    oracle_sharp_bounds,
    population_dataset,
    sample_dataset,
)

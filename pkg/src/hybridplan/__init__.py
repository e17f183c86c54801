"""Hybrid-belief POMDP planning: Gaussian conditional beliefs coupled with
discrete data-association hypotheses, Monte Carlo tree planners over the
joint, and brute-force verification oracles for the estimator claims."""

from .belief import (
    GaussianConditionalBelief,
    History,
    HybridBelief,
    SingularInnovationError,
    WorldModel,
    a_optimality,
    marginal_likelihood,
    mixture_moments,
    predict,
    state_reward_expectation,
    update,
)
from .association import (
    AssociationPath,
    AssociationVector,
    HypothesisInconsistencyError,
    ObservationArray,
    StatePoint,
    association_likelihood,
    da_weight_update,
    feasible_associations,
    observation_likelihood,
    zeta,
)
from .sampling import (
    ImportanceWeightedPath,
    ProposalConfig,
    frequency_weights,
    lambda_update,
    propose_child,
    self_normalize,
    sir_resample,
)

__version__ = "0.1.0"

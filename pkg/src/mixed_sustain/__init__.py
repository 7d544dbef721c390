"""Subtype and stage inference for mixed-kind biomarker event sequences.

One likelihood covers three biomarker models at once: binary events carried
as externally estimated probability pairs, ordinal scales carried as
per-level probability vectors, and continuous markers carried as z-scores
against a piecewise-linear trajectory. On top of it sit greedy ascent and
MCMC over monotonicity-constrained event orderings, subtype mixtures fit by
recursive splitting, synthetic cohorts, and recovery metrics.
"""

from .errors import DegenerateDataError, NonConvergenceWarning, ValidationError
from .model_core import (
    BiomarkerModelKind,
    BiomarkerSpec,
    CohortData,
    EventTable,
    McmcSamples,
    MixedEventSequence,
    SubtypeModel,
    build_cohort,
    build_event_table,
    random_valid_sequence,
    validate_sequence,
    validate_subtype_model,
)
from .likelihood import (
    StageLikelihoodMatrix,
    binary_event_likelihood,
    mixture_log_likelihood,
    ordinal_event_likelihood,
    sequence_log_likelihood,
    stage_likelihood_matrix,
    stage_prior,
    zscore_event_likelihood,
    zscore_trajectory_value,
)
from .mixture import TwoComponentFit, event_probability_pairs, fit_two_component
from .inference import (
    FitConfig,
    SubjectPosteriors,
    fit_sustain,
    greedy_ascent,
    mcmc_sequences,
    subject_posteriors,
    worker_count,
)
from .simulation import (
    CohortTruth,
    SimulationConfig,
    generate_ground_truth,
    simulate_cohort,
)
from .evaluation import (
    CrossValidationResult,
    auc,
    cross_validate_subtypes,
    kendall_tau,
    match_subtypes,
    pearson,
    positional_variance_matrix,
)

__version__ = "0.1.0"

__all__ = [
    "BiomarkerModelKind",
    "BiomarkerSpec",
    "CohortData",
    "CohortTruth",
    "CrossValidationResult",
    "DegenerateDataError",
    "EventTable",
    "FitConfig",
    "McmcSamples",
    "MixedEventSequence",
    "NonConvergenceWarning",
    "SimulationConfig",
    "StageLikelihoodMatrix",
    "SubjectPosteriors",
    "SubtypeModel",
    "TwoComponentFit",
    "ValidationError",
    "auc",
    "binary_event_likelihood",
    "build_cohort",
    "build_event_table",
    "cross_validate_subtypes",
    "event_probability_pairs",
    "fit_sustain",
    "fit_two_component",
    "generate_ground_truth",
    "greedy_ascent",
    "kendall_tau",
    "match_subtypes",
    "mcmc_sequences",
    "mixture_log_likelihood",
    "ordinal_event_likelihood",
    "pearson",
    "positional_variance_matrix",
    "random_valid_sequence",
    "sequence_log_likelihood",
    "simulate_cohort",
    "stage_likelihood_matrix",
    "stage_prior",
    "subject_posteriors",
    "validate_sequence",
    "validate_subtype_model",
    "worker_count",
    "zscore_event_likelihood",
    "zscore_trajectory_value",
    "__version__",
]

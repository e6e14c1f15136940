"""Sparse density estimation by l1-penalized empirical L2 loss."""

__version__ = "0.1.0"

from .dictionary import (
    Dictionary,
    EmpiricalMoments,
    SampleSet,
    gaussian_dictionary,
    haar_dictionary,
    haar_lmax,
)
from .objective import (
    WeightSpec,
    empirical_loss,
    l2_error_in_span,
    make_weights,
    penalized_objective,
    rate_r,
)
from .optimizer import SolverSettings, SpadesFit, kkt_check, solve
from .theory import check_conditions_mixture, coherence_report, corollary2_bound, oracle_bound
from .tuning import TuningPath, CvSelection, bbm_find, cv_select, gbm_path, n_hat

__all__ = [
    "Dictionary", "EmpiricalMoments", "SampleSet", "gaussian_dictionary", "haar_dictionary",
    "haar_lmax", "WeightSpec", "empirical_loss", "l2_error_in_span", "make_weights",
    "penalized_objective", "rate_r", "SolverSettings", "SpadesFit", "kkt_check", "solve",
    "check_conditions_mixture", "coherence_report", "corollary2_bound", "oracle_bound",
    "TuningPath", "CvSelection", "bbm_find", "cv_select", "gbm_path", "n_hat",
]

"""Maximal correlation risk measures for multivariate risks."""

__version__ = "0.1.0"

from .gaussian import (
    brenier_map_gaussian,
    comonotone_cross_cov,
    is_gaussian_comonotonic,
    max_corr_gaussian,
    sqrt_psd,
)
from .oracle import max_corr_1d_quantile, max_corr_assignment, structure_neutrality_probe
from .risk import (
    Cone,
    MaxCorrMeasure,
    ScenarioFamily,
    check_comonotone_additivity,
    check_cone_monotonicity,
    check_positive_homogeneity,
    check_subadditivity,
    check_translation_invariance,
    convex_measure,
    expected_shortfall_mv,
    max_corr_bernoulli,
)
from .transport import (
    SolveConfig,
    SolveReport,
    cell_stats,
    generalized_quantile,
    max_corr_semidiscrete,
    objective,
    potential_eval,
    tatonnement,
)
from .types import (
    BernoulliVector,
    CellStats,
    ConvergenceError,
    DualWeights,
    Empirical,
    EmpiricalDistribution,
    Gaussian,
    GaussianRisk,
    MaxCorrError,
    NumericalError,
    UniformCube,
    ValidationError,
    from_samples,
    sample_baseline,
    validate_empirical,
)

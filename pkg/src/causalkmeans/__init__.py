"""Causal k-means clustering: discover treatment-effect subgroups by
clustering estimated per-arm conditional mean vectors.

Two codebook fitters are provided: a plug-in fitter (k-means directly on the
estimated mean vectors) and a cross-fitted doubly robust fitter whose risk
estimate has only second-order sensitivity to nuisance estimation error.
"""

from .data import (
    CONTRASTS,
    LEVELS,
    CounterfactualMatrix,
    Dataset,
    FoldAssignment,
    ObservedUnit,
    assign_folds,
    load_dataset,
    reparametrize,
)
from .diagnostics import (
    ClusterProfile,
    ElbowTable,
    boundary_distances,
    boundary_mass,
    cluster_profiles,
    codebook_error,
    elbow_scan,
    pairwise_cates,
)
from .eif import (
    OptimizeOptions,
    RiskGradient,
    RiskHessian,
    SemiObjective,
    minimize_semiparametric,
    risk_estimate,
    risk_gradient,
    risk_hessian,
    unit_risk_score,
    unit_risk_scores,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateFitError,
    FitError,
    InitError,
    OptimizationError,
)
from .kmeans import (
    Codebook,
    FitResult,
    brute_force_codebook,
    empirical_risk,
    kmeanspp_init,
    lloyd,
    plug_in_estimate,
    project,
    voronoi_labels,
)
from .nuisance import (
    CrossFitScores,
    FeatureSpec,
    OutcomeModel,
    PropensityModel,
    clip_propensity,
    cross_fit,
    fit_outcome_regression,
    fit_propensity,
    influence_scores,
)
from .simulation import (
    ESTIMATORS,
    PLUG_IN,
    SEMIPARAMETRIC,
    ReplicationResult,
    SimConfig,
    SimulatedSample,
    StudyResult,
    evaluate_population_risk,
    generate_sample,
    hexagon_centers,
    loglog_slope,
    oracle_population_risk,
    run_replication,
    run_study,
)

__version__ = "0.1.0"

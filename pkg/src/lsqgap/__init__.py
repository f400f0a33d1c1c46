"""Constrained least squares, ridge, VAW and Forster-Warmuth predictors on
bounded random-design regression, with exact-moment risk evaluation."""
from .diagnostics import (
    ConstructionStats,
    DiagnosticsReport,
    Estimator,
    ExcessRiskEstimate,
    bound_overlay,
    construction_stats,
    diagnose,
    effective_dimension,
    excess_risk_mc,
    moment_equivalence_constants,
    multiplier_term,
    predictor_risk,
    ridge_multiplier_bound_check,
)
from .distributions import (
    CouponCollector,
    Dataset,
    FiniteDiscrete,
    GramStats,
    PopulationMoments,
    SparseDenseMixture,
    WellSpecifiedGaussian,
    coupon_k,
    exact_risk,
    optimal_weights,
    population_moments,
    sample,
)
from .errors import (
    ConfigError,
    DegenerateDowndate,
    InsufficientData,
    InvalidSpec,
    LsqGapError,
    NonPositiveExcess,
    NonZeroResponses,
    SingularSystem,
    WeakRegularization,
)
from .estimators import (
    ForsterWarmuthPredictor,
    LinearPredictor,
    VAWPredictor,
    VawBatchPredictor,
    adversarial_erm_select,
    fit_constrained_ls,
    fit_min_norm,
    fit_ridge,
    fw_predict,
    lambda_star,
    ridge_loo_residual,
    vaw_batch,
    vaw_predict,
    vaw_regret,
)
from .harness import (
    ExperimentConfig,
    ResultRow,
    emit,
    fit_scaling_exponent,
    load_config,
    run_experiment,
    verify_identities,
)
from .kernels import BACKEND
from .linalg import (
    SpdSolveContext,
    leverage_scores,
    min_norm_solve,
    pointwise_leverage,
    sherman_morrison_downdate,
    spd_solve,
)

__version__ = "0.1.0"

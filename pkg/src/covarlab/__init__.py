"""Simulation and estimation of realised covariation for bivariate moving-average processes.

Modules
-------
kernel       power-exponential kernels, scaling factor, variogram, regular-variation fits
paths        correlation and volatility paths on the fine grid
simulator    coarse increments of moving-average and BSS processes
estimators   realised covariation, scaled variant, realised variance, limit paths
oracles      Wick formula and analytic increment covariances
experiments  convergence studies, assumption audits, reports
cli          ``covarlab`` command line
"""

from ._accel import backend
from .errors import (
    ConfigurationError,
    ContractError,
    CovarlabError,
    DomainError,
    HypothesisViolation,
    NumericalFailure,
    PreconditionError,
    QuadratureError,
    UndefinedLimitError,
)
from .estimators import (
    PartialSumPath,
    TargetPath,
    integrated_target,
    realised_covariation,
    realised_variance,
    scaled_realised_covariation,
    sup_error,
)
from .experiments import (
    AssumptionAudit,
    ConvergenceReport,
    StudySpec,
    audit_assumptions,
    emit_report,
    run_study,
)
from .kernel import (
    ExpKernel,
    GammaKernel,
    KernelPair,
    RVFit,
    eval_kernel,
    increment_kernel,
    parse_kernel,
    rv_index_fit,
    scaling_factor,
    squared_increment_integral,
    variogram,
)
from .oracles import StepFunction, increment_covariance, tau_n, wick_fourth_moment
from .paths import (
    ConstantCorrelation,
    ConstantVolatility,
    ExpOUVolatility,
    FineGrid,
    JacobiCorrelation,
    PathBundle,
    SinusoidCorrelation,
)
from .simulator import (
    IncrementSeries,
    SimulationConfig,
    exact_gaussian_increments,
    simulate_bss_increments,
    simulate_increments,
    simulate_ma_increments,
)

__version__ = "0.1.0"

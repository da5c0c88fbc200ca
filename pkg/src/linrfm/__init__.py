"""Linear recursive feature machines for sparse regression and low-rank matrix recovery."""

from .deep import DeepRfmConfig, balanced_alphas, deep_lin_rfm_run
from .estimators import (
    DeepRFMCompletion,
    DiagNetRegressor,
    DiagRFMRegressor,
    IRLSCompletion,
    L1Regressor,
    LinearNetCompletion,
    LinRFMCompletion,
    NuclearNormCompletion,
    SvdFreeCompletion,
)
from .exceptions import ConfigError, LinRFMError
from .irls import IrlsConfig, irls_run
from .problems import (
    CompletionProblem,
    SensingProblem,
    SparseRegressionProblem,
    gen_low_rank_completion,
    gen_sensing,
    gen_sparse_regression,
    load_problem,
    save_problem,
    test_mse,
)
from .rfm import RfmConfig, diag_rfm_run, lin_rfm_run
from .spectral import HalfIntegerPower, Identity, Power
from .svdfree import svdfree_run

__version__ = "0.1.0"

__all__ = [
    "CompletionProblem",
    "SensingProblem",
    "SparseRegressionProblem",
    "gen_low_rank_completion",
    "gen_sensing",
    "gen_sparse_regression",
    "load_problem",
    "save_problem",
    "test_mse",
    "Power",
    "Identity",
    "HalfIntegerPower",
    "RfmConfig",
    "lin_rfm_run",
    "diag_rfm_run",
    "svdfree_run",
    "DeepRfmConfig",
    "balanced_alphas",
    "deep_lin_rfm_run",
    "IrlsConfig",
    "irls_run",
    "LinRFMCompletion",
    "SvdFreeCompletion",
    "DeepRFMCompletion",
    "IRLSCompletion",
    "NuclearNormCompletion",
    "LinearNetCompletion",
    "DiagRFMRegressor",
    "L1Regressor",
    "DiagNetRegressor",
    "LinRFMError",
    "ConfigError",
]

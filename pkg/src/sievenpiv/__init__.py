"""Sieve nonparametric IV estimation with data-driven dimension choice, uniform bands and welfare functionals."""

from .adaptive import LepskiConfig, LepskiResult, adaptive_fit, j_max_hat, lepski_select, v_sup_hat
from .basis import BasisSpec, Sieve, TensorBasisSpec, design_matrix, eval_basis, gram, xi_sup_l1
from .exceptions import (
    DomainError,
    FailureBudgetError,
    NoCandidatesError,
    RankError,
    SieveError,
    ZeroVarianceError,
)
from .inference import (
    BootstrapConfig,
    FunctionalVector,
    UniformBand,
    score_bootstrap_sup,
    sieve_sd,
    sieve_variance,
    t_statistic,
    uniform_band,
)
from .npiv import Dataset, EvalGrid, NpivFit, e_hat, fit, l2_distance, predict, sup_distance, tau_hat
from .welfare import PricePath, WelfareEstimate, cs_functional, dwl_functional, solve_cs_ode, welfare_estimate

__version__ = "0.1.0"

__all__ = [
    "BasisSpec",
    "BootstrapConfig",
    "Dataset",
    "DomainError",
    "EvalGrid",
    "FailureBudgetError",
    "FunctionalVector",
    "LepskiConfig",
    "LepskiResult",
    "NoCandidatesError",
    "NpivFit",
    "PricePath",
    "RankError",
    "Sieve",
    "SieveError",
    "TensorBasisSpec",
    "UniformBand",
    "WelfareEstimate",
    "ZeroVarianceError",
    "adaptive_fit",
    "cs_functional",
    "design_matrix",
    "dwl_functional",
    "e_hat",
    "eval_basis",
    "fit",
    "gram",
    "j_max_hat",
    "l2_distance",
    "lepski_select",
    "predict",
    "score_bootstrap_sup",
    "sieve_sd",
    "sieve_variance",
    "solve_cs_ode",
    "sup_distance",
    "t_statistic",
    "tau_hat",
    "uniform_band",
    "v_sup_hat",
    "welfare_estimate",
    "xi_sup_l1",
]

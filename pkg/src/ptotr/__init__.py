"""Poisson-response tensor-on-tensor regression."""

from .exceptions import (
    ConfigError,
    CorruptInputError,
    DegenerateRateError,
    DimensionError,
    MleNotExistError,
    PtotrError,
    TensorFileError,
)
from .tensor import (
    CpTensor,
    cp_reconstruct,
    dematricize,
    khatri_rao,
    matricize,
    normalize_cp,
    partial_contract,
    unvec,
    vec,
)
from .mm import MmProblem, MmResult, check_mle_exists, mm_objective, mm_solve, mm_step
from .estimator import (
    FitConfig,
    FitResult,
    PtotrProblem,
    bic,
    build_covariate_update,
    build_response_update,
    fit,
    loglikelihood,
    parameter_count,
    predict_rates,
)

from .diagnostics import (
    BoundInputs,
    MinimaxBound,
    gradient_check,
    kl_bound_check,
    kl_poisson,
    loglik_gradient,
    minimax_bound,
)
from .io import read_cp, read_dataset, read_tensor, write_cp, write_dataset, write_tensor

__version__ = "0.1.0"

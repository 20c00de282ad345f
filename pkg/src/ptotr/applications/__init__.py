"""Application pipelines: autoregressive forecasting, PET reconstruction, change-point detection."""

from .ar import ArSpec, ar_covariate, build_ar_covariates
from .changepoint import ChangePointResult, changepoint_scan, fit_indicator_model
from .pet import (
    PetProblem,
    pet_reconstruct_mlem,
    pet_reconstruct_ptotr,
    pet_simulate,
    rmse,
    subsample_cells,
)
from .radon import RadonOperator, radon_adjoint, radon_basis, radon_forward

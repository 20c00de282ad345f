"""Emission-tomography style reconstruction of multi-frame images from sinogram counts.

Each observation is one sinogram cell ``c``: its covariate is the projection
weight image ``R_c`` and its response is the count tensor over the frame
modes, ``Y_c ~ Poisson(<R_c | B>)`` for the image tensor ``B`` of shape
``(N1, N2, M_1, ..)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..estimator import FitConfig, FitResult, PtotrProblem, fit
from ..exceptions import CorruptInputError, DimensionError, MleNotExistError
from ..mm import MmProblem, check_mle_exists, mm_step
from ..synth import sample_poisson_tensor
from ..tensor import cp_reconstruct, unvec, vec
from .radon import RadonOperator

__all__ = [
    "PetProblem",
    "subsample_cells",
    "pet_simulate",
    "pet_reconstruct_mlem",
    "pet_reconstruct_ptotr",
    "mlem_problem",
    "mlem_image",
    "rmse",
]


@dataclass(frozen=True)
class PetProblem:
    """Retained sinogram cells with their covariate images and count responses.

    ``cells`` are row-major indices into the ``(angles, bins)`` sinogram.
    """

    op: RadonOperator
    cells: np.ndarray
    covariates: np.ndarray  # (I, N1, N2)
    responses: np.ndarray  # (I, M_1, ..)

    @property
    def response_dims(self) -> tuple[int, ...]:
        return self.responses.shape[1:]

    @property
    def image_dims(self) -> tuple[int, ...]:
        return self.op.image_dims + self.response_dims

    def informative(self) -> np.ndarray:
        """Mask of cells whose projection weights are not all zero."""
        return self.covariates.reshape(len(self.cells), -1).sum(axis=1) > 0

    def to_ptotr_problem(self) -> PtotrProblem:
        """The regression problem on informative cells; empty rays carry no information."""
        keep = self.informative()
        return PtotrProblem(self.responses[keep], self.covariates[keep])


def subsample_cells(n_cells: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Sorted uniform subset of ``floor(fraction * n_cells)`` cells, without replacement."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    k = int(np.floor(fraction * n_cells))
    if k < 1:
        raise ValueError(f"fraction {fraction} of {n_cells} cells keeps no observations")
    if k == n_cells:
        return np.arange(n_cells)
    return np.sort(rng.choice(n_cells, size=k, replace=False))


def pet_simulate(truth, op: RadonOperator, fraction: float, rng: np.random.Generator) -> PetProblem:
    """Subsample sinogram cells and draw Poisson counts for every frame of ``truth``."""
    truth = np.asarray(truth, dtype=float)
    if truth.ndim < 2 or truth.shape[:2] != op.image_dims:
        raise DimensionError(f"truth leading dims {truth.shape[:2]} do not match {op.image_dims}")
    if np.any(~(truth > 0)):
        raise CorruptInputError("truth must be strictly positive")
    cells = subsample_cells(op.n_cells, fraction, rng)
    resp_dims = truth.shape[2:]
    frames = truth.reshape(op.image_dims + (-1,))
    sino = np.stack([op.forward(frames[..., m]).ravel() for m in range(frames.shape[-1])], axis=-1)
    rates = sino[cells]  # (I, prod M)
    counts = np.zeros_like(rates)
    hit = rates > 0
    counts[hit] = sample_poisson_tensor(rates[hit], rng)
    responses = counts.reshape((len(cells),) + resp_dims)
    return PetProblem(op, cells, op.cell_covariates(cells), responses)


def rmse(est, truth) -> float:
    """Root mean square error over all entries."""
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise DimensionError(f"shape mismatch {est.shape} vs {truth.shape}")
    return float(np.sqrt(np.sum((est - truth) ** 2) / est.size))


def mlem_problem(pet: PetProblem) -> MmProblem:
    """Unconstrained full-image problem: ``C`` is (frames, pixels) and ``D`` is (pixels, cells)."""
    I = len(pet.cells)
    d = pet.covariates.reshape(I, -1, order="F").T
    y = pet.responses.reshape(I, -1, order="F").T
    c0 = np.full((y.shape[0], d.shape[0]), y.sum() / (y.shape[0] * d.sum()))
    return MmProblem(y=y, d=d, c_init=c0)


def mlem_image(c: np.ndarray, image_dims) -> np.ndarray:
    return unvec(vec(c.T), image_dims)


def pet_reconstruct_mlem(pet: PetProblem, max_iter: int, truth=None):
    """Classic ML-EM: ``max_iter`` multiplicative steps from a constant image.

    Returns the image estimate and the RMSE after each iteration (empty when
    ``truth`` is not given).
    """
    prob = mlem_problem(pet)
    missing = ~check_mle_exists(prob.y)
    if missing.all():
        raise MleNotExistError("all responses are zero")
    if missing.any():
        frames = [int(m) + 1 for m in np.flatnonzero(missing)]
        warnings.warn(f"frames {frames} have no counts; their estimate decays toward zero",
                      stacklevel=2)
    c = prob.c_init
    errs = []
    for _ in range(max_iter):
        c = mm_step(c, prob)
        if truth is not None:
            errs.append(rmse(mlem_image(c, pet.image_dims), truth))
    return mlem_image(c, pet.image_dims), errs


def pet_reconstruct_ptotr(pet: PetProblem, cfg: FitConfig, truth=None, threads: int = 1):
    """Low-rank CP reconstruction; returns the fit and the best restart's RMSE per sweep."""
    problem = pet.to_ptotr_problem()
    per_restart: dict[int, list[float]] = {}
    callback = None
    if truth is not None:
        truth = np.asarray(truth, dtype=float)

        def callback(restart, sweep, b):
            per_restart.setdefault(restart, []).append(rmse(cp_reconstruct(b), truth))

    res: FitResult = fit(problem, cfg, callback=callback, threads=threads)
    return res, per_restart.get(res.restart_index, [])

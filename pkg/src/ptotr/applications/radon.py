"""Parallel-beam discrete Radon transform with pixel-driven binning.

Pixel ``(n1, n2)`` (row, column) has centre ``x = n2 - (N2 - 1)/2``,
``y = (N1 - 1)/2 - n1`` and projects at angle ``theta`` to the signed offset
``s = x cos(theta) + y sin(theta)``. Radial bins tile the image diagonal
``[-D/2, D/2]`` uniformly. Nearest binning drops each pixel's whole mass in
the bin containing ``s``; linear binning splits it between the two nearest
bin centres. Both schemes conserve mass per angle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse

from ..exceptions import DimensionError

__all__ = ["RadonOperator", "radon_forward", "radon_adjoint", "radon_basis"]


@dataclass(frozen=True)
class RadonOperator:
    """Immutable projector from ``image_dims`` images to ``(n_angles, radial_bins)`` sinograms.

    Angles are ``pi * k / n_angles`` for ``k = 0 .. n_angles - 1``. The
    default bin count is four times the larger image extent.
    """

    image_dims: tuple[int, int]
    n_angles: int
    radial_bins: int | None = None
    binning: str = "nearest"
    _pix: np.ndarray = field(init=False, repr=False, compare=False)
    _cell: np.ndarray = field(init=False, repr=False, compare=False)
    _wt: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.image_dims)
        if len(dims) != 2 or min(dims) < 1:
            raise DimensionError("image_dims must be two positive extents")
        if self.n_angles < 1:
            raise ValueError("need at least one angle")
        bins = 4 * max(dims) if self.radial_bins is None else int(self.radial_bins)
        if bins < 1:
            raise ValueError("radial_bins must be >= 1")
        if self.binning not in ("nearest", "linear"):
            raise ValueError(f"unknown binning {self.binning!r}")
        object.__setattr__(self, "image_dims", dims)
        object.__setattr__(self, "radial_bins", bins)
        pix, cell, wt = self._build()
        object.__setattr__(self, "_pix", pix)
        object.__setattr__(self, "_cell", cell)
        object.__setattr__(self, "_wt", wt)

    @property
    def angles(self) -> np.ndarray:
        return np.pi * np.arange(self.n_angles) / self.n_angles

    @property
    def sinogram_dims(self) -> tuple[int, int]:
        return (self.n_angles, self.radial_bins)

    @property
    def n_cells(self) -> int:
        return self.n_angles * self.radial_bins

    def _build(self):
        n1, n2 = self.image_dims
        K = self.radial_bins
        r, c = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
        x = (c - (n2 - 1) / 2.0).ravel()
        y = ((n1 - 1) / 2.0 - r).ravel()
        # flat pixel index in row-major order of the (n1, n2) image
        pix = np.arange(n1 * n2)
        diag = np.hypot(n1, n2)
        width = diag / K
        pixs, cells, wts = [], [], []
        for a, th in enumerate(self.angles):
            u = (x * np.cos(th) + y * np.sin(th) + diag / 2.0) / width
            if self.binning == "nearest":
                k = np.clip(np.floor(u).astype(int), 0, K - 1)
                pixs.append(pix)
                cells.append(a * K + k)
                wts.append(np.ones(pix.size))
            else:
                c0 = u - 0.5
                lo = np.floor(c0).astype(int)
                frac = c0 - lo
                hi = lo + 1
                w_lo, w_hi = 1.0 - frac, frac
                # clip at the edges, keeping the full mass inside
                w_lo = np.where(hi > K - 1, 1.0, np.where(lo < 0, 0.0, w_lo))
                w_hi = 1.0 - w_lo
                lo_c = np.clip(lo, 0, K - 1)
                hi_c = np.clip(hi, 0, K - 1)
                pixs += [pix, pix]
                cells += [a * K + lo_c, a * K + hi_c]
                wts += [w_lo, w_hi]
        return np.concatenate(pixs), np.concatenate(cells), np.concatenate(wts)

    def forward(self, image) -> np.ndarray:
        img = np.asarray(image, dtype=float)
        if img.shape != self.image_dims:
            raise DimensionError(f"image shape {img.shape} does not match {self.image_dims}")
        flat = img.ravel()
        sino = np.bincount(self._cell, weights=flat[self._pix] * self._wt, minlength=self.n_cells)
        return sino.reshape(self.sinogram_dims)

    def adjoint(self, sinogram) -> np.ndarray:
        s = np.asarray(sinogram, dtype=float)
        if s.shape != self.sinogram_dims:
            raise DimensionError(f"sinogram shape {s.shape} does not match {self.sinogram_dims}")
        flat = s.ravel()
        img = np.bincount(self._pix, weights=flat[self._cell] * self._wt,
                          minlength=self.image_dims[0] * self.image_dims[1])
        return img.reshape(self.image_dims)

    def basis(self, n: Sequence[int]) -> np.ndarray:
        """Sinogram of the indicator image of pixel ``n`` (1-based ``(n1, n2)``)."""
        n1, n2 = (int(i) for i in n)
        if not (1 <= n1 <= self.image_dims[0] and 1 <= n2 <= self.image_dims[1]):
            raise DimensionError(f"pixel {tuple(n)} outside 1..{self.image_dims}")
        e = np.zeros(self.image_dims)
        e[n1 - 1, n2 - 1] = 1.0
        return self.forward(e)

    def matrix(self) -> sparse.csr_matrix:
        """Sparse ``(n_cells, N1*N2)`` matrix; rows follow row-major sinogram order,
        columns row-major image order."""
        m = sparse.coo_matrix((self._wt, (self._cell, self._pix)),
                              shape=(self.n_cells, self.image_dims[0] * self.image_dims[1]))
        return m.tocsr()

    def cell_covariates(self, cells: Sequence[int]) -> np.ndarray:
        """Covariate images ``(len(cells), N1, N2)`` for row-major sinogram cell indices."""
        rows = self.matrix()[np.asarray(cells, dtype=int)]
        return rows.toarray().reshape((len(cells),) + self.image_dims)


def radon_forward(op: RadonOperator, image) -> np.ndarray:
    return op.forward(image)


def radon_adjoint(op: RadonOperator, sinogram) -> np.ndarray:
    return op.adjoint(sinogram)


def radon_basis(op: RadonOperator, n: Sequence[int]) -> np.ndarray:
    return op.basis(n)

"""Dense and CP tensor primitives.

Dense tensors are plain ``numpy.ndarray`` objects. Every vectorization in this
package is column-major (mode 1 varies fastest), so ``vec(t)`` is
``t.ravel(order="F")`` and Khatri-Rao products are always taken over factors in
decreasing mode order. Mode arguments of the public functions are 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import CorruptInputError, DimensionError

__all__ = [
    "CpTensor",
    "vec",
    "unvec",
    "matricize",
    "dematricize",
    "khatri_rao",
    "cp_reconstruct",
    "partial_contract",
    "normalize_cp",
    "random_cp",
]


def vec(t: np.ndarray) -> np.ndarray:
    """Column-major vectorization."""
    return np.asarray(t).ravel(order="F")


def unvec(v: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`vec`."""
    dims = tuple(int(d) for d in dims)
    v = np.asarray(v)
    if v.size != int(np.prod(dims, dtype=np.int64)):
        raise DimensionError(f"cannot fold {v.size} values into dims {dims}")
    return v.reshape(dims, order="F")


def _check_mode(ndim: int, mode: int) -> int:
    if not 1 <= mode <= ndim:
        raise DimensionError(f"mode {mode} out of range for an order-{ndim} tensor")
    return mode - 1


def matricize(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding (Kolda-Bader ordering of the remaining modes).

    Element ``(m_1, ..., m_P)`` lands in row ``m_mode`` and column
    ``sum_{k != mode} (m_k - 1) prod_{s < k, s != mode} M_s`` (0-based column).
    """
    t = np.asarray(t)
    axis = _check_mode(t.ndim, mode)
    return np.reshape(np.moveaxis(t, axis, 0), (t.shape[axis], -1), order="F")


def dematricize(mat: np.ndarray, mode: int, dims: Sequence[int]) -> np.ndarray:
    """Fold a mode-``mode`` unfolding back into a tensor of shape ``dims``."""
    dims = tuple(int(d) for d in dims)
    axis = _check_mode(len(dims), mode)
    mat = np.asarray(mat)
    rest = dims[:axis] + dims[axis + 1 :]
    expected = (dims[axis], int(np.prod(rest, dtype=np.int64)))
    if mat.shape != expected:
        raise DimensionError(f"matrix shape {mat.shape} does not unfold dims {dims} at mode {mode}")
    folded = np.reshape(mat, (dims[axis],) + rest, order="F")
    return np.moveaxis(folded, 0, axis)


def khatri_rao(matrices: Sequence[np.ndarray]) -> np.ndarray:
    """Column-wise Kronecker product of ``matrices`` taken in the given order.

    The last matrix's row index varies fastest, so passing factors in
    decreasing mode order yields rows in column-major multi-index order.
    An empty sequence is not allowed; use ``np.ones((1, R))`` for that case.
    """
    if len(matrices) == 0:
        raise DimensionError("khatri_rao needs at least one matrix")
    mats = [np.atleast_2d(np.asarray(m, dtype=float)) for m in matrices]
    rank = mats[0].shape[1]
    for m in mats:
        if m.shape[1] != rank:
            raise DimensionError(
                f"khatri_rao column mismatch: {[x.shape[1] for x in mats]}"
            )
    out = mats[0]
    for m in mats[1:]:
        out = (out[:, None, :] * m[None, :, :]).reshape(-1, rank)
    return out


def _kr_decreasing(factors: Sequence[np.ndarray], rank: int) -> np.ndarray:
    """Khatri-Rao product of ``factors`` in decreasing mode order (ones if empty)."""
    if len(factors) == 0:
        return np.ones((1, rank))
    return khatri_rao(list(factors)[::-1])


@dataclass(frozen=True)
class CpTensor:
    """Rank-R CP tensor ``[[weights; V_1..V_Q, U_1..U_P]]``.

    ``covariate_factors`` index the leading (covariate) modes of the
    coefficient tensor and ``response_factors`` the trailing ones.
    """

    weights: np.ndarray
    covariate_factors: tuple[np.ndarray, ...] = field(default_factory=tuple)
    response_factors: tuple[np.ndarray, ...] = field(default_factory=tuple)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        cov = tuple(np.asarray(v, dtype=float) for v in self.covariate_factors)
        resp = tuple(np.asarray(u, dtype=float) for u in self.response_factors)
        if w.size < 1:
            raise DimensionError("CP rank must be at least 1")
        for f in cov + resp:
            if f.ndim != 2 or f.shape[1] != w.size:
                raise DimensionError(
                    f"factor of shape {f.shape} does not match rank {w.size}"
                )
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "covariate_factors", cov)
        object.__setattr__(self, "response_factors", resp)

    @property
    def rank(self) -> int:
        return self.weights.size

    @property
    def factors(self) -> tuple[np.ndarray, ...]:
        return self.covariate_factors + self.response_factors

    @property
    def covariate_dims(self) -> tuple[int, ...]:
        return tuple(v.shape[0] for v in self.covariate_factors)

    @property
    def response_dims(self) -> tuple[int, ...]:
        return tuple(u.shape[0] for u in self.response_factors)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.covariate_dims + self.response_dims

    def is_positive(self) -> bool:
        return bool(np.all(self.weights > 0) and all(np.all(f > 0) for f in self.factors))

    def is_normalized(self, tol: float = 1e-10) -> bool:
        sums_ok = all(np.allclose(f.sum(axis=0), 1.0, rtol=0, atol=tol) for f in self.factors)
        return sums_ok and bool(np.all(np.diff(self.weights) <= 0))

    def full(self) -> np.ndarray:
        return cp_reconstruct(self)

    def copy(self) -> "CpTensor":
        return CpTensor(
            self.weights.copy(),
            tuple(v.copy() for v in self.covariate_factors),
            tuple(u.copy() for u in self.response_factors),
        )


def cp_reconstruct(c: CpTensor) -> np.ndarray:
    """Materialize ``c`` as a dense tensor of shape ``(N_1..N_Q, M_1..M_P)``."""
    kr = _kr_decreasing(c.factors, c.rank)
    return unvec(kr @ c.weights, c.shape) if c.factors else np.asarray(c.weights.sum())


def partial_contract(x: np.ndarray, b) -> np.ndarray:
    """Contract ``x`` against the leading modes of ``b``.

    ``b`` is either a dense tensor whose leading dims equal ``x.shape`` or a
    :class:`CpTensor`; the CP path never materializes the full coefficient.
    """
    x = np.asarray(x, dtype=float)
    if isinstance(b, CpTensor):
        if tuple(x.shape) != b.covariate_dims:
            raise DimensionError(
                f"covariate dims {x.shape} do not match coefficient {b.covariate_dims}"
            )
        w = _kr_decreasing(b.covariate_factors, b.rank).T @ vec(x)
        ku = _kr_decreasing(b.response_factors, b.rank)
        return unvec(ku @ (b.weights * w), b.response_dims)
    b = np.asarray(b, dtype=float)
    lead = x.shape
    if b.shape[: x.ndim] != lead:
        raise DimensionError(f"covariate dims {lead} do not lead coefficient dims {b.shape}")
    trail = b.shape[x.ndim :]
    bmat = b.reshape(int(np.prod(lead, dtype=np.int64)), -1, order="F")
    out = bmat.T @ vec(x)
    return unvec(out, trail) if trail else np.asarray(out[0])


def normalize_cp(c: CpTensor) -> CpTensor:
    """Scale factor columns to sum to one and sort weights in decreasing order.

    The weights absorb every column sum; ties keep their previous order.
    """
    weights = c.weights.copy()
    factors = []
    for f in c.factors:
        s = f.sum(axis=0)
        if np.any(~np.isfinite(s)) or np.any(s <= 0):
            raise CorruptInputError("factor column with nonpositive sum cannot be normalized")
        factors.append(f / s)
        weights = weights * s
    order = np.argsort(-weights, kind="stable")
    q = len(c.covariate_factors)
    factors = [f[:, order] for f in factors]
    return CpTensor(weights[order], tuple(factors[:q]), tuple(factors[q:]))


def random_cp(
    covariate_dims: Sequence[int],
    response_dims: Sequence[int],
    rank: int,
    rng: np.random.Generator,
    low: float = 0.1,
    high: float = 1.0,
    weight_scale: float = 1.0,
) -> CpTensor:
    """Normalized CP tensor with factor entries drawn uniformly on ``(low, high)``."""
    cov = tuple(rng.uniform(low, high, (n, rank)) for n in covariate_dims)
    resp = tuple(rng.uniform(low, high, (m, rank)) for m in response_dims)
    c = normalize_cp(CpTensor(np.ones(rank), cov, resp))
    return CpTensor(c.weights * weight_scale, c.covariate_factors, c.response_factors)

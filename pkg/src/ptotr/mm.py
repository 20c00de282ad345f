"""Multiplicative majorization-minimization for identity-link Poisson models.

Maximizes ``f(C) = sum(Y * log(C D) - C D)`` over positive ``C`` with the
update ``C <- C * ((Y / (C D)) D^T) / (1 1^T D^T)``. The same kernel serves as
full-rank multivariate Poisson regression, classic ML-EM, and the inner solver
of every factor update in :mod:`ptotr.estimator`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import CorruptInputError, DegenerateRateError, DimensionError

logger = logging.getLogger(__name__)

EPS_MIN = 1e-12

__all__ = [
    "EPS_MIN",
    "MmProblem",
    "MmResult",
    "mm_objective",
    "mm_step",
    "mm_solve",
    "check_mle_exists",
    "poisson_loglik",
]


@dataclass(frozen=True)
class MmProblem:
    """Counts ``y`` (J x L), fixed design ``d`` (R x L) and starting iterate ``c_init`` (J x R).

    ``d`` may contain zeros (sparse projection geometries); a design row that
    is entirely zero leaves the matching column of the iterate untouched.
    """

    y: np.ndarray
    d: np.ndarray
    c_init: np.ndarray

    def __post_init__(self):
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        d = np.atleast_2d(np.asarray(self.d, dtype=float))
        c = np.atleast_2d(np.asarray(self.c_init, dtype=float))
        if y.shape != (c.shape[0], d.shape[1]) or c.shape[1] != d.shape[0]:
            raise DimensionError(
                f"inconsistent MM shapes: y {y.shape}, c {c.shape}, d {d.shape}"
            )
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise CorruptInputError("counts must be nonnegative integers")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise CorruptInputError("design must be finite and nonnegative")
        if np.any(c <= 0):
            raise CorruptInputError("initial iterate must be strictly positive")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "c_init", c)


@dataclass
class MmResult:
    c: np.ndarray
    objective_trajectory: list[float]
    iterations: int
    converged: bool
    floored: int = 0
    notes: list[str] = field(default_factory=list)


def poisson_loglik(y: np.ndarray, rates: np.ndarray) -> float:
    """``sum(y log(rates) - rates)`` with ``0 log r = 0``.

    Raises :class:`DegenerateRateError` when a positive count meets a
    nonpositive rate.
    """
    y = np.asarray(y, dtype=float)
    rates = np.asarray(rates, dtype=float)
    pos = y > 0
    r_pos = rates[pos]
    if np.any(r_pos <= 0):
        raise DegenerateRateError("nonpositive rate at a positive count")
    return float(np.sum(y[pos] * np.log(r_pos)) - np.sum(rates))


def mm_objective(c: np.ndarray, p: MmProblem) -> float:
    return poisson_loglik(p.y, np.asarray(c, dtype=float) @ p.d)


def _ratio(y: np.ndarray, rates: np.ndarray) -> np.ndarray:
    """``y / rates`` with ``0 / r = 0``; raises on a positive count with rate <= 0."""
    pos = y > 0
    if np.any(rates[pos] <= 0):
        raise DegenerateRateError("nonpositive rate at a positive count")
    out = np.zeros_like(rates)
    np.divide(y, rates, out=out, where=pos)
    return out


def _apply_update(c: np.ndarray, numer: np.ndarray, denom: np.ndarray, floor: float):
    """Return ``(c * numer / denom, n_floored)``; zero denominators keep ``c``."""
    phi = np.ones_like(numer)
    np.divide(numer, denom, out=phi, where=denom > 0)
    new = c * phi
    low = new < floor
    n_floored = int(np.count_nonzero(low))
    if n_floored:
        new[low] = floor
    return new, n_floored


def _step(c: np.ndarray, p: MmProblem, floor: float):
    numer = _ratio(p.y, c @ p.d) @ p.d.T
    denom = np.broadcast_to(p.d.sum(axis=1), numer.shape)
    return _apply_update(c, numer, denom, floor)


def mm_step(c: np.ndarray, p: MmProblem, floor: float = EPS_MIN) -> np.ndarray:
    """One multiplicative update of ``c``.

    Entries that would fall below ``floor`` are raised to it; use
    :func:`mm_solve` to get a count of such events.
    """
    c = np.atleast_2d(np.asarray(c, dtype=float))
    if np.any(c <= 0):
        raise CorruptInputError("iterate must be strictly positive")
    return _step(c, p, floor)[0]


def mm_solve(
    p: MmProblem,
    tol: float = 1e-8,
    max_iter: int = 10_000,
    floor: float = EPS_MIN,
) -> MmResult:
    """Iterate :func:`mm_step` until the relative objective change drops below ``tol``.

    The returned point is a stationary point of the objective; no global
    optimality check is made.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    c = p.c_init.copy()
    f = mm_objective(c, p)
    traj = [f]
    floored = 0
    converged = False
    it = 0
    while it < max_iter:
        c, nf = _step(c, p, floor)
        floored += nf
        it += 1
        f_new = mm_objective(c, p)
        traj.append(f_new)
        if abs(f_new - f) <= tol * abs(f) or f_new == f:
            converged = True
            break
        f = f_new
    notes = []
    if floored:
        notes.append(f"{floored} iterate entries raised to the positivity floor {floor:g}")
        logger.debug(notes[-1])
    return MmResult(c=c, objective_trajectory=traj, iterations=it, converged=converged,
                    floored=floored, notes=notes)


def check_mle_exists(y: np.ndarray) -> np.ndarray:
    """Per-row flag: ``False`` where the row of counts is all zero."""
    y = np.atleast_2d(np.asarray(y))
    return y.sum(axis=1) > 0

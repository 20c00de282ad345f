"""Computable theory checks: Poisson KL divergence, the minimax lower bound, gradient checks."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .estimator import PtotrProblem, _covariate_blocks, _response_blocks, loglikelihood
from .exceptions import CorruptInputError, DegenerateRateError, DimensionError
from .tensor import CpTensor

__all__ = [
    "kl_poisson",
    "KlBoundReport",
    "kl_bound_check",
    "kl_bound_trials",
    "spectral_norm_sq",
    "BoundInputs",
    "MinimaxBound",
    "minimax_bound",
    "GradientCheck",
    "loglik_gradient",
    "gradient_check",
]


def kl_poisson(mu, nu) -> float:
    """Sum of ``mu log(mu/nu) - mu + nu`` over independent Poisson coordinates."""
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if mu.shape != nu.shape:
        raise DimensionError(f"shape mismatch {mu.shape} vs {nu.shape}")
    if np.any(~(mu > 0)) or np.any(~(nu > 0)):
        raise CorruptInputError("Poisson rates must be strictly positive")
    return float(np.sum(mu * np.log(mu / nu) - mu + nu))


def spectral_norm_sq(x, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest eigenvalue of ``x^T x`` by power iteration (relative change below ``tol``)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DimensionError("expected a matrix")
    gram = x.T @ x
    v = np.ones(gram.shape[0]) / math.sqrt(gram.shape[0])
    est = 0.0
    for _ in range(max_iter):
        w = gram @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        new = float(v @ gram @ v)
        if abs(new - est) <= tol * abs(new):
            return new
        est = new
    return est


@dataclass(frozen=True)
class KlBoundReport:
    lhs: float
    rhs: float
    passed: bool


def kl_bound_check(x_matrix, b1, b2, beta: float) -> KlBoundReport:
    """Compare ``KL(P_b1 || P_b2)`` with ``||X||_2^2 / (beta xi) * ||b1 - b2||_F^2``.

    ``x_matrix`` is ``(I, N)`` with one vectorized covariate per row; ``b1``
    and ``b2`` are ``(N, M)`` coefficient matrices (any dense tensor whose
    leading modes flatten to ``N`` is accepted) with entries at least ``beta``.
    """
    x = np.asarray(x_matrix, dtype=float)
    n = x.shape[1]
    b1 = np.asarray(b1, dtype=float).reshape(n, -1, order="F")
    b2 = np.asarray(b2, dtype=float).reshape(n, -1, order="F")
    if beta <= 0 or b1.min() < beta or b2.min() < beta:
        raise CorruptInputError("coefficients must be entrywise >= beta > 0")
    if x.min() < 0:
        raise CorruptInputError("covariates must be nonnegative")
    xi = float(np.abs(x).sum(axis=1).min())
    if xi <= 0:
        raise CorruptInputError("every covariate needs a positive entry")
    lhs = kl_poisson(x @ b1, x @ b2)
    rhs = spectral_norm_sq(x) / (beta * xi) * float(np.sum((b1 - b2) ** 2))
    return KlBoundReport(lhs, rhs, lhs <= rhs * (1 + 1e-9))


def kl_bound_trials(n_trials: int, rng: np.random.Generator, max_obs: int = 3, max_dim: int = 3):
    """Random small instances of :func:`kl_bound_check`."""
    reports = []
    for _ in range(n_trials):
        i, n, m = (int(rng.integers(1, k + 1)) for k in (max_obs, max_dim, max_dim))
        beta = float(rng.uniform(0.05, 1.0))
        x = rng.uniform(0.0, 1.0, (i, n))
        x[np.arange(i), rng.integers(0, n, i)] += 0.1
        b1 = beta + rng.exponential(1.0, (n, m))
        b2 = beta + rng.exponential(1.0, (n, m))
        reports.append(kl_bound_check(x, b1, b2, beta))
    return reports


@dataclass(frozen=True)
class BoundInputs:
    """Quantities entering the minimax lower bound.

    ``bar_m`` and ``bar_n`` are the common response and covariate mode
    extents, ``P`` and ``Q`` the numbers of modes, ``xi`` the smallest
    covariate l1 norm and ``x_spec_norm_sq`` the squared spectral norm of the
    stacked vectorized covariates.
    """

    bar_m: int
    bar_n: int
    P: int
    Q: int
    R: int
    alpha: float
    beta: float
    xi: float
    x_spec_norm_sq: float

    def __post_init__(self):
        if self.beta <= 0 or self.alpha < self.beta:
            raise ValueError("need 0 < beta <= alpha")
        if self.xi <= 0 or self.x_spec_norm_sq <= 0:
            raise ValueError("xi and ||X||_2^2 must be positive")
        if min(self.bar_m, self.bar_n, self.P, self.Q, self.R) < 1:
            raise ValueError("extents, orders and rank must be >= 1")

    @property
    def J(self) -> int:
        return max(self.bar_n, self.bar_m)

    @classmethod
    def from_covariates(cls, x_matrix, *, bar_m, bar_n, P, Q, R, alpha, beta) -> "BoundInputs":
        x = np.asarray(x_matrix, dtype=float)
        return cls(bar_m, bar_n, P, Q, R, alpha, beta,
                   float(np.abs(x).sum(axis=1).min()), spectral_norm_sq(x))


@dataclass(frozen=True)
class MinimaxBound:
    bound: float
    condition_holds: bool
    warnings: tuple[str, ...] = field(default_factory=tuple)


def minimax_bound(inp: BoundInputs) -> MinimaxBound:
    """Lower bound ``(beta ln2 / 128)(JR/16 - 1)(xi / ||X||_2^2)`` and its side condition.

    The condition reads ``(beta ln2 / (alpha - beta)^2)(JR/16 - 1)(xi/||X||^2)
    <= bar_n^Q bar_m^P``. A warning is issued (not raised) when ``J <= 16``.
    """
    notes = []
    if inp.J <= 16:
        msg = f"J = {inp.J} <= 16: the lower bound does not apply"
        warnings.warn(msg, stacklevel=2)
        notes.append(msg)
    growth = inp.J * inp.R / 16 - 1
    ratio = inp.xi / inp.x_spec_norm_sq
    bound = inp.beta * math.log(2) / 128 * growth * ratio
    gap = (inp.alpha - inp.beta) ** 2
    lhs_factor = inp.beta * math.log(2) * growth * ratio
    volume = float(inp.bar_n) ** inp.Q * float(inp.bar_m) ** inp.P
    holds = lhs_factor <= 0 if gap == 0 else lhs_factor / gap <= volume
    return MinimaxBound(bound, bool(holds), tuple(notes))


@dataclass(frozen=True)
class GradientCheck:
    max_rel_error: float
    analytic: np.ndarray
    numeric: np.ndarray


def _with_factor(b: CpTensor, factor, tilde) -> CpTensor:
    kind, idx = factor
    ones = np.ones(b.rank)
    if kind == "U":
        resp = list(b.response_factors)
        resp[idx - 1] = tilde
        return CpTensor(ones, b.covariate_factors, tuple(resp))
    cov = list(b.covariate_factors)
    cov[idx - 1] = tilde
    return CpTensor(ones, tuple(cov), b.response_factors)


def _tilde(b: CpTensor, factor):
    kind, idx = factor
    if kind not in ("U", "V"):
        raise ValueError("factor must be ('U', p) or ('V', q)")
    pool = b.response_factors if kind == "U" else b.covariate_factors
    if not 1 <= idx <= len(pool):
        raise DimensionError(f"{kind} mode {idx} out of range 1..{len(pool)}")
    return pool[idx - 1] * b.weights


def loglik_gradient(problem: PtotrProblem, b: CpTensor, factor) -> np.ndarray:
    """Analytic gradient of the loglikelihood w.r.t. a factor with the weights absorbed.

    For ``("U", p)`` this is ``sum_i (Y_ip / (U~ G_ip) - 1) G_ip^T``; for
    ``("V", q)`` the analogous sum over the covariate designs.
    """
    tilde = _tilde(b, factor)
    kind, idx = factor
    if kind == "U":
        yp, w, k = _response_blocks(problem, b, idx)
        rates = np.einsum("mr,ir,cr->mic", tilde, w, k)
        if np.any(~(rates > 0)):
            raise DegenerateRateError("nonpositive rate in gradient evaluation")
        return np.einsum("mic,ir,cr->mr", yp / rates - 1.0, w, k)
    wq, ku = _covariate_blocks(problem, b, idx)
    rates = np.einsum("inr,nr,mr->im", wq, tilde, ku)
    if np.any(~(rates > 0)):
        raise DegenerateRateError("nonpositive rate in gradient evaluation")
    return np.einsum("im,mr,inr->nr", problem.y_rows / rates - 1.0, ku, wq)


def gradient_check(problem: PtotrProblem, b: CpTensor, factor=("U", 1), eps: float = 1e-5) -> GradientCheck:
    """Central finite differences against :func:`loglik_gradient`.

    The relative error of each entry is ``|a - n| / max(|a|, |n|, floor)``
    with ``floor = 1e-6 * max|a|`` so entries with a vanishing gradient
    are judged on the scale of the whole gradient.
    """
    tilde = _tilde(b, factor)
    analytic = loglik_gradient(problem, b, factor)
    numeric = np.zeros_like(tilde)
    for idx in np.ndindex(tilde.shape):
        plus, minus = tilde.copy(), tilde.copy()
        plus[idx] += eps
        minus[idx] -= eps
        f_plus = loglikelihood(problem, _with_factor(b, factor, plus))
        f_minus = loglikelihood(problem, _with_factor(b, factor, minus))
        numeric[idx] = (f_plus - f_minus) / (2 * eps)
    floor = 1e-6 * max(float(np.max(np.abs(analytic))), 1e-300)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    err = float(np.max(np.abs(analytic - numeric) / denom))
    return GradientCheck(err, analytic, numeric)

"""Alternating maximum-likelihood estimation of a CP coefficient tensor.

The model is ``Y_i ~ Poisson(<X_i | B>)`` with
``B = [[lambda; V_1..V_Q, U_1..U_P]]``. Each sweep updates the response
factors ``U_p`` and then the covariate factors ``V_q``, one block at a time.
The current weights are absorbed into the block being updated, the block is
improved with multiplicative MM steps, and then the weights are split off
again so that every factor column sums to one.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

from .exceptions import CorruptInputError, DimensionError, MleNotExistError
from .mm import EPS_MIN, MmProblem, _apply_update, _ratio, poisson_loglik
from .tensor import CpTensor, _kr_decreasing, normalize_cp

logger = logging.getLogger(__name__)

__all__ = [
    "PtotrProblem",
    "FitConfig",
    "FitResult",
    "loglikelihood",
    "predict_rates",
    "build_response_update",
    "build_covariate_update",
    "response_step",
    "covariate_step",
    "fit",
    "bic",
    "parameter_count",
    "initial_cp",
]


@dataclass(frozen=True)
class PtotrProblem:
    """Paired responses ``(I, M_1..M_P)`` and covariates ``(I, N_1..N_Q)``.

    Lists of per-observation tensors are stacked along a new leading axis.
    """

    responses: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        y = np.asarray(_stack(self.responses), dtype=float)
        x = np.asarray(_stack(self.covariates), dtype=float)
        if y.ndim < 2 or x.ndim < 2:
            raise DimensionError("responses and covariates need an observation axis plus >= 1 mode")
        if y.shape[0] != x.shape[0] or y.shape[0] < 1:
            raise DimensionError(
                f"{y.shape[0]} responses vs {x.shape[0]} covariates; need I >= 1 of each"
            )
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise CorruptInputError("responses must be nonnegative integer counts")
        if np.any(x < 0) or not np.all(np.isfinite(x)):
            raise CorruptInputError("covariates must be finite and nonnegative")
        if np.any(x.reshape(x.shape[0], -1).max(axis=1) <= 0):
            raise CorruptInputError("every covariate needs at least one positive entry")
        object.__setattr__(self, "responses", y)
        object.__setattr__(self, "covariates", x)

    @property
    def n_obs(self) -> int:
        return self.responses.shape[0]

    @property
    def response_dims(self) -> tuple[int, ...]:
        return self.responses.shape[1:]

    @property
    def covariate_dims(self) -> tuple[int, ...]:
        return self.covariates.shape[1:]

    @property
    def y_rows(self) -> np.ndarray:
        """``(I, prod M)`` matrix whose rows are ``vec(Y_i)``."""
        return self.responses.reshape(self.n_obs, -1, order="F")

    @property
    def x_rows(self) -> np.ndarray:
        """``(I, prod N)`` matrix whose rows are ``vec(X_i)``."""
        return self.covariates.reshape(self.n_obs, -1, order="F")


def _stack(items):
    if isinstance(items, np.ndarray):
        return items
    return np.stack([np.asarray(a, dtype=float) for a in items])


@dataclass(frozen=True)
class FitConfig:
    rank: int
    outer_tol: float = 1e-6
    inner_tol: float = 1e-4
    inner_max_iter: int = 50
    outer_max_sweeps: int = 500
    restarts: int = 10
    seed: int = 0
    param_count_convention: str = "raw"

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.outer_tol <= 0 or self.inner_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.inner_max_iter < 1 or self.outer_max_sweeps < 1 or self.restarts < 1:
            raise ValueError("iteration budgets and restarts must be >= 1")
        if self.param_count_convention not in ("raw", "constrained"):
            raise ValueError("param_count_convention must be 'raw' or 'constrained'")


@dataclass
class FitResult:
    coefficient: CpTensor
    loglik: float
    loglik_trajectory: list[float]
    bic: float
    param_count: int
    dne_warnings: dict[int, list[int]] = field(default_factory=dict)
    restart_logliks: list[float] = field(default_factory=list)
    restart_index: int = 0
    converged: bool = False
    sweeps: int = 0
    floored: int = 0


def _check_dims(problem: PtotrProblem, b: CpTensor):
    if b.covariate_dims != problem.covariate_dims or b.response_dims != problem.response_dims:
        raise DimensionError(
            f"coefficient dims {b.covariate_dims}|{b.response_dims} do not match "
            f"problem dims {problem.covariate_dims}|{problem.response_dims}"
        )


def _weights_per_obs(problem: PtotrProblem, b: CpTensor) -> np.ndarray:
    """``(I, R)`` matrix with rows ``w_i = (KR V)^T vec(X_i)``."""
    return problem.x_rows @ _kr_decreasing(b.covariate_factors, b.rank)


def predict_rates(problem: PtotrProblem, b: CpTensor) -> np.ndarray:
    """``(I, M_1..M_P)`` array of rates ``<X_i | B>``."""
    _check_dims(problem, b)
    ku = _kr_decreasing(b.response_factors, b.rank)
    rows = (_weights_per_obs(problem, b) * b.weights) @ ku.T
    return rows.reshape((problem.n_obs,) + problem.response_dims, order="F")


def loglikelihood(problem: PtotrProblem, b: CpTensor, include_constant: bool = False) -> float:
    """Poisson loglikelihood of ``b``; the ``sum log(y!)`` term only on request."""
    ll = poisson_loglik(problem.responses, predict_rates(problem, b))
    if include_constant:
        ll -= float(np.sum(gammaln(problem.responses + 1.0)))
    return ll


# ---------------------------------------------------------------------------
# response-factor blocks


def _response_blocks(problem: PtotrProblem, b: CpTensor, p: int):
    """Shared pieces of the mode-``p`` update: counts ``(M_p, I, C)``, ``W`` and ``K``."""
    P = len(problem.response_dims)
    if not 1 <= p <= P:
        raise DimensionError(f"response mode {p} out of range 1..{P}")
    _check_dims(problem, b)
    axis = p  # axis 0 is the observation index
    yp = np.moveaxis(problem.responses, axis, 0)
    yp = yp.reshape(yp.shape[0], problem.n_obs, -1, order="F")
    others = [u for s, u in enumerate(b.response_factors) if s != p - 1]
    k = _kr_decreasing(others, b.rank)
    w = _weights_per_obs(problem, b)
    return yp, w, k


def build_response_update(problem: PtotrProblem, b: CpTensor, p: int) -> MmProblem:
    """Generic MM problem for ``U_p diag(lambda)``.

    ``y`` stacks the mode-``p`` unfoldings of all responses side by side and
    ``d`` stacks the matching ``G_ip = diag(w_i) K_p^T`` blocks.
    """
    yp, w, k = _response_blocks(problem, b, p)
    g = w[:, :, None] * k.T[None, :, :]  # (I, R, C)
    d = np.transpose(g, (1, 0, 2)).reshape(b.rank, -1)
    y = yp.reshape(yp.shape[0], -1)
    u_tilde = b.response_factors[p - 1] * b.weights
    return MmProblem(y=y, d=d, c_init=u_tilde)


def _response_rates(u_tilde, w, k):
    return (u_tilde[:, None, :] * w[None, :, :]) @ k.T  # (M_p, I, C)


def response_step(yp, w, k, u_tilde, floor: float = EPS_MIN, rates=None):
    """One response-factor update using the column-sum-one simplification.

    The denominator is ``1 (sum_i w_i)^T``, which equals the generic MM
    denominator whenever the other response factors have unit column sums.
    Returns ``(new_u_tilde, n_floored)``.
    """
    if rates is None:
        rates = _response_rates(u_tilde, w, k)
    z = _ratio(yp, rates)
    numer = np.einsum("mir,ir->mr", z @ k, w)
    denom = np.broadcast_to(w.sum(axis=0), numer.shape)
    return _apply_update(u_tilde, numer, denom, floor)


# ---------------------------------------------------------------------------
# covariate-factor blocks


def _covariate_blocks(problem: PtotrProblem, b: CpTensor, q: int):
    """Per-observation ``W_iq`` stacked as ``(I, N_q, R)`` plus ``KR(U)``."""
    Q = len(problem.covariate_dims)
    if not 1 <= q <= Q:
        raise DimensionError(f"covariate mode {q} out of range 1..{Q}")
    _check_dims(problem, b)
    xq = np.moveaxis(problem.covariates, q, 1)
    xq = xq.reshape(problem.n_obs, xq.shape[1], -1, order="F")
    others = [v for s, v in enumerate(b.covariate_factors) if s != q - 1]
    kv = _kr_decreasing(others, b.rank)
    wq = xq @ kv
    ku = _kr_decreasing(b.response_factors, b.rank)
    return wq, ku


def covariate_design(wq_i: np.ndarray, ku: np.ndarray) -> np.ndarray:
    """``H_iq``: column ``n + r N_q`` is ``KR(U)[:, r] * W_iq[n, r]``.

    With this layout ``H_iq @ vec(V_q diag(lambda)) == vec(<X_i | B>)``.
    """
    h = ku[:, None, :] * wq_i[None, :, :]
    return h.reshape(ku.shape[0], -1, order="F")


def build_covariate_update(problem: PtotrProblem, b: CpTensor, q: int) -> MmProblem:
    """Generic single-row MM problem for ``vec(V_q diag(lambda))``."""
    wq, ku = _covariate_blocks(problem, b, q)
    d = np.concatenate([covariate_design(wq[i], ku).T for i in range(problem.n_obs)], axis=1)
    y = problem.y_rows.reshape(1, -1)
    v_tilde = b.covariate_factors[q - 1] * b.weights
    return MmProblem(y=y, d=d, c_init=v_tilde.reshape(1, -1, order="F"))


def _covariate_rates(v_tilde, wq, ku):
    s = np.einsum("inr,nr->ir", wq, v_tilde)
    return s @ ku.T  # (I, prod M)


def covariate_step(y_rows, wq, ku, v_tilde, floor: float = EPS_MIN, rates=None):
    """One covariate-factor update ``V <- V * (sum_i H_i^T (y_i / rate_i)) / sum_i W_iq``.

    Returns ``(new_v_tilde, n_floored)``.
    """
    if rates is None:
        rates = _covariate_rates(v_tilde, wq, ku)
    z = _ratio(y_rows, rates)
    numer = np.einsum("inr,ir->nr", wq, z @ ku)
    denom = wq.sum(axis=0)
    return _apply_update(v_tilde, numer, denom, floor)


# ---------------------------------------------------------------------------
# driver


def _inner_loop(step, rate_fn, y, x0, tol, max_iter):
    """Run ``step`` from ``x0`` until the relative loglik change drops below ``tol``."""
    x = x0
    rates = rate_fn(x)
    f_prev = poisson_loglik(y, rates)
    floored = 0
    for _ in range(max_iter):
        x, nf = step(x, rates)
        floored += nf
        rates = rate_fn(x)
        f = poisson_loglik(y, rates)
        if abs(f - f_prev) <= tol * abs(f_prev):
            break
        f_prev = f
    return x, floored


def _split_weights(tilde: np.ndarray):
    lam = tilde.sum(axis=0)
    return lam, tilde / lam


def initial_cp(problem: PtotrProblem, rank: int, rng: np.random.Generator) -> CpTensor:
    """Random normalized start with factor entries uniform on ``(0.1, 1)``.

    The weights are rescaled so the total predicted count equals the total
    observed count.
    """
    cov = tuple(rng.uniform(0.1, 1.0, (n, rank)) for n in problem.covariate_dims)
    resp = tuple(rng.uniform(0.1, 1.0, (m, rank)) for m in problem.response_dims)
    c = normalize_cp(CpTensor(np.ones(rank), cov, resp))
    total = problem.responses.sum()
    pred = predict_rates(problem, c).sum()
    scale = total / pred if total > 0 else 1.0
    return CpTensor(c.weights * scale, c.covariate_factors, c.response_factors)


def dne_report(problem: PtotrProblem) -> dict[int, list[int]]:
    """Response-factor rows (1-based) whose total count is zero, keyed by mode."""
    out = {}
    for p in range(1, len(problem.response_dims) + 1):
        axes = tuple(a for a in range(problem.responses.ndim) if a != p)
        totals = problem.responses.sum(axis=axes)
        rows = [int(m) + 1 for m in np.flatnonzero(totals == 0)]
        if rows:
            out[p] = rows
    return out


def _sweep(problem: PtotrProblem, b: CpTensor, cfg: FitConfig):
    """One full pass over all response and covariate blocks."""
    lam = b.weights
    cov = list(b.covariate_factors)
    resp = list(b.response_factors)
    floored = 0
    for p in range(1, len(resp) + 1):
        cur = CpTensor(lam, tuple(cov), tuple(resp))
        yp, w, k = _response_blocks(problem, cur, p)
        tilde, nf = _inner_loop(
            lambda u, r: response_step(yp, w, k, u, rates=r),
            lambda u: _response_rates(u, w, k),
            yp, resp[p - 1] * lam, cfg.inner_tol, cfg.inner_max_iter,
        )
        floored += nf
        lam, resp[p - 1] = _split_weights(tilde)
    y_rows = problem.y_rows
    for q in range(1, len(cov) + 1):
        cur = CpTensor(lam, tuple(cov), tuple(resp))
        wq, ku = _covariate_blocks(problem, cur, q)
        tilde, nf = _inner_loop(
            lambda v, r: covariate_step(y_rows, wq, ku, v, rates=r),
            lambda v: _covariate_rates(v, wq, ku),
            y_rows, cov[q - 1] * lam, cfg.inner_tol, cfg.inner_max_iter,
        )
        floored += nf
        lam, cov[q - 1] = _split_weights(tilde)
    return normalize_cp(CpTensor(lam, tuple(cov), tuple(resp))), floored


SweepCallback = Callable[[int, int, CpTensor], None]


def _fit_one(problem, cfg, restart, callback=None):
    rng = np.random.default_rng([cfg.seed, restart])
    b = initial_cp(problem, cfg.rank, rng)
    ll = loglikelihood(problem, b)
    traj = [ll]
    converged = False
    floored = 0
    sweeps = 0
    for sweep in range(1, cfg.outer_max_sweeps + 1):
        b, nf = _sweep(problem, b, cfg)
        floored += nf
        sweeps = sweep
        ll_new = loglikelihood(problem, b)
        traj.append(ll_new)
        if callback is not None:
            callback(restart, sweep, b)
        if abs(ll_new - ll) <= cfg.outer_tol * abs(ll):
            converged = True
            ll = ll_new
            break
        ll = ll_new
    return b, ll, traj, converged, sweeps, floored


def fit(
    problem: PtotrProblem,
    cfg: FitConfig,
    callback: SweepCallback | None = None,
    threads: int = 1,
) -> FitResult:
    """Multi-start alternating MLE; returns the restart with the largest loglikelihood.

    ``callback(restart, sweep, coefficient)`` is invoked after every sweep of
    every restart; passing a callback forces sequential restarts.
    """
    if problem.responses.sum() == 0:
        raise MleNotExistError(
            "all responses are zero: covariate-factor MLE does not exist, refusing to fit"
        )
    dne = dne_report(problem)
    for p, rows in dne.items():
        logger.warning("response mode %d rows %s have zero total count; MLE does not exist", p, rows)
    extents = problem.covariate_dims + problem.response_dims
    if cfg.rank > max(extents):
        warnings.warn(f"rank {cfg.rank} exceeds every mode extent {extents}", stacklevel=2)

    if threads > 1 and callback is None:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(lambda r: _fit_one(problem, cfg, r), range(cfg.restarts)))
    else:
        runs = [_fit_one(problem, cfg, r, callback) for r in range(cfg.restarts)]

    logliks = [run[1] for run in runs]
    best = int(np.argmax(logliks))  # first maximum wins ties
    b, ll, traj, converged, sweeps, floored = runs[best]
    k = parameter_count(problem.covariate_dims, problem.response_dims, cfg.rank,
                        cfg.param_count_convention)
    n = problem.n_obs * int(np.prod(problem.response_dims))
    return FitResult(
        coefficient=b,
        loglik=ll,
        loglik_trajectory=traj,
        bic=bic(ll, k, n),
        param_count=k,
        dne_warnings=dne,
        restart_logliks=logliks,
        restart_index=best,
        converged=converged,
        sweeps=sweeps,
        floored=floored,
    )


def bic(loglik: float, param_count: int, n_obs: float) -> float:
    if n_obs < 1:
        raise ValueError("n_obs must be >= 1")
    return param_count * math.log(n_obs) - 2.0 * loglik


def parameter_count(
    covariate_dims: Sequence[int],
    response_dims: Sequence[int],
    rank: int,
    convention: str = "raw",
) -> int:
    """Free parameters of a rank-``rank`` CP coefficient.

    ``raw`` counts every factor entry, ``R (sum N_q + sum M_p)``.
    ``constrained`` drops one entry per factor column for the unit-sum
    constraint; the weights are not counted separately, which matches the
    reported 63,168 parameters for a rank-84 fit of a 256x256x240x4 image.
    """
    total = sum(covariate_dims) + sum(response_dims)
    if convention == "raw":
        return rank * total
    if convention == "constrained":
        n_factors = len(covariate_dims) + len(response_dims)
        return rank * (total - n_factors)
    raise ValueError(f"unknown convention {convention!r}")

"""Single change-point detection in count-tensor series via grouped Poisson ANOVA.

With indicator covariates the model only sees group sums, so a fit for a
given split ``tau`` runs on ``G`` aggregated response tensors ``S_g`` with
group sizes ``n_g``. Many such fits (one per candidate split and restart)
are run together on a leading batch axis; converged members are frozen.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..estimator import FitConfig, FitResult, PtotrProblem, bic, initial_cp, parameter_count
from ..exceptions import MleNotExistError
from ..mm import EPS_MIN
from ..tensor import CpTensor, normalize_cp

__all__ = [
    "ChangePointResult",
    "changepoint_scan",
    "fit_indicator_model",
    "group_sums",
    "grouped_response_step",
    "grouped_covariate_step",
    "batched_khatri_rao",
    "argmax_smallest",
]


def batched_khatri_rao(mats: Sequence[np.ndarray]) -> np.ndarray:
    """Khatri-Rao product of ``(B, M_s, R)`` stacks, factors in decreasing mode order.

    ``mats`` is given in increasing mode order; the first mode's row index
    varies fastest in the result, matching column-major matricization.
    """
    B, _, R = mats[0].shape
    out = np.ones((B, 1, R))
    for m in mats[::-1]:
        out = (out[:, :, None, :] * m[:, None, :, :]).reshape(B, -1, R)
    return out


def group_sums(series: np.ndarray, labels: Sequence[int], n_groups: int):
    """Per-group sums and sizes for a ``(T, M..)`` series with 0-based labels."""
    labels = np.asarray(labels)
    sums = np.stack([series[labels == g].sum(axis=0) for g in range(n_groups)])
    counts = np.array([(labels == g).sum() for g in range(n_groups)], dtype=float)
    return sums, counts


def _floor(new):
    low = new < EPS_MIN
    return np.where(low, EPS_MIN, new), int(low.sum())


# Every factor entry is floored at EPS_MIN and the weights are positive, so
# grouped rates are strictly positive and no zero-rate masking is needed.
def _ratio(y, rates):
    return y / rates


def _loglik(y, rates, counts, rate_sums):
    """Per-member ``sum y log r - sum_g n_g sum(r_g)``; rows of ``y`` index the batch."""
    logs = (y * np.log(rates)).reshape(len(y), -1).sum(axis=1)
    return logs - (counts * rate_sums).sum(axis=1)


def _response_rates(u_tilde, v, k):
    # rows (g, m) of (B, G*M_p, R) against k^T (B, R, C) -> (B, G, M_p, C)
    B, G, R = v.shape
    scaled = (u_tilde[:, None] * v[:, :, None, :]).reshape(B, -1, R)
    return (scaled @ np.swapaxes(k, 1, 2)).reshape(B, G, u_tilde.shape[1], -1)


def grouped_response_step(yp, counts, v, u_tilde, k, rates=None):
    """One MM step for response factor ``U_p`` of a grouped model.

    Parameters
    ----------
    yp : (B, G, M_p, C) mode-p matricized group sums.
    counts : (B, G) group sizes.
    v : (B, G, R) covariate factor with unit column sums.
    u_tilde : (B, M_p, R) factor with the weights absorbed.
    k : (B, C, R) Khatri-Rao product of the other response factors.

    Returns the updated factor and the number of floored entries.
    """
    if rates is None:
        rates = _response_rates(u_tilde, v, k)
    B, G, M, C = yp.shape
    back = (_ratio(yp, rates).reshape(B, G * M, C) @ k).reshape(B, G, M, -1)
    numer = np.einsum("bgmr,bgr->bmr", back, v)
    w = np.einsum("bg,bgr->br", counts, v)
    return _floor(u_tilde * numer / w[:, None, :])


def grouped_covariate_step(yp, counts, v_tilde, u, k, rates=None):
    """One MM step for the group-level factor.

    The group sums enter through any response mode ``p``: ``yp`` is the
    ``(B, G, M_p, C)`` matricization, ``u`` the ``(B, M_p, R)`` factor of that
    mode and ``k`` the Khatri-Rao product of the others (all unit column
    sums). ``v_tilde`` is ``(B, G, R)`` with the weights absorbed.
    """
    if rates is None:
        rates = _response_rates(u, v_tilde, k)
    B, G, M, C = yp.shape
    back = (_ratio(yp, rates).reshape(B, G * M, C) @ k).reshape(B, G, M, -1)
    numer = np.einsum("bgmr,bmr->bgr", back, u)
    return _floor(v_tilde * numer / counts[:, :, None])


@dataclass
class _Batch:
    lam: np.ndarray  # (B, R)
    v: np.ndarray  # (B, G, R), unit column sums
    u: list  # P arrays (B, M_p, R), unit column sums

    def take(self, idx):
        return _Batch(self.lam[idx], self.v[idx], [f[idx] for f in self.u])

    def put(self, idx, other):
        self.lam[idx] = other.lam
        self.v[idx] = other.v
        for f, g in zip(self.u, other.u):
            f[idx] = g


def _split(tilde, axis):
    lam = tilde.sum(axis=axis)
    return lam, tilde / np.expand_dims(lam, axis)


def _normalize(st: _Batch) -> _Batch:
    lam = st.lam.copy()
    v_s = st.v.sum(axis=1)
    lam *= v_s
    v = st.v / v_s[:, None, :]
    u = []
    for f in st.u:
        s = f.sum(axis=1)
        lam *= s
        u.append(f / s[:, None, :])
    order = np.argsort(-lam, axis=1, kind="stable")
    take = lambda a: np.take_along_axis(a, order[:, None, :], axis=2)
    return _Batch(np.take_along_axis(lam, order, axis=1), take(v), [take(f) for f in u])


def _others_kr(u, p, batch, rank):
    others = [u[s] for s in range(len(u)) if s != p]
    return batched_khatri_rao(others) if others else np.ones((batch, 1, rank))


def _full_loglik(st: _Batch, y_last, counts):
    k = _others_kr(st.u, len(st.u) - 1, *st.lam.shape)
    rates = _response_rates(st.u[-1], st.v * st.lam[:, None, :], k)
    return _loglik(y_last, rates, counts, _rate_sums(rates))


def _inner(step, rate_fn, y, counts, x0, tol, max_iter):
    """Batched inner MM loop; each member stops on its own relative-change test."""
    x = x0.copy()
    rates = rate_fn(x, slice(None))
    if max_iter == 1:
        new, _ = step(slice(None), x, rates)
        return new, (new <= EPS_MIN).reshape(len(x), -1).sum(axis=1)
    f_prev = _loglik(y, rates, counts, _rate_sums(rates))
    active = np.arange(len(x))
    floored = np.zeros(len(x), dtype=int)
    for _ in range(max_iter):
        if active.size == 0:
            break
        new, _ = step(active, x[active], rates)
        floored[active] += (new <= EPS_MIN).reshape(len(active), -1).sum(axis=1)
        x[active] = new
        rates = rate_fn(x[active], active)
        f = _loglik(y[active], rates, counts[active], _rate_sums(rates))
        keep = np.abs(f - f_prev) > tol * np.abs(f_prev)
        active, rates, f_prev = active[keep], rates[keep], f[keep]
    return x, floored


def _rate_sums(rates):
    return rates.reshape(rates.shape[0], rates.shape[1], -1).sum(axis=2)


def _sweep(st: _Batch, yps, counts, cfg: FitConfig):
    lam, v, u = st.lam, st.v, list(st.u)
    floored = np.zeros(len(lam), dtype=int)
    P = len(u)
    for p in range(P):
        k = _others_kr(u, p, *lam.shape)
        yp = yps[p]

        def step(idx, x, rates, yp=yp, k=k):
            return grouped_response_step(yp[idx], counts[idx], v[idx], x, k[idx], rates)

        def rate_fn(x, idx, k=k):
            return _response_rates(x, v[idx], k[idx])

        tilde, nf = _inner(step, rate_fn, yp, counts, u[p] * lam[:, None, :],
                           cfg.inner_tol, cfg.inner_max_iter)
        floored += nf
        lam, u[p] = _split(tilde, 1)
    # the group factor sees the data through the last response mode
    y_last, u_last = yps[-1], u[-1]

    def vstep(idx, x, rates):
        return grouped_covariate_step(y_last[idx], counts[idx], x, u_last[idx], k[idx], rates)

    def vrate(x, idx):
        return _response_rates(u_last[idx], x, k[idx])

    tilde, nf = _inner(vstep, vrate, y_last, counts, v * lam[:, None, :],
                       cfg.inner_tol, cfg.inner_max_iter)
    floored += nf
    # normalization leaves the rate tensor unchanged, so the sweep's final
    # loglikelihood can be taken from the unnormalized factors
    rates = vrate(tilde, slice(None))
    ll = _loglik(y_last, rates, counts, _rate_sums(rates))
    lam, v = _split(tilde, 1)
    return _normalize(_Batch(lam, v, u)), floored, ll


@dataclass
class _BatchFit:
    states: _Batch
    logliks: np.ndarray
    trajectories: list
    converged: np.ndarray
    sweeps: np.ndarray
    floored: np.ndarray


def _fit_batch(sums, counts, cfg: FitConfig, inits: Sequence[CpTensor]) -> _BatchFit:
    """Alternating block fits for every member of the batch."""
    B = len(sums)
    resp_dims = sums.shape[2:]
    # mode-p matricizations of each group sum, batched over (B, G)
    yps = []
    for p in range(len(resp_dims)):
        moved = np.moveaxis(sums, 2 + p, 2)
        yps.append(np.ascontiguousarray(moved.reshape(B, sums.shape[1], resp_dims[p], -1, order="F")))
    st = _Batch(
        np.stack([c.weights for c in inits]),
        np.stack([c.covariate_factors[0] for c in inits]),
        [np.stack([c.response_factors[p] for c in inits]) for p in range(len(resp_dims))],
    )
    ll = _full_loglik(st, yps[-1], counts)
    history = np.full((cfg.outer_max_sweeps + 1, B), np.nan)
    history[0] = ll
    converged = np.zeros(B, dtype=bool)
    sweeps = np.zeros(B, dtype=int)
    floored = np.zeros(B, dtype=int)
    active = np.arange(B)
    data = (yps, counts)
    for sweep in range(1, cfg.outer_max_sweeps + 1):
        if active.size == 0:
            break
        sub, nf, new = _sweep(st.take(active), *data, cfg)
        st.put(active, sub)
        floored[active] += nf
        sweeps[active] = sweep
        history[sweep, active] = new
        done = np.abs(new - ll[active]) <= cfg.outer_tol * np.abs(ll[active])
        ll[active] = new
        converged[active[done]] = True
        if done.any():
            active = active[~done]
            data = ([y[active] for y in yps], counts[active])
    trajectories = [history[: sweeps[i] + 1, i].tolist() for i in range(B)]
    return _BatchFit(st, ll, trajectories, converged, sweeps, floored)


def _member_cp(st: _Batch, i: int) -> CpTensor:
    return CpTensor(st.lam[i].copy(), (st.v[i].copy(),), tuple(f[i].copy() for f in st.u))


def _labels(T: int, tau: int):
    return (np.arange(1, T + 1) > tau).astype(int)


def _inits(sums, counts, cfg: FitConfig):
    problem = PtotrProblem(sums, np.diag(counts))
    return [initial_cp(problem, cfg.rank, np.random.default_rng([cfg.seed, r]))
            for r in range(cfg.restarts)]


def _collect(batch: _BatchFit, members, series_shape, cfg: FitConfig, n_groups: int) -> FitResult:
    lls = [float(batch.logliks[i]) for i in members]
    best = int(np.argmax(lls))
    i = members[best]
    resp_dims = series_shape[1:]
    k = parameter_count((n_groups,), resp_dims, cfg.rank, cfg.param_count_convention)
    n_obs = float(np.prod(series_shape))
    return FitResult(
        coefficient=normalize_cp(_member_cp(batch.states, i)),
        loglik=lls[best],
        loglik_trajectory=batch.trajectories[i],
        bic=bic(lls[best], k, n_obs),
        param_count=k,
        dne_warnings={},
        restart_logliks=lls,
        restart_index=best,
        converged=bool(batch.converged[i]),
        sweeps=int(batch.sweeps[i]),
        floored=int(batch.floored[i]),
    )


def fit_indicator_model(series, labels, n_groups: int, cfg: FitConfig) -> FitResult:
    """Fit the grouped model with covariate ``e_g`` for observations labelled ``g``.

    Equivalent to :func:`ptotr.estimator.fit` on the problem with one-hot
    covariates; the loglikelihood reported is the per-observation one.
    """
    series = np.asarray(series, dtype=float)
    sums, counts = group_sums(series, labels, n_groups)
    if np.any(counts == 0):
        raise ValueError("every group needs at least one observation")
    inits = _inits(sums, counts, cfg)
    R = cfg.restarts
    batch = _fit_batch(np.repeat(sums[None], R, axis=0), np.repeat(counts[None], R, axis=0),
                       cfg, inits)
    return _collect(batch, list(range(R)), series.shape, cfg, n_groups)


def argmax_smallest(values: dict) -> int:
    """Key with the largest value; the smallest key wins ties."""
    best = max(values.values())
    return min(k for k, v in values.items() if v == best)


@dataclass(frozen=True)
class ChangePointResult:
    """Outcome of a change-point scan.

    ``tau_hat`` maximizes ``loglik_by_tau`` (smallest ``tau`` on ties) and
    ``lambda_by_tau[tau] = 2 * (loglik_by_tau[tau] - null_loglik)``.
    """

    tau_hat: int
    loglik_by_tau: dict
    null_loglik: float
    lambda_by_tau: dict
    fits: dict
    null_fit: FitResult


def changepoint_scan(series, cfg: FitConfig, tau_candidates: Sequence[int] | None = None) -> ChangePointResult:
    """Profile the likelihood over candidate change points.

    For each ``tau`` the series is split into ``t <= tau`` and ``t > tau``
    and a two-group model of rank ``cfg.rank`` is fitted; the no-change
    model uses the same rank. All candidate fits and restarts run as one
    batch.
    """
    series = np.asarray(series, dtype=float)
    T = series.shape[0]
    if T < 2:
        raise ValueError("need at least two time points")
    if tau_candidates is None:
        tau_candidates = range(1, T)
    taus = [int(t) for t in tau_candidates]
    if not taus:
        raise ValueError("empty candidate set")
    if any(not 1 <= t <= T - 1 for t in taus):
        raise ValueError(f"candidates must lie in 1..{T - 1}")
    if len(set(taus)) != len(taus):
        raise ValueError("duplicate candidates")
    if not np.any(series > 0):
        raise MleNotExistError("all-zero series: maximum likelihood estimate does not exist")

    R = cfg.restarts
    sums_all, counts_all, inits = [], [], []
    for tau in taus:
        sums, counts = group_sums(series, _labels(T, tau), 2)
        sums_all.append(np.repeat(sums[None], R, axis=0))
        counts_all.append(np.repeat(counts[None], R, axis=0))
        inits.extend(_inits(sums, counts, cfg))
    batch = _fit_batch(np.concatenate(sums_all), np.concatenate(counts_all), cfg, inits)
    fits = {tau: _collect(batch, list(range(j * R, (j + 1) * R)), series.shape, cfg, 2)
            for j, tau in enumerate(taus)}

    null_fit = fit_indicator_model(series, np.zeros(T, dtype=int), 1, cfg)
    loglik_by_tau = {tau: fits[tau].loglik for tau in taus}
    tau_hat = argmax_smallest(loglik_by_tau)
    lam = {t: 2.0 * (v - null_fit.loglik) for t, v in loglik_by_tau.items()}
    return ChangePointResult(tau_hat, loglik_by_tau, null_fit.loglik, lam, fits, null_fit)

"""Covariate construction for Poisson autoregressive models of count tensors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..estimator import PtotrProblem

__all__ = ["ArSpec", "ar_covariate", "build_ar_covariates"]


@dataclass(frozen=True)
class ArSpec:
    """How ``X_t`` is assembled from past responses.

    Slab mode (``trend_degree is None``) stacks an optional all-ones slab
    followed by one slab per lag block along a new trailing mode; a block
    contributes the average of ``Y_{t-f}`` over its lags. Trend mode places
    ``Y_{t-1}`` in the leading corner of a tensor of extent ``M_q + F + 1``
    per mode and ``t^f`` at diagonal position ``M_q + f + 1``.
    """

    lag_blocks: tuple[tuple[int, ...], ...] = ((1,),)
    include_intercept: bool = True
    trend_degree: int | None = None

    def __post_init__(self):
        blocks = tuple(tuple(int(f) for f in b) for b in self.lag_blocks)
        if self.trend_degree is not None:
            if self.trend_degree < 0:
                raise ValueError("trend degree must be >= 0")
            blocks = ((1,),)
        if not blocks or any(len(b) == 0 or min(b) < 1 for b in blocks):
            raise ValueError("lag blocks must be non-empty sets of positive lags")
        object.__setattr__(self, "lag_blocks", blocks)

    @property
    def max_lag(self) -> int:
        return max(max(b) for b in self.lag_blocks)

    @property
    def n_slabs(self) -> int:
        return len(self.lag_blocks) + int(self.include_intercept)

    def covariate_dims(self, response_dims: Sequence[int]) -> tuple[int, ...]:
        if self.trend_degree is not None:
            return tuple(int(m) + self.trend_degree + 1 for m in response_dims)
        return tuple(int(m) for m in response_dims) + (self.n_slabs,)


ICEWS_SPEC = ArSpec(lag_blocks=((1,), (2, 3, 4, 5)), include_intercept=True)


def ar_covariate(history: Sequence[np.ndarray], t: int, spec: ArSpec) -> np.ndarray:
    """Covariate ``X_t`` for 1-based time ``t`` from ``history[0] = Y_1, ...``."""
    if t - spec.max_lag < 1:
        raise ValueError(f"t={t} needs {spec.max_lag} earlier observations")
    prev = np.asarray(history[t - 2], dtype=float)
    if spec.trend_degree is not None:
        F = spec.trend_degree
        x = np.zeros(spec.covariate_dims(prev.shape))
        x[tuple(slice(0, m) for m in prev.shape)] = prev
        for f in range(F + 1):
            x[tuple(m + f for m in prev.shape)] = float(t) ** f
        return x
    slabs = []
    if spec.include_intercept:
        slabs.append(np.ones(prev.shape))
    for block in spec.lag_blocks:
        slabs.append(sum(np.asarray(history[t - 1 - f], dtype=float) for f in block) / len(block))
    return np.stack(slabs, axis=-1)


def build_ar_covariates(history, spec: ArSpec):
    """All ``(X_t, Y_t)`` pairs for ``t = max_lag + 1 .. T``.

    Returns ``(covariates, responses, times)`` with the pairs stacked along a
    leading axis and ``times`` holding the 1-based ``t`` of each pair.
    """
    history = [np.asarray(h, dtype=float) for h in history]
    T = len(history)
    if T <= spec.max_lag:
        raise ValueError(f"history of length {T} is too short for max lag {spec.max_lag}")
    times = np.arange(spec.max_lag + 1, T + 1)
    xs = np.stack([ar_covariate(history, int(t), spec) for t in times])
    ys = np.stack([history[t - 1] for t in times])
    return xs, ys, times


def ar_problem(history, spec: ArSpec) -> PtotrProblem:
    xs, ys, _ = build_ar_covariates(history, spec)
    return PtotrProblem(ys, xs)

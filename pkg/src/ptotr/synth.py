"""Seeded generators for the synthetic experiments.

All randomness flows through ``numpy.random.Generator`` objects backed by
PCG64. :func:`make_rng` derives independent streams from a master seed plus
integer or string tags, so generators running in parallel never share state.
"""

from __future__ import annotations

import zlib
from typing import Sequence

import numpy as np

from .exceptions import CorruptInputError, DimensionError
from .tensor import CpTensor, partial_contract

__all__ = [
    "make_rng",
    "sample_poisson_tensor",
    "make_changepoint_series",
    "make_phantom",
    "make_pet_truth",
    "make_ar_series",
    "SHEPP_LOGAN_ELLIPSES",
]


def make_rng(seed: int, *tags) -> np.random.Generator:
    """PCG64 generator seeded from ``seed`` and a tuple of stream tags."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            entropy.append(zlib.crc32(tag.encode()))
        else:
            entropy.append(int(tag))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def sample_poisson_tensor(rates, rng: np.random.Generator) -> np.ndarray:
    """Independent Poisson counts with the given (strictly positive) rates."""
    rates = np.asarray(rates, dtype=float)
    if np.any(~(rates > 0)):
        raise CorruptInputError("Poisson rates must be strictly positive")
    return rng.poisson(rates).astype(float)


def make_changepoint_series(
    m1: int,
    m2: int,
    m3: int,
    T: int,
    tau: int,
    a: float,
    rng: np.random.Generator,
    topic_index: int = 1,
) -> np.ndarray:
    """Count tensors ``(T, m1, m2, m3)`` with unit rate and one elevated topic slab.

    Topic ``topic_index`` (1-based, third mode) has rate ``a`` for every
    ``t > tau``; ``tau = 0`` means no change at all.
    """
    if not 1 <= topic_index <= m3:
        raise DimensionError(f"topic index {topic_index} outside 1..{m3}")
    if not 0 <= tau <= T - 1:
        raise ValueError(f"tau must lie in 0..{T - 1}")
    if a <= 0:
        raise ValueError("a must be positive")
    rates = np.ones((T, m1, m2, m3))
    rates[tau:, :, :, topic_index - 1] = a
    return sample_poisson_tensor(rates, rng)


# Modified Shepp-Logan ellipses: (intensity, semi-axis a, semi-axis b, x0, y0, angle in degrees)
SHEPP_LOGAN_ELLIPSES = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)


def make_phantom(n1: int, n2: int, kind: str = "shepp_logan_like", floor: float = 0.05) -> np.ndarray:
    """Strictly positive 2-D test image of shape ``(n1, n2)``.

    ``shepp_logan_like`` sums :data:`SHEPP_LOGAN_ELLIPSES` on ``[-1, 1]^2``;
    ``blocks`` is a few constant rectangles; ``uniform`` is all ones. Every
    kind is offset by ``floor``.
    """
    if floor <= 0:
        raise ValueError("floor must be positive")
    if kind == "uniform":
        return np.full((n1, n2), 1.0 + floor)
    if kind == "blocks":
        img = np.zeros((n1, n2))
        img[n1 // 8 : 7 * n1 // 8, n2 // 8 : 7 * n2 // 8] = 0.5
        img[n1 // 4 : n1 // 2, n2 // 4 : n2 // 2] = 1.0
        img[5 * n1 // 8 : 3 * n1 // 4, n2 // 2 : 3 * n2 // 4] = 0.8
        return img + floor
    if kind != "shepp_logan_like":
        raise ValueError(f"unknown phantom kind {kind!r}")
    y = np.linspace(1, -1, n1)[:, None]
    x = np.linspace(-1, 1, n2)[None, :]
    img = np.zeros((n1, n2))
    for val, ax, bx, x0, y0, deg in SHEPP_LOGAN_ELLIPSES:
        th = np.deg2rad(deg)
        xr = (x - x0) * np.cos(th) + (y - y0) * np.sin(th)
        yr = -(x - x0) * np.sin(th) + (y - y0) * np.cos(th)
        img = img + val * ((xr / ax) ** 2 + (yr / bx) ** 2 <= 1.0)
    return np.clip(img, 0.0, None) + floor


def make_pet_truth(
    n1: int,
    n2: int,
    response_dims: Sequence[int] = (2, 2),
    intensity: float = 1.0,
    floor: float = 0.05,
) -> np.ndarray:
    """Multi-frame image ``(n1, n2, *response_dims)`` built from two spatial patterns.

    Frame ``m`` is ``intensity * (phantom * g_m + blocks * h_m)`` with smooth
    positive frame profiles ``g`` and ``h``, so the truth has low CP rank in
    the frame modes but a detailed spatial structure.
    """
    response_dims = tuple(int(m) for m in response_dims)
    phantom = make_phantom(n1, n2, "shepp_logan_like", floor)
    blocks = make_phantom(n1, n2, "blocks", floor)
    n_frames = int(np.prod(response_dims))
    s = np.linspace(0.0, 1.0, n_frames)
    g = (1.0 + 0.5 * s).reshape(response_dims, order="F")
    h = (0.2 + 0.6 * s[::-1]).reshape(response_dims, order="F")
    truth = np.multiply.outer(phantom, g) + np.multiply.outer(blocks, h)
    return intensity * truth


def make_ar_series(
    b_true: CpTensor,
    spec,
    T: int,
    burn_in: int,
    rng: np.random.Generator,
    rate_cap: float = 1e6,
) -> np.ndarray:
    """Simulate ``Y_t ~ Poisson(<X_t | B>)`` with ``X_t`` built from the past by ``spec``.

    The pre-sample history is all ones. Returns ``(T, M_1..M_P)`` after
    dropping ``burn_in`` leading steps. Raises ``OverflowError`` if a rate
    exceeds ``rate_cap``.
    """
    from .applications.ar import ar_covariate

    dims = b_true.response_dims
    history = [np.ones(dims) for _ in range(spec.max_lag)]
    for t in range(spec.max_lag + 1, spec.max_lag + burn_in + T + 1):
        x = ar_covariate(history, t, spec)
        rates = partial_contract(x, b_true)
        if np.max(rates) > rate_cap:
            raise OverflowError(f"AR rates exceeded {rate_cap:g} at step {t}; process is explosive")
        history.append(sample_poisson_tensor(rates, rng))
    return np.stack(history[spec.max_lag + burn_in :])

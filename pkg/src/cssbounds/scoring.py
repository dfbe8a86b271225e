"""Logarithmic scoring and credential sampling.

A wallet with stake ``alpha`` whose credential hashes to ``x`` in [0, 1]
receives the score ``-ln(x) / alpha``. With ``x`` uniform this is
exponentially distributed with rate ``alpha``, so the engine never touches
hashes: it samples scores directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class StakeSplit:
    """Stakes of several wallets controlled by one party."""

    stakes: tuple[float, ...]

    def __post_init__(self):
        if any(s < 0 for s in self.stakes):
            raise ValueError("stakes must be non-negative")

    @property
    def total(self) -> float:
        return float(sum(self.stakes))


def log_score(x: float, alpha: float) -> float:
    """Score of a credential ``x`` held by a wallet of stake ``alpha``.

    Zero stake never wins (score ``inf``). ``x == 0`` maps to 0 as written in
    the piecewise definition even though the limit is ``inf``; the case has
    probability zero under sampling.
    """
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    if alpha == 0:
        return math.inf
    if x == 0:
        return 0.0
    return -math.log(x) / alpha


def uniform_open0(rng: np.random.Generator, size=None):
    """Uniform draws on (0, 1]."""
    return 1.0 - rng.random(size)


def exponential_from_uniform(u, rate: float):
    """Inverse-CDF transform of ``u`` in (0, 1] to an Exp(rate) variate."""
    if rate <= 0:
        raise ValueError(f"rate must be positive, got {rate}")
    return -np.log(u) / rate


def sample_exponential(rate: float, rng: np.random.Generator, size=None):
    if rate <= 0:
        raise ValueError(f"rate must be positive, got {rate}")
    out = exponential_from_uniform(uniform_open0(rng, size), rate)
    return float(out) if size is None else out


def order_statistics_from_increments(increments) -> np.ndarray:
    """Cumulative sum along the last axis: Y_1 = X_1, Y_{i+1} = Y_i + X_{i+1}."""
    return np.cumsum(np.asarray(increments, dtype=float), axis=-1)


def sample_order_statistics(
    alpha: float, k: int, rng: np.random.Generator, size: int | None = None
) -> np.ndarray:
    """The ``k`` smallest scores among wallets holding total stake ``alpha``.

    Returns shape ``(k,)`` or ``(size, k)``, ascending along the last axis.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    shape = (k,) if size is None else (size, k)
    return order_statistics_from_increments(sample_exponential(alpha, rng, shape))


def survival(s, alpha: float):
    """Pr(score >= s) for stake ``alpha``, i.e. ``exp(-alpha * s)``."""
    return np.exp(-alpha * np.asarray(s, dtype=float))


def min_split_sample(
    split: StakeSplit | Sequence[float], rng: np.random.Generator, size: int | None = None
):
    """Smallest score over independently hashed wallets of a stake split.

    Returns the score, or a ``(score, argmin)`` pair of arrays when ``size``
    is given. All-zero stakes give ``inf``.
    """
    stakes = np.asarray(split.stakes if isinstance(split, StakeSplit) else split, dtype=float)
    if np.any(stakes < 0):
        raise ValueError("stakes must be non-negative")
    n = 1 if size is None else size
    u = uniform_open0(rng, (n, stakes.size))
    with np.errstate(divide="ignore"):
        scores = np.where(stakes > 0, -np.log(u) / np.where(stakes > 0, stakes, 1.0), np.inf)
    winner = np.argmin(scores, axis=1)
    best = scores[np.arange(n), winner]
    if size is None:
        return float(best[0])
    return best, winner

"""Exact bounds for the omniscient adversary.

The omniscient adversary's choice tree is a branching process; ``p_t`` is the
probability that it survives past level ``t``. Its expected height is
``E[tau] = sum_t p_t`` and its reward is ``1 - 1/E[tau]``.

For ``kappa < alpha`` the survival probability does not vanish. The greedy
variant (never lets the honest observed player win) survives iff
``alpha > 1/2``, which places the restricted omniscient threshold in
``[kappa, 1/2]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

OMNISCIENT_ALPHA_MAX = 0.38


def kappa() -> float:
    """Smaller root of ``1 - 3x + x^2``."""
    return (3.0 - math.sqrt(5.0)) / 2.0


def second_level_survival(alpha: float) -> float:
    """``p_2 = alpha^2 (2 - 2 alpha + alpha^2) / (1 - alpha + alpha^2)``."""
    return alpha**2 * (2 - 2 * alpha + alpha**2) / (1 - alpha + alpha**2)


def branching_ratio(alpha: float) -> float:
    """Per-level contraction ``alpha (2 - alpha) / (1 - alpha)`` of the tail."""
    return alpha * (2 - alpha) / (1 - alpha)


def survival_tail_bound(alpha: float, t: int) -> float:
    """Upper bound on ``Pr(tau > t)`` for ``t >= 2``."""
    if t < 2:
        raise ValueError("tail bound holds for t >= 2")
    return second_level_survival(alpha) * branching_ratio(alpha) ** (t - 2)


@dataclass
class OmniscientSeries:
    alpha: float
    p: np.ndarray
    partial_sum: float
    tail_bound: float
    unbounded: bool = False

    @property
    def t_max(self) -> int:
        return len(self.p) - 1


@dataclass
class OmniscientBound:
    alpha: float
    expected_tau_lower: float
    expected_tau_upper: float
    reward_lower: float
    reward_upper: float
    additive_gap: float
    series: OmniscientSeries = field(repr=False, default=None)

    @property
    def marginal_upper(self) -> float:
        return self.reward_upper - self.alpha


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def extinction_recursion(alpha: float, t_max: int) -> OmniscientSeries:
    """Survival probabilities ``p_0..p_{t_max}`` of the omniscient choice tree.

    ``tail_bound`` bounds ``sum_{t > t_max} p_t``; it is ``inf`` when the
    geometric ratio is at least one, and ``unbounded`` flags
    ``alpha > kappa`` where ``E[tau]`` diverges.
    """
    _check_alpha(alpha)
    if t_max < 2:
        raise ValueError("t_max must be at least 2")
    p = np.empty(t_max + 1)
    p[0] = 1.0
    for t in range(1, t_max + 1):
        q = p[t - 1]
        p[t] = (alpha * (2 - alpha) * q - alpha * (1 - alpha) * q * q) / ((1 - alpha) + alpha * q)
    ratio = branching_ratio(alpha)
    if ratio < 1:
        tail = second_level_survival(alpha) * ratio ** (t_max - 1) / (1 - ratio)
    else:
        tail = math.inf
    return OmniscientSeries(
        alpha=alpha,
        p=p,
        partial_sum=float(math.fsum(p)),
        tail_bound=tail,
        unbounded=alpha > kappa(),
    )


def omniscient_reward_bound(
    alpha: float, delta: float = 1e-7, t_delta: int = 3000
) -> OmniscientBound:
    """Reward bracket for the omniscient adversary, tight up to ``delta`` in E[tau]."""
    if not 0.0 < alpha <= OMNISCIENT_ALPHA_MAX:
        raise ValueError(f"alpha must lie in (0, {OMNISCIENT_ALPHA_MAX}], got {alpha}")
    if delta <= 0:
        raise ValueError("delta must be positive")
    series = extinction_recursion(alpha, t_delta)
    lo = series.partial_sum
    hi = lo + delta
    return OmniscientBound(
        alpha=alpha,
        expected_tau_lower=lo,
        expected_tau_upper=hi,
        reward_lower=1.0 - 1.0 / lo,
        reward_upper=1.0 - 1.0 / hi,
        additive_gap=delta,
        series=series,
    )


def closed_form_bounds(alpha: float) -> tuple[float, float, float]:
    """Closed-form ``(E[tau] bound, reward bound, prior-work reward bound)``."""
    if not 0.0 < alpha < kappa():
        raise ValueError(f"alpha must lie in (0, kappa), got {alpha}")
    a = alpha
    denom = 1 - 3 * a + 3 * a**2 - 3 * a**3
    tau_ub = denom / ((1 - 3 * a + a**2) * (1 - a + a**2))
    reward_ub = a * (1 - 2 * a + a**2 - a**3) / denom
    fhwy_reward_ub = a * (2 - a) / (1 - a)
    return tau_ub, reward_ub, fhwy_reward_ub


def greedy_extinction_recursion(alpha: float, t_max: int) -> OmniscientSeries:
    """Survival probabilities of the greedy omniscient tree.

    Converges to ``(2 alpha - 1) / alpha`` for ``alpha > 1/2`` and to 0 otherwise.
    """
    _check_alpha(alpha)
    p = np.empty(t_max + 1)
    p[0] = 1.0
    for t in range(1, t_max + 1):
        q = p[t - 1]
        p[t] = alpha * q / ((1 - alpha) + alpha * q)
    # below one half the map is a contraction with ratio alpha / (1 - alpha)
    ratio = alpha / (1 - alpha)
    tail = p[-1] * ratio / (1 - ratio) if ratio < 1 else math.inf
    return OmniscientSeries(
        alpha=alpha,
        p=p,
        partial_sum=float(math.fsum(p)),
        tail_bound=tail,
        unbounded=alpha > 0.5,
    )


def omniscient_curves(alphas, delta: float = 1e-7, t_delta: int = 3000) -> list[dict]:
    """Marginal-reward curves (reward minus stake) for the omniscient bounds."""
    rows = []
    for a in alphas:
        tight = omniscient_reward_bound(a, delta, t_delta).reward_upper - a
        _, closed, fhwy = closed_form_bounds(a)
        rows.append(
            {
                "alpha": a,
                "tight_upper": tight,
                "closed_form_upper": closed - a,
                "fhwy_upper": fhwy - a,
            }
        )
    return rows

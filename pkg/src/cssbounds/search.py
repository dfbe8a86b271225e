"""Entry-fee bisection and composition of the final reward bounds.

The linearized game's optimal value is decreasing in the entry fee ``lam``
and crosses zero exactly at the optimal round-win rate. Bisecting the
upper-envelope mean against ``+zeta`` gives ``lambda_hi``; bisecting the
lower-envelope mean against ``-zeta`` gives ``lambda_lo``. Every probe reuses
the same seed, so probes differ only through ``lam``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .engine import (
    ENGINE_ALPHA_MAX,
    SimParams,
    truncated_simulate,
    upper_failure_probability,
)
from .omniscient import second_level_survival, branching_ratio

log = logging.getLogger(__name__)

DEFAULT_ZETA = 5e-4
MAX_ITERATIONS = 20


class SearchError(RuntimeError):
    """Bisection could not establish the required sign pattern."""

    def __init__(self, message, probes):
        super().__init__(message)
        self.probes = probes


def truncation_error(alpha: float, T: int, k: int) -> float:
    """Reward lost by stopping after ``T`` rounds and using only ``k`` scores.

    For ``T >= 2`` this is the closed-form tail bound plus ``alpha^k``; for
    ``T < 2`` the exact ``Pr(tau > T)`` (1 or ``alpha``) replaces the tail.
    """
    if not 0 < alpha <= ENGINE_ALPHA_MAX:
        raise ValueError(f"alpha must lie in (0, {ENGINE_ALPHA_MAX}], got {alpha}")
    if k < 1 or T < 0:
        raise ValueError("need T >= 0 and k >= 1")
    if T == 0:
        tail = 1.0
    elif T == 1:
        tail = alpha
    else:
        tail = second_level_survival(alpha) * branching_ratio(alpha) ** (T - 2)
    return tail + alpha**k


def failure_probability(params: SimParams) -> float:
    """Probability that either envelope fails at some round, capped at 1."""
    return min(1.0, params.T * params.gamma + upper_failure_probability(params))


@dataclass
class Probe:
    lam: float
    mode: str
    mean: float


@dataclass
class BoundReport:
    alpha: float
    beta: float
    lambda_lo: float
    lambda_hi: float
    truncation_error: float
    reward_lower: float
    reward_upper: float
    failure_probability: float
    zeta: float
    delta: float
    params: SimParams = field(repr=False, default=None)
    probes: list = field(repr=False, default_factory=list)

    @property
    def width(self) -> float:
        return self.reward_upper - self.reward_lower


def _probe(
    params: SimParams, lam: float, mode: str, probes: list, workers: int, checkpoint_dir: str | None = None
) -> float:
    _, mean = truncated_simulate(params.with_lambda(lam), mode, workers=workers, checkpoint_dir=checkpoint_dir)
    probes.append(Probe(lam, mode, mean))
    log.debug("probe lam=%.8f mode=%s mean=%.6g", lam, mode, mean)
    return mean


def bisect_lambda(
    params: SimParams,
    mode: str,
    level: float,
    tol: float,
    lo: float = 0.0,
    hi: float = 1.0,
    max_iter: int = MAX_ITERATIONS,
    probes: list | None = None,
    workers: int = 1,
    checkpoint_dir: str | None = None,
) -> tuple[float, float]:
    """Shrink ``[lo, hi]`` around the entry fee where the ``mode`` mean crosses ``level``.

    On return the mean at ``lo`` is at least ``level`` and the mean at ``hi``
    is below it (endpoints 0 and 1 are taken as satisfied without probing).
    """
    probes = [] if probes is None else probes
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if _probe(params, mid, mode, probes, workers, checkpoint_dir) >= level:
            lo = mid
        else:
            hi = mid
    return lo, hi


def lambda_search(
    params: SimParams,
    zeta: float = DEFAULT_ZETA,
    mode_pair: tuple[str, str] = ("lower", "upper"),
    max_iter: int = MAX_ITERATIONS,
    workers: int = 1,
    checkpoint_dir: str | None = None,
) -> BoundReport:
    """Bracket the optimal reward of the strategic staker.

    ``params.lam`` is ignored. ``lambda_hi`` is the smallest probed fee with
    upper-chain mean at most ``zeta``; ``lambda_lo`` the largest with
    lower-chain mean at least ``-zeta``. The envelope gap ``delta`` is the
    larger of the two upper-minus-lower mean differences at those fees.
    """
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    low_mode, up_mode = mode_pair
    probes: list[Probe] = []
    tol = zeta / 4

    kw = dict(max_iter=max_iter, probes=probes, workers=workers, checkpoint_dir=checkpoint_dir)
    _, lam_hi = bisect_lambda(params, up_mode, zeta, tol, **kw)
    lam_lo, _ = bisect_lambda(params, low_mode, -zeta, tol, **kw)

    if lam_hi >= 1.0:
        raise SearchError("upper-envelope mean stays above zeta for every probed fee", probes)

    def probe(lam, mode):
        for pr in probes:
            if pr.lam == lam and pr.mode == mode:
                return pr.mean
        return _probe(params, lam, mode, probes, workers, checkpoint_dir)

    up_at_hi = probe(lam_hi, up_mode)
    low_at_lo = probe(lam_lo, low_mode)
    if up_at_hi > zeta or low_at_lo < -zeta:
        raise SearchError(
            f"no bracketing sign pattern: upper({lam_hi:.6g})={up_at_hi:.6g}, "
            f"lower({lam_lo:.6g})={low_at_lo:.6g}",
            probes,
        )
    low_at_hi = probe(lam_hi, low_mode)
    up_at_lo = probe(lam_lo, up_mode)
    delta = max(up_at_hi - low_at_hi, up_at_lo - low_at_lo, 0.0)

    trunc = truncation_error(params.alpha, params.T, params.k)
    return BoundReport(
        alpha=params.alpha,
        beta=params.beta,
        lambda_lo=lam_lo,
        lambda_hi=lam_hi,
        truncation_error=trunc,
        reward_lower=lam_lo - (zeta + delta),
        reward_upper=lam_hi + (zeta + delta) + trunc,
        failure_probability=failure_probability(params),
        zeta=zeta,
        delta=delta,
        params=params,
        probes=probes,
    )


def marginal_reward(report: BoundReport) -> tuple[float, float]:
    return report.reward_lower - report.alpha, report.reward_upper - report.alpha


def raw_lambda(params: SimParams, tol: float = 1e-5, max_iter: int = 40, workers: int = 1) -> float:
    """Point estimate of the optimal reward from the raw chain alone (no guarantee)."""
    lo, hi = bisect_lambda(params, "raw", 0.0, tol, max_iter=max_iter, workers=workers)
    return 0.5 * (lo + hi)


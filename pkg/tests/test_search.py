import math

import numpy as np
import pytest

import cssbounds.search as search
from cssbounds.engine import SimParams, truncated_simulate
from cssbounds.search import (
    BoundReport,
    SearchError,
    bisect_lambda,
    failure_probability,
    lambda_search,
    marginal_reward,
    raw_lambda,
    truncation_error,
)


def params(**kw):
    base = dict(alpha=0.1, beta=1.0, lam=0.0, T=3, k=3, n=10_000, seed=5)
    base.update(kw)
    return SimParams(**base)


def reference_truncation(alpha, T, k):
    a = alpha
    return a**2 * (2 - 2 * a + a**2) / (1 - a + a**2) * (a * (2 - a) / (1 - a)) ** (T - 2) + a**k


class TestTruncationError:
    def test_reference_value(self):
        v = truncation_error(0.1, 15, 8)
        assert abs(v - reference_truncation(0.1, 15, 8)) <= 1e-12
        assert v == pytest.approx(1.0e-8, rel=0.01)

    @pytest.mark.parametrize("alpha", [0.05, 0.2, 0.29])
    @pytest.mark.parametrize("T", [2, 5, 20])
    def test_matches_formula(self, alpha, T):
        assert truncation_error(alpha, T, 4) == pytest.approx(reference_truncation(alpha, T, 4), rel=1e-13)

    def test_short_horizons(self):
        assert truncation_error(0.2, 0, 3) == pytest.approx(1 + 0.008)
        assert truncation_error(0.2, 1, 3) == pytest.approx(0.2 + 0.008)

    def test_decreasing_in_horizon_and_credentials(self):
        vals = [truncation_error(0.2, T, 5) for T in range(0, 12)]
        assert all(x > y for x, y in zip(vals, vals[1:]))
        assert truncation_error(0.2, 10, 8) < truncation_error(0.2, 10, 4)

    @pytest.mark.parametrize("args", [(0.3, 10, 5), (0.0, 10, 5), (0.1, -1, 5), (0.1, 5, 0)])
    def test_rejects(self, args):
        with pytest.raises(ValueError):
            truncation_error(*args)


class TestBisection:
    def test_one_round_root_is_alpha(self):
        p = params(T=1, n=50_000)
        lam = raw_lambda(p, tol=1e-5)
        sigma = truncated_simulate(p.with_lambda(lam))[0].std()
        assert abs(lam - p.alpha) <= 4 * sigma / math.sqrt(p.n) + 1e-5

    def test_bisect_invariant(self):
        p = params()
        probes = []
        lo, hi = bisect_lambda(p, "raw", 0.0, 1e-3, probes=probes)
        assert hi - lo <= 1e-3
        assert all((pr.mean >= 0) == (pr.lam <= lo) for pr in probes)

    def test_monotone_in_lambda(self):
        p = params(T=4, n=20_000)
        for mode in ("raw", "lower", "upper"):
            runs = [truncated_simulate(p.with_lambda(lam), mode)[0] for lam in (0.08, 0.1, 0.12)]
            means = [d.mean() for d in runs]
            tol = 2 * max(d.std() for d in runs) / math.sqrt(p.n)
            assert means[0] >= means[1] - tol
            assert means[1] >= means[2] - tol


@pytest.fixture(scope="module")
def report():
    return lambda_search(params(), zeta=5e-4)


class TestLambdaSearch:
    def test_bracket_validity(self, report):
        ups = [pr for pr in report.probes if pr.mode == "upper" and pr.lam == report.lambda_hi]
        lows = [pr for pr in report.probes if pr.mode == "lower" and pr.lam == report.lambda_lo]
        assert ups and ups[-1].mean <= report.zeta
        assert lows and lows[-1].mean >= -report.zeta

    def test_composition(self, report):
        assert isinstance(report, BoundReport)
        assert report.lambda_lo <= report.lambda_hi
        assert report.reward_lower == pytest.approx(report.lambda_lo - report.zeta - report.delta)
        assert report.reward_upper == pytest.approx(
            report.lambda_hi + report.zeta + report.delta + report.truncation_error
        )
        lo, hi = marginal_reward(report)
        assert lo == pytest.approx(report.reward_lower - 0.1)
        assert hi == pytest.approx(report.reward_upper - 0.1)
        assert report.width > 0

    def test_contains_raw_estimate(self, report):
        raw = raw_lambda(params(), tol=1e-4)
        assert report.reward_lower <= raw <= report.reward_upper

    def test_envelope_gap_shrinks_with_samples(self):
        small = lambda_search(params(n=10_000, T=2), zeta=1e-3)
        large = lambda_search(params(n=100_000, T=2), zeta=1e-3)
        ratio = large.delta / small.delta
        assert 0.15 < ratio < 0.6  # roughly 1/sqrt(10)

    def test_one_round_bracket_contains_alpha(self):
        rep = lambda_search(params(T=1, n=50_000))
        assert rep.lambda_lo - 2 * rep.zeta <= 0.1 <= rep.lambda_hi + 2 * rep.zeta

    def test_no_bracket_raises(self, monkeypatch):
        monkeypatch.setattr(search, "truncated_simulate", lambda p, mode, **kw: (None, 1.0))
        with pytest.raises(SearchError) as err:
            lambda_search(params())
        assert err.value.probes

    def test_rejects_nonpositive_zeta(self):
        with pytest.raises(ValueError):
            lambda_search(params(), zeta=0.0)


def test_failure_probability_capped():
    assert failure_probability(params()) == 1.0
    p = params(n=100_000, T=10)
    expected = 10 * 0.01 + 10 * (0.01 + math.exp(-10) / 1e-4 * p.dkw_width)
    assert failure_probability(p) == pytest.approx(expected)


@pytest.mark.slow
def test_raw_root_near_reference_value():
    """alpha=0.2, beta=1: reference marginal 0.00734, computed with a longer, larger run."""
    p = SimParams(alpha=0.2, beta=1.0, lam=0.0, T=10, k=6, n=1_000_000, seed=0)
    lo, hi = 0.2, 0.22
    assert truncated_simulate(p.with_lambda(lo))[1] >= 0
    assert truncated_simulate(p.with_lambda(hi))[1] < 0
    lo, hi = bisect_lambda(p, "raw", 0.0, 2e-4, lo=lo, hi=hi)
    marginal = 0.5 * (lo + hi) - p.alpha
    assert 0.0055 <= marginal <= 0.0090

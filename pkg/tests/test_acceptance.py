"""Acceptance criteria, each run at its stated tolerance.

Every check returns ``(passed, detail)``. Under pytest each criterion is one
test and a PASS/FAIL line is printed in the terminal summary (see
``conftest.py``). Running this file directly prints the same lines.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest
from scipy import stats

from cssbounds.engine import RewardDistribution, SimParams, add_layer, simulate_chain, truncated_simulate
from cssbounds.omniscient import closed_form_bounds, extinction_recursion, omniscient_reward_bound
from cssbounds.scoring import StakeSplit, min_split_sample, survival
from cssbounds.search import lambda_search, truncation_error

RESULTS: dict[int, tuple[bool, str]] = {}

DESK = dict(T=10, k=6, n=100_000, epsilon=1e-4, eta=1e-3)


def criterion_1():
    start = time.perf_counter()
    m1 = omniscient_reward_bound(0.1, delta=1e-7, t_delta=3000).marginal_upper
    m2 = omniscient_reward_bound(0.2, delta=1e-7, t_delta=3000).marginal_upper
    fhwy = closed_form_bounds(0.2)[2] - 0.2
    elapsed = time.perf_counter() - start
    ok = abs(m1 - 0.01122820925) <= 1e-6 and abs(m2 - 0.05251375499) <= 1e-6 and fhwy == 0.25 and elapsed < 1
    return ok, f"marginals {m1:.11f}, {m2:.11f}; fhwy {fhwy!r}; {elapsed:.3f}s"


def criterion_2():
    worst = 0.0
    for a in (0.05, 0.1, 0.2, 0.29):
        p = extinction_recursion(a, 10).p
        p2 = a**2 * (2 - 2 * a + a**2) / (1 - a + a**2)
        worst = max(worst, abs(p[1] - a), abs(p[2] - p2))
    return worst <= 1e-12, f"max deviation {worst:.2e}"


def criterion_3():
    parts, ok = [], True
    for alpha in (0.1, 0.2):
        for beta in (0.0, 0.5, 1.0):
            p = SimParams(alpha=alpha, beta=beta, lam=alpha, T=1, k=6, n=100_000, seed=2024)
            start = time.perf_counter()
            dist, mean = truncated_simulate(p)
            elapsed = time.perf_counter() - start
            z = mean / (dist.std() / math.sqrt(p.n))
            ok &= abs(z) <= 4 and elapsed < 30
            parts.append(f"({alpha},{beta}) z={z:+.2f} {elapsed:.1f}s")
    return ok, "; ".join(parts)


def criterion_4():
    ok, parts = True, []
    for beta, n in ((0.0, 100_000), (0.5, 20_000), (1.0, 100_000)):
        p = SimParams(alpha=0.2, beta=beta, lam=0.2, T=10, k=6, n=n, seed=77)
        lower = list(simulate_chain(p, "lower"))
        upper = list(simulate_chain(p, "upper"))
        dom = all(np.all(u.samples >= l.samples) for l, u in zip(lower, upper))
        inside = all(
            np.all((d.samples >= -d.round * p.lam - 1e-12) & (d.samples <= d.round * (1 - p.lam) + 1e-12))
            for d in lower + upper
        )
        ok &= dom and inside
        parts.append(f"beta={beta}: dominance={dom} support={inside}")
    return ok, "; ".join(parts)


def criterion_5():
    start = time.perf_counter()
    rep = lambda_search(SimParams(alpha=0.1, beta=1.0, lam=0.0, seed=0, **DESK))
    elapsed = time.perf_counter() - start
    ok = rep.reward_lower >= 0.100 and rep.reward_upper <= 0.104 and rep.reward_upper >= 0.1008 and elapsed <= 1800
    return ok, (
        f"bracket [{rep.reward_lower:.5f}, {rep.reward_upper:.5f}] vs [0.100, 0.104]; "
        f"lambda [{rep.lambda_lo:.5f}, {rep.lambda_hi:.5f}], delta={rep.delta:.5f}; {elapsed:.0f}s"
    )


def criterion_6():
    r0 = lambda_search(SimParams(alpha=0.2, beta=0.0, lam=0.0, seed=0, **DESK))
    r1 = lambda_search(SimParams(alpha=0.2, beta=1.0, lam=0.0, seed=0, **DESK))
    ok = r0.reward_upper < r1.reward_lower
    return ok, (
        f"beta=0 upper {r0.reward_upper:.5f} vs beta=1 lower {r1.reward_lower:.5f} "
        f"(lambda brackets [{r0.lambda_lo:.5f},{r0.lambda_hi:.5f}] and [{r1.lambda_lo:.5f},{r1.lambda_hi:.5f}])"
    )


def criterion_7():
    s = np.linspace(0, 50, 100)
    surv_err = max(float(np.max(np.abs(survival(s, a) - np.exp(-a * s)))) for a in (0.05, 0.1, 0.29))
    rng = np.random.default_rng(12345)
    pvals = []
    for total in (0.05, 0.1, 0.25):
        for parts in ((1.0,), (0.5, 0.5), (0.2, 0.3, 0.5)):
            split = StakeSplit(tuple(total * q for q in parts))
            best, _ = min_split_sample(split, rng, size=100_000)
            pvals.append(stats.kstest(best, "expon", args=(0, 1 / split.total)).pvalue)
    stakes = np.array([0.05, 0.1, 0.15])
    n = 100_000
    _, winner = min_split_sample(stakes, rng, size=n)
    freq = np.bincount(winner, minlength=3) / n
    expected = stakes / stakes.sum()
    zmax = float(np.max(np.abs(freq - expected) / np.sqrt(expected * (1 - expected) / n)))
    ok = surv_err <= 1e-15 and min(pvals) >= 0.01 and zmax <= 3
    return ok, f"survival err {surv_err:.1e}; min KS p {min(pvals):.3f}; max freq z {zmax:.2f}"


def criterion_8():
    ok, parts = True, []
    base = SimParams(alpha=0.2, beta=1.0, lam=0.0, seed=31, **DESK)
    for mode in ("raw", "lower", "upper"):
        runs = [truncated_simulate(base.with_lambda(lam), mode)[0] for lam in (0.19, 0.2, 0.21)]
        means = [d.mean() for d in runs]
        tol = 2 * max(d.std() for d in runs) / math.sqrt(base.n)
        good = means[0] >= means[1] - tol and means[1] >= means[2] - tol
        ok &= good
        parts.append(f"{mode}: " + ", ".join(f"{m:+.5f}" for m in means))
    return ok, "; ".join(parts)


def criterion_9():
    a, T, k = 0.1, 15, 8
    reference = a**2 * (2 - 2 * a + a**2) / (1 - a + a**2) * (a * (2 - a) / (1 - a)) ** (T - 2) + a**k
    value = truncation_error(a, T, k)
    ok = abs(value - reference) <= 1e-12 and math.isclose(value, 1.0e-8, rel_tol=0.05)
    return ok, f"{value:.6e} vs reference {reference:.6e}"


def criterion_10():
    per_sample = []
    for n in (10_000, 100_000, 1_000_000):
        p = SimParams(alpha=0.2, beta=1.0, lam=0.2, T=10, k=6, n=n, seed=1)
        rng = np.random.default_rng(0)
        prev = RewardDistribution(np.sort(rng.uniform(-0.2, 4 * 0.8, n)), 4, 0.2)
        add_layer(prev, p, 5, "raw")  # warm-up
        times = []
        for _ in range(5):
            start = time.perf_counter()
            add_layer(prev, p, 5, "raw")
            times.append(time.perf_counter() - start)
        per_sample.append(float(np.median(times)) / n)
    ratios = [x / per_sample[-1] for x in per_sample]
    ok = all(abs(r - 1) <= 0.2 for r in ratios)
    return ok, "per-sample cost relative to n=1e6: " + ", ".join(f"{r:.2f}" for r in ratios)


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 11)}


def _run(i: int) -> tuple[bool, str]:
    ok, detail = CRITERIA[i]()
    RESULTS[i] = (ok, detail)
    print(f"criterion {i:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok, detail


@pytest.mark.parametrize("i", list(CRITERIA))
def test_criterion(i):
    ok, detail = _run(i)
    assert ok, detail


if __name__ == "__main__":
    for i in CRITERIA:
        _run(i)

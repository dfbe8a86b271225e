"""Sampled fixed-point iteration over adversary reward distributions.

A round-``t`` reward distribution holds ``n`` samples of the linearized
reward an optimal ``k``-scored adversary collects when ``t`` rounds remain.
``add_layer`` turns the round ``t-1`` distribution into the round ``t`` one:

1. discretize the previous samples onto an ``epsilon`` grid,
2. tabulate ``E_max(theta) = E[max(theta, r0)]`` and, for ``0 < beta < 1``,
   its integral against the honest observed score,
3. for each new sample draw ``k`` adversary scores and ``k`` future rewards
   and evaluate the expected best action in O(k) from the tables,
4. optionally deflate (lower chain) or inflate (upper chain) the result so
   it is stochastically dominated by (resp. dominates) the exact layer with
   DKW-controlled probability.

All three chains draw identical scores and resampling indices for a given
seed, so envelope samples are ordered pointwise against each other.
"""

from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator

import numpy as np

from .scoring import sample_order_statistics

MODES = ("raw", "lower", "upper")
ENGINE_ALPHA_MAX = 0.29
CHUNK = 1 << 16

_MODE_NAMES = {"raw": "raw", "lower": "lower_envelope", "upper": "upper_envelope"}


class ParameterError(ValueError):
    pass


class SaturationError(RuntimeError):
    """Table lookups left the tabulated range while building an envelope."""


@dataclass(frozen=True)
class SimParams:
    alpha: float
    beta: float
    lam: float
    T: int
    k: int
    n: int
    gamma: float = 0.01
    omega: float = 1e-4
    epsilon: float = 1e-4
    eta: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha <= ENGINE_ALPHA_MAX:
            raise ParameterError(f"alpha must lie in (0, {ENGINE_ALPHA_MAX}], got {self.alpha}")
        if not 0 <= self.beta <= 1:
            raise ParameterError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0 <= self.lam < 1:
            raise ParameterError(f"lam must lie in [0, 1), got {self.lam}")
        if self.T < 0:
            raise ParameterError(f"T must be non-negative, got {self.T}")
        if self.k < 1:
            raise ParameterError(f"k must be positive, got {self.k}")
        if self.n < 1:
            raise ParameterError(f"n must be positive, got {self.n}")
        if not 0 < self.gamma < 1:
            raise ParameterError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0 < self.omega < 1:
            raise ParameterError(f"omega must lie in (0, 1), got {self.omega}")
        if not 0 < self.eta < 1:
            raise ParameterError(f"eta must lie in (0, 1), got {self.eta}")
        if self.epsilon <= 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")
        cells = max(self.T, 1) / self.epsilon
        if abs(cells - round(cells)) > 1e-6 * max(1.0, cells):
            raise ParameterError(f"epsilon={self.epsilon} does not divide the reward range")
        if self.n * self.dkw_width < 1 - 1e-12:
            raise ParameterError("n * sqrt(ln(1/gamma) / 2n) must be at least 1")
        if self.omega * self.n < 1 - 1e-12:
            raise ParameterError("omega * n must be at least 1")
        if self.trim_count >= self.n:
            raise ParameterError(f"envelopes would replace {self.trim_count} of {self.n} samples")

    @property
    def dkw_width(self) -> float:
        """Uniform CDF deviation allowed by DKW at failure probability gamma."""
        return math.sqrt(math.log(1 / self.gamma) / (2 * self.n))

    @property
    def trim_count(self) -> int:
        return math.ceil(round(self.n * self.dkw_width, 9))

    @property
    def block_size(self) -> int:
        return math.ceil(round(self.omega * self.n, 9))

    @property
    def inflate_blocks(self) -> int:
        return math.ceil(round(self.dkw_width / self.omega, 9))

    def with_lambda(self, lam: float) -> "SimParams":
        return replace(self, lam=lam)

    def fingerprint(self) -> str:
        text = ",".join(f"{k}={v!r}" for k, v in asdict(self).items())
        return hashlib.sha1(text.encode()).hexdigest()[:12]


def lower_failure_probability(p: SimParams) -> float:
    return p.T * p.gamma


def upper_failure_probability(p: SimParams) -> float:
    return p.T * (p.gamma + math.exp(-p.omega * p.n) / p.omega * p.dkw_width)


@dataclass
class RewardDistribution:
    samples: np.ndarray
    round: int
    lam: float
    mode: str = "raw"
    saturation: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")

    @classmethod
    def point_mass(cls, n: int, lam: float, value: float = 0.0, mode: str = "raw"):
        return cls(np.full(n, value), 0, lam, mode)

    @property
    def n(self) -> int:
        return self.samples.size

    @property
    def support_lo(self) -> float:
        return -self.round * self.lam

    @property
    def support_hi(self) -> float:
        return self.round * (1 - self.lam)

    @property
    def mode_name(self) -> str:
        return _MODE_NAMES[self.mode]

    def mean(self) -> float:
        return float(np.mean(self.samples))

    def std(self) -> float:
        return float(np.std(self.samples))


@dataclass
class CredentialDraw:
    """Ascending scores ``c`` (with trailing ``inf``) and their future rewards ``r``."""

    c: np.ndarray
    r: np.ndarray

    @property
    def k(self) -> int:
        return self.r.size


def draw_adversary(prev: RewardDistribution, params: SimParams, rng: np.random.Generator) -> CredentialDraw:
    c = sample_order_statistics(params.alpha, params.k, rng)
    r = prev.samples[rng.integers(0, prev.n, params.k)]
    return CredentialDraw(np.append(c, np.inf), r)


# ---------------------------------------------------------------------------
# precomputation


@dataclass
class PrecomputeTables:
    """Tables for one round, built from the previous round's distribution.

    ``theta`` is the grid ``j * epsilon`` covering ``[-t lam, 1 + (t-1)(1-lam)]``.
    ``g_table[j, m]`` integrates ``z^p E_max(theta_j / z^p)`` over ``z`` in
    ``[0, m / M]`` with ``p = (1 - beta) / beta``, using left sums (lower),
    right sums (upper) or the trapezoid rule (raw).
    """

    params: SimParams
    round: int
    mode: str
    theta: np.ndarray
    pdf: np.ndarray
    cdf: np.ndarray
    tail: np.ndarray
    emax: np.ndarray
    values: np.ndarray  # previous samples after grid rounding, ascending
    g_table: np.ndarray | None = None
    zeta_cells: int = 0
    saturation: int = field(default=0)

    @property
    def epsilon(self) -> float:
        return self.params.epsilon

    @property
    def rounding_mode(self) -> str:
        return {"lower": "down", "upper": "up", "raw": "nearest"}[self.mode]

    def emax_at(self, x):
        """``E[max(x, r0)]``; exact for the discretized distribution at any ``x``."""
        x = np.asarray(x, dtype=float)
        val = np.interp(x, self.theta, self.emax)
        return np.where(x > self.theta[-1], x, val)

    def g_at(self, z, g):
        """Tabulated integral up to ``z`` at threshold ``g``, rounded per mode."""
        if self.g_table is None:
            raise ParameterError("g_table exists only for 0 < beta < 1")
        z = np.asarray(z, dtype=float)
        g = np.asarray(g, dtype=float)
        pos = (g - self.theta[0]) / self.epsilon
        top = self.theta.size - 1
        if self.mode == "lower":
            j = np.floor(pos).astype(np.int64)
        elif self.mode == "upper":
            j = np.ceil(pos).astype(np.int64)
        else:
            j = np.floor(pos).astype(np.int64)
        bad = (j < 0) | (j > top) | (g < 0)
        if np.any(bad):
            self.saturation += int(np.count_nonzero(bad))
            if self.mode != "raw":
                raise SaturationError(
                    f"{np.count_nonzero(bad)} lookups outside the table in round {self.round}"
                )
        j = np.clip(j, 0, top)
        M = self.zeta_cells
        zpos = z * M
        m = np.clip(np.floor(zpos).astype(np.int64), 0, M - 1)
        fr = zpos - m
        tab = self.g_table

        def along_z(row):
            lo = tab[row, m]
            return lo + fr * (tab[row, m + 1] - lo)

        if self.mode != "raw":
            return along_z(j)
        w = np.clip(pos - j, 0.0, 1.0)
        j1 = np.minimum(j + 1, top)
        return (1 - w) * along_z(j) + w * along_z(j1)


def theta_grid(params: SimParams, round_t: int) -> np.ndarray:
    eps = params.epsilon
    lo = -round_t * params.lam
    hi = 1 + max(round_t - 1, 0) * (1 - params.lam)
    j_lo = math.floor(lo / eps) - 1
    j_hi = math.ceil(hi / eps) + 1
    return np.arange(j_lo, j_hi + 1) * eps


def discretize(samples: np.ndarray, theta: np.ndarray, mode: str) -> np.ndarray:
    """Grid indices of ``samples``: rounded down (lower), up (upper) or nearest (raw)."""
    pos = (samples - theta[0]) / (theta[1] - theta[0])
    if mode == "lower":
        idx = np.floor(pos)
    elif mode == "upper":
        idx = np.ceil(pos)
    else:
        idx = np.rint(pos)
    return np.clip(idx, 0, theta.size - 1).astype(np.int64)


def precompute(prev: RewardDistribution, params: SimParams, round_t: int, mode: str = "raw") -> PrecomputeTables:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    theta = theta_grid(params, round_t)
    idx = discretize(prev.samples, theta, mode)
    pdf = np.bincount(idx, minlength=theta.size) / prev.n
    cdf = np.cumsum(pdf)
    # E(theta_j) = sum_{i > j} theta_i d_i, accumulated from the top of the grid
    mass = theta * pdf
    tail = np.empty_like(mass)
    tail[-1] = 0.0
    tail[:-1] = np.cumsum(mass[::-1])[::-1][1:]
    emax = theta * cdf + tail
    tables = PrecomputeTables(
        params=params,
        round=round_t,
        mode=mode,
        theta=theta,
        pdf=pdf,
        cdf=cdf,
        tail=tail,
        emax=emax,
        values=theta[np.sort(idx)],
    )
    if 0 < params.beta < 1:
        _build_g_table(tables)
    return tables


def _build_g_table(tables: PrecomputeTables, max_cells: int = 1 << 22) -> None:
    p = tables.params
    M = math.ceil(round(1 / p.eta, 9))
    h = 1.0 / M
    expo = (1 - p.beta) / p.beta
    u = (np.arange(M + 1) * h) ** expo
    theta = tables.theta
    out = np.empty((theta.size, M + 1))
    rows = max(1, max_cells // (M + 1))
    top = theta[-1]
    for start in range(0, theta.size, rows):
        th = theta[start : start + rows, None]
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            x = th / u[None, 1:]
            psi_in = np.where(x > top, th, u[None, 1:] * tables.emax_at(np.where(x > top, 0.0, x)))
        psi = np.empty((th.shape[0], M + 1))
        psi[:, 0] = np.maximum(th[:, 0], 0.0)
        psi[:, 1:] = psi_in
        block = out[start : start + rows]
        block[:, 0] = 0.0
        if tables.mode == "lower":
            np.cumsum(psi[:, :-1], axis=1, out=block[:, 1:])
        elif tables.mode == "upper":
            np.cumsum(psi[:, 1:], axis=1, out=block[:, 1:])
        else:
            np.cumsum(0.5 * (psi[:, :-1] + psi[:, 1:]), axis=1, out=block[:, 1:])
        block *= h
    tables.g_table = out
    tables.zeta_cells = M


# ---------------------------------------------------------------------------
# sampling


def best_broadcast(c: np.ndarray, r: np.ndarray, params: SimParams) -> np.ndarray:
    """``g[:, i] = max_{j <= i} exp(-c_j (1-beta)(1-alpha)) (1 + r_j)``."""
    decay = (1 - params.beta) * (1 - params.alpha)
    return np.maximum.accumulate(np.exp(-c * decay) * (1 + r), axis=-1)


def sample_rewards(tables: PrecomputeTables, c: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Vectorized sample values for score rows ``c`` and reward rows ``r`` of shape (m, k)."""
    p = tables.params
    c = np.atleast_2d(c)
    r = np.atleast_2d(r)
    g = best_broadcast(c, r, p)
    if p.beta == 0:
        s = g[:, -1]
    elif p.beta == 1:
        w = np.exp(-c * (1 - p.alpha))
        w_next = np.concatenate([w[:, 1:], np.zeros((w.shape[0], 1))], axis=1)
        s = np.sum(tables.emax_at(g) * (w - w_next), axis=1)
    else:
        z = np.exp(-c * (p.beta * (1 - p.alpha)))
        z_next = np.concatenate([z[:, 1:], np.zeros((z.shape[0], 1))], axis=1)
        s = np.sum(tables.g_at(z, g) - tables.g_at(z_next, g), axis=1)
    return s - p.lam


def sample_reward(tables: PrecomputeTables, draw: CredentialDraw, params: SimParams = None, round_t: int = None) -> float:
    c = np.asarray(draw.c, dtype=float)[: draw.k]
    return float(sample_rewards(tables, c[None, :], np.asarray(draw.r, dtype=float)[None, :])[0])


def chunk_generator(seed: int, round_t: int, chunk: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(round_t, chunk))
    return np.random.Generator(np.random.PCG64(ss))


def _sample_chunk(tables: PrecomputeTables, seed: int, round_t: int, chunk: int, size: int) -> np.ndarray:
    p = tables.params
    rng = chunk_generator(seed, round_t, chunk)
    c = sample_order_statistics(p.alpha, p.k, rng, size=size)
    idx = rng.integers(0, tables.values.size, (size, p.k))
    return sample_rewards(tables, c, tables.values[idx])


def sample_layer(tables: PrecomputeTables, seed: int, workers: int = 1) -> np.ndarray:
    """``n`` unsorted samples for one round; identical for any worker count."""
    p = tables.params
    sizes = [min(CHUNK, p.n - s) for s in range(0, p.n, CHUNK)]
    jobs = [(tables, seed, tables.round, i, m) for i, m in enumerate(sizes)]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _sample_chunk(*a), jobs))
    else:
        parts = [_sample_chunk(*a) for a in jobs]
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# envelopes


def _trim(n: int, gamma: float) -> int:
    d = math.ceil(round(n * math.sqrt(math.log(1 / gamma) / (2 * n)), 9))
    if d >= n:
        raise ParameterError(f"envelope would replace {d} of {n} samples")
    return d


def deflate(dist: RewardDistribution, gamma: float, lam: float) -> RewardDistribution:
    """Replace the largest DKW-width fraction of samples by the infimum ``-lam``."""
    if dist.mode != "raw":
        raise ValueError("deflate expects a raw layer")
    n = dist.n
    d = _trim(n, gamma)
    s = np.sort(dist.samples, kind="stable")
    out = np.sort(np.concatenate([np.full(d, -lam), s[: n - d]]), kind="stable")
    return RewardDistribution(out, dist.round, dist.lam, "lower", dist.saturation)


def inflate(dist: RewardDistribution, gamma: float, omega: float, round_t: int, lam: float) -> RewardDistribution:
    """Drop the smallest DKW-width fraction and prepend blocks of strong samples.

    One block of ``ceil(omega n)`` copies of the supremum ``t (1 - lam)`` is
    followed by blocks of the ``l``-th largest original sample for
    ``l = 1 .. M-1``, ``M = ceil(width / omega)``. The block total never falls
    short of the deletions; the surplus is trimmed from the bottom.
    """
    if dist.mode != "raw":
        raise ValueError("inflate expects a raw layer")
    n = dist.n
    d = _trim(n, gamma)
    width = math.sqrt(math.log(1 / gamma) / (2 * n))
    b = math.ceil(round(omega * n, 9))
    M = math.ceil(round(width / omega, 9))
    s = np.sort(dist.samples, kind="stable")
    top = s[::-1][: M - 1]
    extra = np.concatenate([np.full(b, round_t * (1 - lam)), np.repeat(top, b)])
    if extra.size < d:
        raise ParameterError("inflate blocks do not cover the deleted samples")
    out = np.sort(np.concatenate([s[d:], extra]), kind="stable")
    out = out[out.size - n :]
    return RewardDistribution(out, dist.round, dist.lam, "upper", dist.saturation)


# ---------------------------------------------------------------------------
# layers and chains


def add_layer(
    prev: RewardDistribution,
    params: SimParams,
    round_t: int,
    mode: str = "raw",
    seed: int | None = None,
    workers: int = 1,
) -> RewardDistribution:
    if prev.round != round_t - 1:
        raise ValueError(f"previous layer is round {prev.round}, expected {round_t - 1}")
    if prev.mode != mode and prev.round > 0:
        raise ValueError(f"cannot extend a {prev.mode} chain in {mode} mode")
    tables = precompute(prev, params, round_t, mode)
    s = sample_layer(tables, params.seed if seed is None else seed, workers)
    # the exact sample map sends [-lam, (t-1)(1-lam)] into [-lam, t(1-lam)]
    np.clip(s, -params.lam, round_t * (1 - params.lam), out=s)
    s.sort(kind="stable")
    layer = RewardDistribution(s, round_t, params.lam, "raw", prev.saturation + tables.saturation)
    if mode == "lower":
        return deflate(layer, params.gamma, params.lam)
    if mode == "upper":
        return inflate(layer, params.gamma, params.omega, round_t, params.lam)
    return layer


def simulate_chain(
    params: SimParams,
    mode: str = "raw",
    workers: int = 1,
    checkpoint_dir: str | None = None,
) -> Iterator[RewardDistribution]:
    """Yield the round 0..T distributions of one chain, resuming from checkpoints."""
    dist = RewardDistribution.point_mass(params.n, params.lam, mode=mode)
    start = 1
    if checkpoint_dir is not None:
        found = latest_checkpoint(checkpoint_dir, params, mode)
        if found is not None:
            dist = found
            start = found.round + 1
    yield dist
    for t in range(start, params.T + 1):
        dist = add_layer(dist, params, t, mode, workers=workers)
        if checkpoint_dir is not None:
            save_checkpoint(checkpoint_path(checkpoint_dir, params, mode, t), dist)
        yield dist


def truncated_simulate(
    params: SimParams,
    mode: str = "raw",
    workers: int = 1,
    checkpoint_dir: str | None = None,
) -> tuple[RewardDistribution, float]:
    dist = None
    for dist in simulate_chain(params, mode, workers, checkpoint_dir):
        pass
    return dist, dist.mean()


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_path(directory: str, params: SimParams, mode: str, round_t: int) -> str:
    return os.path.join(directory, f"{params.fingerprint()}_{mode}_r{round_t:04d}.txt")


def save_checkpoint(path: str, dist: RewardDistribution) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = path + ".tmp"
    header = f"round {dist.round} {dist.n} {dist.mode_name} {dist.support_lo!r} {dist.support_hi!r}"
    np.savetxt(tmp, dist.samples, fmt="%.17g", header=header, comments="")
    os.replace(tmp, path)


def load_checkpoint(path: str, lam: float) -> RewardDistribution:
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 6 or head[0] != "round":
            raise ValueError(f"{path}: malformed checkpoint header")
        samples = np.loadtxt(fh, ndmin=1)
    t, n, mode_name = int(head[1]), int(head[2]), head[3]
    mode = {v: k for k, v in _MODE_NAMES.items()}[mode_name]
    if samples.size != n:
        raise ValueError(f"{path}: expected {n} samples, found {samples.size}")
    return RewardDistribution(samples, t, lam, mode)


def latest_checkpoint(directory: str, params: SimParams, mode: str) -> RewardDistribution | None:
    for t in range(params.T, 0, -1):
        path = checkpoint_path(directory, params, mode, t)
        if os.path.exists(path):
            return load_checkpoint(path, params.lam)
    return None

"""Batch front-end: single points, (alpha, beta) sweeps and CSV output.

Configuration comes from an optional ``key=value`` file (``--config``) with
command-line flags taking precedence. Keys use the flag names with either
dashes or underscores, e.g. ``alpha-grid = 0.05:0.25:0.05``.

Exit status: 0 on success, 2 on a configuration error, 3 when at least one
grid point failed numerically (its row is still written, marked failed).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .engine import ENGINE_ALPHA_MAX, ParameterError, SaturationError, SimParams, truncated_simulate
from .omniscient import OMNISCIENT_ALPHA_MAX, omniscient_curves
from .search import (
    DEFAULT_ZETA,
    SearchError,
    bisect_lambda,
    failure_probability,
    lambda_search,
    marginal_reward,
    raw_lambda,
    truncation_error,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

MODES = ("point", "alpha_sweep", "beta_sweep", "omniscient_curves", "scoring_tests")
ENVELOPES = ("upper", "lower", "both", "raw")

POINT_COLUMNS = [
    "alpha", "beta", "T", "k", "n", "gamma", "omega", "epsilon", "eta", "seed",
    "lambda_lo", "lambda_hi", "marginal_lower", "marginal_upper",
    "truncation_error", "failure_probability", "wall_seconds",
    "envelope", "mean", "status",
]
OMNISCIENT_COLUMNS = ["alpha", "tight_upper", "closed_form_upper", "fhwy_upper"]
SCORING_COLUMNS = ["test", "stakes", "statistic", "pvalue", "passed"]


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


@dataclass
class RunConfig:
    mode: str = "point"
    alpha: float = 0.1
    beta: float = 1.0
    alphas: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    T: int = 10
    k: int = 6
    n: int = 100_000
    gamma: float = 0.01
    omega: float = 1e-4
    epsilon: float = 1e-4
    eta: float = 1e-3
    zeta: float = DEFAULT_ZETA
    seed: int = 0
    lam: float | None = None
    out: str = "results.csv"
    checkpoint: str | None = None
    workers: int = 1
    envelope: str = "both"

    def grid(self) -> list[tuple[float, float]]:
        if self.mode == "point":
            return [(self.alpha, self.beta)]
        if self.mode == "alpha_sweep":
            return [(a, self.beta) for a in self.alphas]
        if self.mode == "beta_sweep":
            return [(self.alpha, b) for b in self.betas]
        return []

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode: expected one of {MODES}, got {self.mode!r}")
        if self.envelope not in ENVELOPES:
            raise ConfigError(f"envelope: expected one of {ENVELOPES}, got {self.envelope!r}")
        if self.workers < 1:
            raise ConfigError(f"workers: must be positive, got {self.workers}")
        if self.zeta <= 0:
            raise ConfigError(f"zeta: must be positive, got {self.zeta}")
        if self.mode == "omniscient_curves":
            if not self.alphas:
                raise ConfigError("alpha-grid: omniscient_curves needs a non-empty grid")
            for a in self.alphas:
                if not 0 < a <= OMNISCIENT_ALPHA_MAX:
                    raise ConfigError(f"alpha-grid: {a} outside (0, {OMNISCIENT_ALPHA_MAX}]")
            return
        if self.mode == "scoring_tests":
            return
        if self.mode == "alpha_sweep" and not self.alphas:
            raise ConfigError("alpha-grid: alpha_sweep needs a non-empty grid")
        if self.mode == "beta_sweep" and not self.betas:
            raise ConfigError("beta-grid: beta_sweep needs a non-empty grid")
        for a, b in self.grid():
            if not 0 < a <= ENGINE_ALPHA_MAX:
                raise ConfigError(f"alpha: {a} outside (0, {ENGINE_ALPHA_MAX}]")
            if not 0 <= b <= 1:
                raise ConfigError(f"beta: {b} outside [0, 1]")
            try:
                self.sim_params(a, b)
            except ParameterError as exc:
                raise ConfigError(f"simulation parameters: {exc}") from None

    def sim_params(self, alpha: float, beta: float) -> SimParams:
        return SimParams(
            alpha=alpha,
            beta=beta,
            lam=0.0 if self.lam is None else self.lam,
            T=self.T,
            k=self.k,
            n=self.n,
            gamma=self.gamma,
            omega=self.omega,
            epsilon=self.epsilon,
            eta=self.eta,
            seed=point_seed(self.seed, alpha, beta),
        )


def parse_grid(text: str) -> list[float]:
    """``lo:hi:step`` (inclusive of ``hi`` up to rounding) or a comma list."""
    text = text.strip()
    if ":" not in text:
        return [float(v) for v in text.split(",") if v.strip()]
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"grid must be lo:hi:step, got {text!r}")
    lo, hi, step = (float(p) for p in parts)
    if step <= 0 or hi < lo:
        raise ValueError(f"grid must have step > 0 and hi >= lo, got {text!r}")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + i * step, 12) for i in range(count)]


def point_seed(seed: int, alpha: float, beta: float) -> int:
    """Per-grid-point seed: ``seed`` xor a stable 32-bit hash of the point."""
    digest = hashlib.sha256(f"{alpha!r},{beta!r}".encode()).digest()
    return int(seed) ^ int.from_bytes(digest[:4], "little")


def read_config_file(path: str) -> dict[str, str]:
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


# flag name -> (RunConfig field, converter)
_OPTIONS = {
    "mode": ("mode", str),
    "alpha": ("alpha", float),
    "beta": ("beta", float),
    "alpha_grid": ("alphas", parse_grid),
    "beta_grid": ("betas", parse_grid),
    "rounds": ("T", int),
    "credentials": ("k", int),
    "samples": ("n", lambda s: int(float(s))),
    "gamma": ("gamma", float),
    "omega": ("omega", float),
    "epsilon": ("epsilon", float),
    "eta": ("eta", float),
    "zeta": ("zeta", float),
    "seed": ("seed", int),
    "lam": ("lam", float),
    "out": ("out", str),
    "checkpoint": ("checkpoint", str),
    "workers": ("workers", int),
    "envelope": ("envelope", str),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cssbounds", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="key=value configuration file")
    ap.add_argument("--mode", choices=MODES)
    ap.add_argument("--alpha", help="adversarial stake")
    ap.add_argument("--beta", help="fraction of honest stake observed before acting")
    ap.add_argument("--alpha-grid", help="lo:hi:step or comma list")
    ap.add_argument("--beta-grid", help="lo:hi:step or comma list")
    ap.add_argument("--rounds", help="truncation horizon T")
    ap.add_argument("--credentials", help="scores kept per round k")
    ap.add_argument("--samples", help="samples per layer n")
    ap.add_argument("--gamma")
    ap.add_argument("--omega")
    ap.add_argument("--epsilon")
    ap.add_argument("--eta")
    ap.add_argument("--zeta")
    ap.add_argument("--seed")
    ap.add_argument("--lam", help="evaluate the chain mean at this fixed entry fee instead of searching")
    ap.add_argument("--out", help="CSV output path (appended to)")
    ap.add_argument("--checkpoint", help="directory for per-round checkpoints")
    ap.add_argument("--workers")
    ap.add_argument("--envelope", choices=ENVELOPES)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(argv=None) -> tuple[RunConfig, bool]:
    args = build_parser().parse_args(argv)
    raw: dict[str, str] = {}
    if args.config:
        try:
            raw.update(read_config_file(args.config))
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}") from None
    for name in _OPTIONS:
        value = getattr(args, name)
        if value is not None:
            raw[name] = value
    cfg = RunConfig()
    for key, value in raw.items():
        if key not in _OPTIONS:
            raise ConfigError(f"{key}: unknown configuration key")
        attr, conv = _OPTIONS[key]
        try:
            setattr(cfg, attr, conv(value))
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    cfg.validate()
    return cfg, args.verbose


# ---------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


class CsvWriter:
    """Append rows to ``path``, writing the header only when the file is new."""

    def __init__(self, path: str, columns: list[str]):
        self.path = path
        self.columns = columns
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        new = not os.path.exists(path) or os.path.getsize(path) == 0
        if new:
            with open(path, "w", newline="") as fh:
                csv.writer(fh).writerow(columns)

    def write(self, row: dict) -> None:
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([_fmt(row.get(c)) for c in self.columns])
            fh.flush()

    def completed(self, key_columns: list[str]) -> set[tuple]:
        """Keys of rows already written with status ``ok``."""
        done = set()
        with open(self.path, newline="") as fh:
            for row in csv.DictReader(fh):
                if row.get("status", "ok") == "ok":
                    done.add(tuple(row[c] for c in key_columns))
        return done


_KEY_COLUMNS = ["alpha", "beta", "T", "k", "n", "gamma", "omega", "epsilon", "eta", "seed", "envelope"]


# ---------------------------------------------------------------------------
# runners


def run_point(cfg: RunConfig, alpha: float, beta: float) -> dict:
    """Evaluate one grid point and return its CSV row."""
    params = cfg.sim_params(alpha, beta)
    row = {
        "alpha": alpha, "beta": beta, "T": params.T, "k": params.k, "n": params.n,
        "gamma": params.gamma, "omega": params.omega, "epsilon": params.epsilon,
        "eta": params.eta, "seed": params.seed, "envelope": cfg.envelope, "status": "ok",
    }
    start = time.perf_counter()
    try:
        trunc = truncation_error(alpha, params.T, params.k)
        row["truncation_error"] = trunc
        if cfg.lam is not None:
            mode = "raw" if cfg.envelope in ("both", "raw") else cfg.envelope
            _, mean = truncated_simulate(params, mode, cfg.workers, cfg.checkpoint)
            row.update(lambda_lo=cfg.lam, lambda_hi=cfg.lam, mean=mean)
        elif cfg.envelope == "both":
            report = lambda_search(params, cfg.zeta, workers=cfg.workers, checkpoint_dir=cfg.checkpoint)
            lo, hi = marginal_reward(report)
            row.update(
                lambda_lo=report.lambda_lo, lambda_hi=report.lambda_hi,
                marginal_lower=lo, marginal_upper=hi,
                failure_probability=report.failure_probability,
            )
        elif cfg.envelope == "raw":
            lam = raw_lambda(params, tol=cfg.zeta / 4, workers=cfg.workers)
            row.update(lambda_lo=lam, lambda_hi=lam, marginal_lower=lam - alpha, marginal_upper=lam - alpha)
        else:
            level = cfg.zeta if cfg.envelope == "upper" else -cfg.zeta
            lo, hi = bisect_lambda(
                params, cfg.envelope, level, cfg.zeta / 4,
                workers=cfg.workers, checkpoint_dir=cfg.checkpoint,
            )
            if cfg.envelope == "upper":
                row.update(lambda_hi=hi, marginal_upper=hi + cfg.zeta + trunc - alpha)
            else:
                row.update(lambda_lo=lo, marginal_lower=lo - cfg.zeta - alpha)
            row["failure_probability"] = failure_probability(params)
    except (SaturationError, SearchError, FloatingPointError) as exc:
        log.error("alpha=%g beta=%g failed: %s", alpha, beta, exc)
        row["status"] = f"failed: {type(exc).__name__}"
    row["wall_seconds"] = round(time.perf_counter() - start, 3)
    return row


def run_sweep(cfg: RunConfig) -> int:
    writer = CsvWriter(cfg.out, POINT_COLUMNS)
    done = writer.completed(_KEY_COLUMNS)
    status = EXIT_OK
    for alpha, beta in cfg.grid():
        params = cfg.sim_params(alpha, beta)
        key = tuple(_fmt(v) for v in (
            alpha, beta, params.T, params.k, params.n, params.gamma, params.omega,
            params.epsilon, params.eta, params.seed, cfg.envelope,
        ))
        if key in done:
            log.info("alpha=%g beta=%g already in %s, skipping", alpha, beta, cfg.out)
            continue
        row = run_point(cfg, alpha, beta)
        writer.write(row)
        if row["status"] != "ok":
            status = EXIT_NUMERIC
        log.info("alpha=%g beta=%g done in %.1fs (%s)", alpha, beta, row["wall_seconds"], row["status"])
    return status


def run_omniscient(cfg: RunConfig) -> int:
    writer = CsvWriter(cfg.out, OMNISCIENT_COLUMNS)
    for row in omniscient_curves(cfg.alphas):
        writer.write(row)
    return EXIT_OK


def scoring_checks(n: int = 100_000, seed: int = 0, level: float = 0.01) -> list[dict]:
    """KS tests of min-split scores against Exp(total stake)."""
    from scipy import stats

    from .scoring import min_split_sample

    rng = np.random.default_rng(seed)
    rows = []
    for total in (0.05, 0.1, 0.25):
        for parts in ((1.0,), (0.5, 0.5), (0.2, 0.3, 0.5)):
            stakes = tuple(total * p for p in parts)
            best, _ = min_split_sample(stakes, rng, size=n)
            res = stats.kstest(best, "expon", args=(0, 1 / total))
            rows.append(
                {
                    "test": "min_split_ks",
                    "stakes": "|".join(f"{s:g}" for s in stakes),
                    "statistic": float(res.statistic),
                    "pvalue": float(res.pvalue),
                    "passed": bool(res.pvalue >= level),
                }
            )
    return rows


def run_scoring(cfg: RunConfig) -> int:
    writer = CsvWriter(cfg.out, SCORING_COLUMNS)
    rows = scoring_checks(seed=cfg.seed)
    for row in rows:
        writer.write(row)
    return EXIT_OK if all(r["passed"] for r in rows) else EXIT_NUMERIC


def run(cfg: RunConfig) -> int:
    if cfg.mode == "omniscient_curves":
        return run_omniscient(cfg)
    if cfg.mode == "scoring_tests":
        return run_scoring(cfg)
    return run_sweep(cfg)


def main(argv=None) -> int:
    try:
        cfg, verbose = config_from_args(argv)
    except ConfigError as exc:
        print(f"cssbounds: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())

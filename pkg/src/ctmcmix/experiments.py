"""Synthetic experiment sweeps: one row per (axis value, repeat, method)."""
from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cluster import ClusterConfig
from .core import (
    CTMixture,
    DTMixture,
    RateMatrix,
    SoftAssignment,
    clustering_error,
    matrix_exponential,
    recovery_error,
    trail_counts,
)
from .estimators import estimate_holding
from .recover import FitConfig, em_continuous, fit_mixture
from .simulate import (
    GeneratorConfig,
    discretize_all,
    proportional_mixture,
    random_mixture,
    random_rate_matrix,
    sample_trails,
    truncate,
)

AXES = ("m", "r", "tau", "L", "f")
SWEEP_METHODS = ("dem", "ktt", "verylong", "cem", "groundtruth")
INITS = ("good", "learned", "random")
COLUMNS = ("axis", "value", "repeat", "seed", "method", "recovery_error", "clustering_error", "loglik", "seconds")


@dataclass
class ExperimentConfig:
    n: int = 10
    L: int = 2
    rate_upper: float = 1.0
    seed: int = 0
    r: int = 100
    m: int = 200
    tau: float = 0.1
    axis: str = "m"
    values: list = field(default_factory=lambda: [25, 50, 100])
    methods: list = field(default_factory=lambda: ["dem"])
    repeats: int = 5
    budget: int | None = None  # fixes r * m along the m or r axis
    init: str = "random"  # dEM initialization on the f axis
    restarts: int = 3
    max_iter: int = 100
    timing: bool = True

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"invalid axis {self.axis!r}; choose from {AXES}")
        if not self.values or any(v <= 0 for v in self.values):
            raise ValueError("sweep values must be positive")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        bad = [m for m in self.methods if m not in SWEEP_METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {SWEEP_METHODS}")
        if self.init not in INITS:
            raise ValueError(f"unknown init {self.init!r}")


def cell_params(cfg: ExperimentConfig, value) -> dict:
    p = {"n": cfg.n, "L": cfg.L, "r": cfg.r, "m": cfg.m, "tau": cfg.tau, "f": None}
    if cfg.axis == "f":
        p["f"] = float(value)
        p["L"] = 2
    elif cfg.axis == "tau":
        p["tau"] = float(value)
    else:
        p[cfg.axis] = int(value)
    if cfg.budget:
        if cfg.axis == "m":
            p["r"] = max(1, cfg.budget // p["m"])
        elif cfg.axis == "r":
            p["m"] = max(2, cfg.budget // p["r"])
    return p


def _seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def make_instance(cfg: ExperimentConfig, p: dict, repeat: int, value_idx: int) -> CTMixture:
    mix_seed = _seed(cfg.seed, repeat, p["L"])
    if p["f"] is not None:
        base = random_rate_matrix(p["n"], np.random.default_rng(mix_seed), cfg.rate_upper)
        return proportional_mixture(base, p["f"])
    return random_mixture(GeneratorConfig(p["n"], p["L"], cfg.rate_upper, mix_seed))


def proportional_init(strategy: str, trails, tau: float, f: float, n: int, rng) -> DTMixture:
    """Starting mixture for dEM when the chains are K and f K.

    ``good`` draws the chains from rates in [0, 1] and [0, f]; ``learned`` splits
    trails by their observed jump rate, estimates holding rates per half, and
    draws random jump probabilities around them; ``random`` draws both from
    rates in [0, 1].
    """
    if strategy == "good":
        chains = [random_rate_matrix(n, rng, 1.0), random_rate_matrix(n, rng, f)]
    elif strategy == "random":
        chains = [random_rate_matrix(n, rng, 1.0), random_rate_matrix(n, rng, 1.0)]
    elif strategy == "learned":
        counts = trail_counts(trails, n)
        stay = np.einsum("rii->r", counts)
        total = counts.sum(axis=(1, 2))
        speed = -np.log(np.clip(stay / np.maximum(total, 1), 1e-12, 1.0))
        fast = speed > np.median(speed)
        pooled = estimate_holding(counts.sum(axis=0), tau, min_count=1).rate
        chains = []
        for group in (~fast, fast):
            rate = estimate_holding(counts[group].sum(axis=0), tau, min_count=1).rate
            rate = np.where(rate < 0, rate, pooled)
            R = rng.uniform(0, 1, (n, n))
            np.fill_diagonal(R, 0.0)
            R = R / np.maximum(R.sum(axis=1, keepdims=True), 1e-12) * np.abs(rate)[:, None]
            chains.append(RateMatrix.from_offdiagonal(R))
    else:
        raise ValueError(f"unknown init {strategy!r}")
    mats = tuple(matrix_exponential(c, tau).T for c in chains)
    return DTMixture(mats, np.full((2, n), 1.0 / (2 * n)), tau)


def run_cell(cfg: ExperimentConfig, value_idx: int, repeat: int) -> list:
    value = cfg.values[value_idx]
    p = cell_params(cfg, value)
    truth = make_instance(cfg, p, repeat, value_idx)
    trail_seed = _seed(cfg.seed, repeat, value_idx, 7)
    horizon = p["m"] * p["tau"]
    ctrails = sample_trails(truth, p["r"], horizon, trail_seed)
    dtrails = discretize_all(ctrails, p["tau"], p["m"])
    gt = SoftAssignment.hard([x.true_chain for x in ctrails], p["L"])
    fit_cfg = FitConfig(seed=trail_seed % (2**31), restarts=cfg.restarts, max_iter=cfg.max_iter)
    rows = []
    for method in cfg.methods:
        t0 = time.perf_counter()
        if method == "cem":
            window = [truncate(x, horizon) for x in ctrails]
            res = em_continuous(
                window, p["L"], ClusterConfig(p["L"], cfg.max_iter, 1e-8, cfg.restarts, fit_cfg.seed), n=p["n"]
            )
            mix, a, ll = res.mixture, res.assignment, res.loglik
        else:
            kw = {}
            if method == "groundtruth":
                name, kw["assignment"] = "given", gt
            else:
                name = method
            if method == "dem" and p["f"] is not None:
                rng = np.random.default_rng(_seed(cfg.seed, repeat, value_idx, 11))
                kw["init"] = proportional_init(cfg.init, dtrails, p["tau"], p["f"], p["n"], rng)
            res = fit_mixture(dtrails, p["tau"], p["L"], name, fit_cfg, n=p["n"], **kw)
            mix, a, ll = res.mixture, res.assignment, res.loglik
        seconds = time.perf_counter() - t0 if cfg.timing else 0.0
        rows.append({
            "axis": cfg.axis,
            "value": value,
            "repeat": repeat,
            "seed": trail_seed,
            "method": method,
            "recovery_error": recovery_error(truth, mix),
            "clustering_error": clustering_error(a, gt),
            "loglik": ll,
            "seconds": seconds,
        })
    return rows


def _run_cell_args(args):
    return run_cell(*args)


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get("CTMCMIX_THREADS", "1")))
    except ValueError:
        return 1


def run_sweep(cfg: ExperimentConfig, workers: int | None = None) -> list:
    workers = workers or max_workers()
    jobs = [(cfg, vi, rep) for vi in range(len(cfg.values)) for rep in range(cfg.repeats)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_cell_args, jobs))
    else:
        parts = [run_cell(*job) for job in jobs]
    order = {m: i for i, m in enumerate(cfg.methods)}
    rows = [row for part in parts for row in part]
    rows.sort(key=lambda r: (cfg.values.index(r["value"]), r["repeat"], order[r["method"]]))
    return rows


def write_rows(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def median_by(rows, key="recovery_error") -> dict:
    """Median of ``key`` per (value, method)."""
    groups: dict = {}
    for row in rows:
        groups.setdefault((row["value"], row["method"]), []).append(row[key])
    return {k: float(np.median(v)) for k, v in groups.items()}

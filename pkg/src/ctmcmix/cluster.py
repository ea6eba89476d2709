"""Soft clustering of discretized trails.

Regime guidance: ``em_discrete`` for short and medium trails, ``spectral_cluster``
once trails are long compared to the mixing time, ``very_long_assignment``
when a single trail suffices to estimate its chain. ``three_gram_stats`` is the
input an SVD-based length-3 learner would consume.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.special import logsumexp
from sklearn.cluster import KMeans

from .core import (
    DiscreteChain,
    DTMixture,
    SoftAssignment,
    matrix_exponential,
    n_states,
    trail_counts,
)


@dataclass
class ClusterConfig:
    L: int
    max_iter: int = 100
    tol: float = 1e-8
    restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.L < 1 or self.max_iter < 1 or self.tol <= 0 or self.restarts < 1:
            raise ValueError("need L >= 1, max_iter >= 1, tol > 0, restarts >= 1")


@dataclass
class SpectralConfig:
    L: int
    feature: str = "transition-frequencies"
    kmeans_restarts: int = 10
    seed: int = 0
    delta: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        if self.feature not in ("transition-frequencies", "state-frequencies"):
            raise ValueError(f"unknown feature {self.feature!r}")
        if self.kmeans_restarts < 1:
            raise ValueError("kmeans_restarts must be at least 1")


@dataclass(frozen=True)
class ThreeGramStats:
    p: np.ndarray


@dataclass
class EMResult:
    mixture: DTMixture
    assignment: SoftAssignment
    loglik: float
    history: list
    iterations: int
    restart_logliks: list = field(default_factory=list)


def _log_weights(counts: np.ndarray, first: np.ndarray, mats: np.ndarray, start: np.ndarray):
    """r x L matrix of log joint weights log(s_{x0} prod T) for every trail/chain."""
    with np.errstate(divide="ignore"):
        logT = np.where(mats > 0, np.log(np.where(mats > 0, mats, 1.0)), 0.0)
        logs = np.log(start)
    out = np.einsum("rij,lij->rl", counts, logT) + logs[:, first].T
    impossible = np.einsum("rij,lij->rl", counts, (mats <= 0).astype(float)) > 0
    out[impossible] = -np.inf
    return out


def _posterior(logw: np.ndarray):
    r, L = logw.shape
    norm = logsumexp(logw, axis=1, keepdims=True)
    dead = ~np.isfinite(norm[:, 0])
    with np.errstate(invalid="ignore"):
        a = np.exp(logw - norm)
    a[dead] = 1.0 / L
    a /= a.sum(axis=1, keepdims=True)
    return a, np.flatnonzero(dead), norm[:, 0]


def _prepare(trails, n=None):
    n = n or n_states(trails)
    counts = trail_counts(trails, n)
    first = np.array([x.states[0] for x in trails], dtype=int)
    return n, counts, first


def posterior_soft_assignment(trails, M: DTMixture) -> SoftAssignment:
    _, counts, first = _prepare(trails, M.n)
    a, dead, _ = _posterior(_log_weights(counts, first, M.stacked(), M.start))
    return SoftAssignment(a, flagged=dead)


def mixture_loglik(trails, M: DTMixture) -> float:
    """Observed-data log-likelihood sum_x log sum_l s^l_{x0} prod T^l."""
    _, counts, first = _prepare(trails, M.n)
    return float(logsumexp(_log_weights(counts, first, M.stacked(), M.start), axis=1).sum())


def _mstep(a, counts, first, n, prev_mats):
    r, L = a.shape
    soft = np.einsum("rl,rij->lij", a, counts)
    tot = soft.sum(axis=2, keepdims=True)
    mats = np.where(tot > 0, soft / np.where(tot > 0, tot, 1.0), prev_mats)
    start = np.zeros((L, n))
    for ell in range(L):
        start[ell] = np.bincount(first, weights=a[:, ell], minlength=n)
    return mats, start / r


def random_dt_mixture(n: int, L: int, rng: np.random.Generator, tau=None) -> DTMixture:
    """Dirichlet(1) rows per chain, uniform starting probabilities."""
    mats = rng.dirichlet(np.ones(n), size=(L, n))
    return DTMixture(tuple(mats), np.full((L, n), 1.0 / (L * n)), tau)


def _run_em(counts, first, n, init: DTMixture, cfg: ClusterConfig):
    mats, start = init.stacked(), np.array(init.start)
    history = []
    it = 0
    while True:
        logw = _log_weights(counts, first, mats, start)
        a, dead, norm = _posterior(logw)
        ll = float(norm.sum())
        history.append(ll)
        if it >= cfg.max_iter:
            break
        if len(history) > 1:
            prev = history[-2]
            if ll - prev < cfg.tol * max(1.0, abs(prev)):
                break
        mats, start = _mstep(a, counts, first, n, mats)
        it += 1
    return mats, start, a, dead, history, it


def em_discrete(trails, cfg: ClusterConfig, init: DTMixture | None = None, n=None) -> EMResult:
    """Expectation maximization for a mixture of discrete-time chains.

    Runs ``cfg.restarts`` random initializations (or once from ``init``) and
    keeps the run with the highest final log-likelihood.
    """
    if not trails:
        raise ValueError("no trails to cluster")
    n, counts, first = _prepare(trails, n if init is None else init.n)
    tau = trails[0].tau
    rng = np.random.default_rng(cfg.seed)
    inits = [init] if init is not None else [
        random_dt_mixture(n, cfg.L, rng, tau) for _ in range(cfg.restarts)
    ]
    best = None
    finals = []
    for start_mix in inits:
        run = _run_em(counts, first, n, start_mix, cfg)
        finals.append(run[4][-1])
        if best is None or run[4][-1] > best[4][-1]:
            best = run
    mats, start, a, dead, history, it = best
    mixture = DTMixture(tuple(mats), start / start.sum(), tau)
    return EMResult(mixture, SoftAssignment(a, flagged=dead), history[-1], history, it, finals)


def trail_features(trails, n: int, feature: str = "transition-frequencies") -> np.ndarray:
    if feature == "state-frequencies":
        return np.stack([np.bincount(x.states, minlength=n) / len(x) for x in trails])
    counts = trail_counts(trails, n)
    tot = counts.sum(axis=2, keepdims=True)
    freq = np.where(tot > 0, counts / np.where(tot > 0, tot, 1.0), 0.0)
    return freq.reshape(len(trails), n * n)


def spectral_cluster(trails, cfg: SpectralConfig, n=None) -> SoftAssignment:
    """Hard clustering by k-means on the top-L singular subspace of trail features."""
    r = len(trails)
    if r < cfg.L:
        raise ValueError(f"need at least L={cfg.L} trails, got {r}")
    n = n or n_states(trails)
    X = trail_features(trails, n, cfg.feature)
    if cfg.L == 1:
        return SoftAssignment(np.ones((r, 1)))
    if np.allclose(X, X[0]):
        # degenerate features: single cluster, every row flagged
        return SoftAssignment(SoftAssignment.hard(np.zeros(r, dtype=int), cfg.L).a, range(r))
    U, S, _ = np.linalg.svd(X, full_matrices=False)
    proj = U[:, : cfg.L] * S[: cfg.L]
    km = KMeans(n_clusters=cfg.L, n_init=cfg.kmeans_restarts, random_state=cfg.seed)
    labels = km.fit_predict(proj)
    return SoftAssignment.hard(_relabel(labels), cfg.L)


def _relabel(labels) -> np.ndarray:
    """Renumber clusters by first appearance."""
    order = {}
    for lab in labels:
        order.setdefault(int(lab), len(order))
    return np.array([order[int(lab)] for lab in labels])


@dataclass
class PerTrailChain:
    chain: DiscreteChain
    counts: np.ndarray
    unvisited: list


def _rows_from_counts(counts: np.ndarray):
    n = counts.shape[0]
    tot = counts.sum(axis=1)
    T = np.full((n, n), 1.0 / n)
    seen = tot > 0
    T[seen] = counts[seen] / tot[seen, None]
    return T, [int(i) for i in np.flatnonzero(~seen)]


def per_trail_chain(x, n=None, tau=None) -> PerTrailChain:
    """M_yz = c_yz / c_y from one trail; states without transitions get uniform rows."""
    n = n or int(np.max(x.states)) + 1
    counts = trail_counts([x], n)[0]
    T, unvisited = _rows_from_counts(counts)
    return PerTrailChain(DiscreteChain(T, tau if tau is not None else x.tau), counts, unvisited)


def _pair_distance(a: PerTrailChain, b: PerTrailChain) -> float:
    common = np.setdiff1d(
        np.arange(a.counts.shape[0]), np.union1d(a.unvisited, b.unvisited)
    )
    if len(common) == 0:
        return 1.0
    diff = np.abs(a.chain.T[common] - b.chain.T[common]).sum(axis=1)
    return float(0.5 * diff.mean())


def very_long_assignment(trails, L: int, n=None) -> tuple[DTMixture, SoftAssignment]:
    """Group per-trail chain estimates into L clusters by complete linkage."""
    r = len(trails)
    if r < L:
        raise ValueError(f"need at least L={L} trails, got {r}")
    n = n or n_states(trails)
    ests = [per_trail_chain(x, n) for x in trails]
    if r == 1:
        labels = np.zeros(1, dtype=int)
    else:
        D = np.zeros((r, r))
        for i in range(r):
            for j in range(i + 1, r):
                D[i, j] = D[j, i] = _pair_distance(ests[i], ests[j])
        iu = np.triu_indices(r, k=1)
        Z = linkage(D[iu], method="complete")
        labels = _relabel(fcluster(Z, t=L, criterion="maxclust"))
    a = SoftAssignment.hard(labels, L)
    first = np.array([x.states[0] for x in trails])
    mats, starts = [], np.zeros((L, n))
    for ell in range(L):
        pooled = sum((e.counts for e, lab in zip(ests, labels) if lab == ell), np.zeros((n, n)))
        mats.append(_rows_from_counts(pooled)[0])
        starts[ell] = np.bincount(first[labels == ell], minlength=n) / r
    return DTMixture(tuple(mats), starts, trails[0].tau), a


def three_gram_stats(trails, n=None) -> ThreeGramStats:
    """Empirical frequency of (x_i, x_{i+1}, x_{i+2}) over all overlapping triples."""
    long_enough = [x for x in trails if len(x) >= 3]
    if not long_enough:
        raise ValueError("no trail of length >= 3")
    n = n or n_states(trails)
    p = np.zeros((n, n, n))
    for x in long_enough:
        s = np.asarray(x.states)
        np.add.at(p, (s[:-2], s[1:-1], s[2:]), 1.0)
    return ThreeGramStats(p / p.sum())


@dataclass
class ModelDifferenceReport:
    row_gap: np.ndarray  # ||K_y - K'_y||_2
    premise: np.ndarray  # row_gap >= Delta/tau + 8 tau (1 + K_max^2)
    discrete_gap: np.ndarray  # ||exp(K tau)_y - exp(K' tau)_y||_2
    conclusion: np.ndarray  # discrete_gap >= Delta

    @property
    def violations(self) -> int:
        return int(np.sum(self.premise & ~self.conclusion))


def model_difference_check(A, B, tau: float, Delta: float) -> ModelDifferenceReport:
    """Per-state check that a large rate-row gap survives discretization."""
    KA = getattr(A, "K", A)
    KB = getattr(B, "K", B)
    K_max = float(max(np.abs(np.diag(KA)).max(), np.abs(np.diag(KB)).max()))
    if K_max * tau > 0.5:
        raise ValueError(f"K_max * tau = {K_max * tau:.3g} exceeds 1/2")
    row_gap = np.linalg.norm(KA - KB, axis=1)
    premise = row_gap >= Delta / tau + 8 * tau * (1 + K_max**2)
    gap = np.linalg.norm(matrix_exponential(KA, tau).T - matrix_exponential(KB, tau).T, axis=1)
    return ModelDifferenceReport(row_gap, premise, gap, gap >= Delta)

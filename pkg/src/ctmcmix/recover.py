"""Recovery of rate matrices from soft-clustered discretized trails.

Each chain is fitted independently by maximizing the weighted discretized
log-likelihood sum_yz C_yz log exp(K tau)_yz, where C holds transition counts
weighted by the chain's responsibilities.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import minimize
from scipy.special import logsumexp

from . import cluster
from .core import (
    ContinuousTrail,
    CTMixture,
    DiscreteTrail,
    DTMixture,
    RateMatrix,
    SoftAssignment,
    WeightedCounts,
    n_states,
    trail_counts,
    trail_log_weight,
)
from .estimators import rate_matrix_from_counts
from .simulate import discretize_all

log = logging.getLogger(__name__)

METHODS = ("dem", "ktt", "verylong", "posterior", "given")
RATE_CAP = 50.0  # upper bound on K_yz * tau in the MLE


@dataclass
class MLEConfig:
    max_iter: int = 1000
    grad_tol: float = 1e-10
    rate_floor: float | None = None  # None: 1e-8 / tau
    init: str = "matrix-log"
    seed: int = 0

    def __post_init__(self):
        if self.max_iter < 1 or self.grad_tol <= 0:
            raise ValueError("need max_iter >= 1 and grad_tol > 0")
        if self.rate_floor is not None and self.rate_floor <= 0:
            raise ValueError("rate_floor must be positive")
        if self.init not in ("from-estimators", "matrix-log", "random"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class MLEResult:
    K: RateMatrix
    objective: float
    history: list
    iterations: int
    grad_norm: float
    init: str


def weighted_counts(trails, a: SoftAssignment, ell: int, n=None) -> WeightedCounts:
    """C_yz = sum_x a(x, ell) #{i : x_i = y, x_{i+1} = z}."""
    A = np.asarray(getattr(a, "a", a))
    if A.shape[0] != len(trails):
        raise ValueError("assignment rows do not match the number of trails")
    n = n or n_states(trails)
    return WeightedCounts(np.einsum("r,rij->ij", A[:, ell], trail_counts(trails, n)))


# --- weighted MLE ------------------------------------------------------------


def _offdiag_mask(n):
    return ~np.eye(n, dtype=bool)


def rates_from_params(theta: np.ndarray, n: int, floor: float) -> np.ndarray:
    """Generator with off-diagonals floor + exp(theta), row-major over y != z."""
    R = np.zeros((n, n))
    R[_offdiag_mask(n)] = floor + np.exp(theta)
    np.fill_diagonal(R, -R.sum(axis=1))
    return R


def params_from_rates(K: np.ndarray, floor: float) -> np.ndarray:
    off = np.asarray(K)[_offdiag_mask(K.shape[0])]
    return np.log(np.maximum(off - floor, 1e-3 * floor))


def expm_frechet_adjoint(A: np.ndarray, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """exp(A) and the adjoint Frechet derivative L(A^T, W).

    Both come out of one exponential of the block matrix [[A^T, W], [0, A^T]]:
    its upper-right block is the derivative of exp at A^T in direction W.
    """
    n = A.shape[0]
    B = np.zeros((2 * n, 2 * n))
    B[:n, :n] = A.T
    B[n:, n:] = A.T
    B[:n, n:] = W
    E = scipy.linalg.expm(B)
    return E[:n, :n].T, E[:n, n:]


def mle_objective(theta, C, tau, floor):
    """Weighted log-likelihood and its gradient in log-rate coordinates."""
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    K = rates_from_params(theta, n, floor)
    A = K * tau
    T = scipy.linalg.expm(A)
    Tc = np.maximum(T, 1e-300)
    f = float(np.sum(C * np.log(Tc)))
    W = np.where(C > 0, C / Tc, 0.0)
    # dense derivative with respect to every entry of K
    _, G = expm_frechet_adjoint(A, W)
    G = G * tau
    grad_full = G - np.diag(G)[:, None]
    grad = grad_full[_offdiag_mask(n)] * np.exp(theta)
    return f, grad


def _row_normalized(C):
    n = C.shape[0]
    tot = C.sum(axis=1)
    T = np.eye(n)
    seen = tot > 0
    T[seen] = C[seen] / tot[seen, None]
    return T


def _matrix_log_init(C, tau):
    T = _row_normalized(C)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            Lg = scipy.linalg.logm(T)
    except (ValueError, np.linalg.LinAlgError):
        return None
    if not np.all(np.isfinite(Lg)):
        return None
    if np.iscomplexobj(Lg):
        if np.abs(Lg.imag).max() > 1e-8:
            return None
        Lg = Lg.real
    K = Lg / tau
    off = K[_offdiag_mask(C.shape[0])]
    if off.size and off.min() < -1e-6 * max(1.0, np.abs(K).max()):
        return None
    return K


def _estimator_init(C, tau):
    C = np.array(C, dtype=float)
    tot = C.sum(axis=1)
    diag = np.diag(C).copy()
    # never-stayed rows would give an infinite rate; add half a pseudo-count
    starving = (tot > 0) & (diag <= 0)
    C[starving, starving] = 0.5
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return rate_matrix_from_counts(C, tau, min_count=1).K.K


def _lbfgs(theta0, C, tau, floor, bounds, max_iter, grad_tol):
    """One L-BFGS-B run; returns (theta, objective, history, iterations)."""
    scale = C.sum()

    def neg(theta):
        f, g = mle_objective(theta, C, tau, floor)
        return -f / scale, -g / scale

    f0 = -neg(theta0)[0] * scale
    if not np.isfinite(f0):
        raise ValueError("objective is -inf at the initial point: malformed counts")
    history = [f0]

    def record(intermediate_result):
        history.append(-float(intermediate_result.fun) * scale)

    res = minimize(
        neg,
        theta0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        callback=record,
        options={"maxiter": max_iter, "gtol": grad_tol, "ftol": 1e-15, "maxcor": 20},
    )
    f = -neg(res.x)[0] * scale
    if f < f0:  # never return something worse than the start
        return theta0, f0, history, int(res.nit)
    return res.x, f, history, int(res.nit)


def mle_rate_matrix(C, tau: float, cfg: MLEConfig | None = None) -> MLEResult:
    """Maximize sum_yz C_yz log exp(K tau)_yz over generators K."""
    cfg = cfg or MLEConfig()
    C = np.asarray(getattr(C, "C", C), dtype=float)
    if tau <= 0:
        raise ValueError("tau must be positive")
    if C.sum() <= 0:
        raise ValueError("count matrix has no mass")
    n = C.shape[0]
    floor = cfg.rate_floor if cfg.rate_floor is not None else 1e-8 / tau

    init_K, used = None, cfg.init
    if cfg.init == "matrix-log":
        init_K = _matrix_log_init(C, tau)
        if init_K is None:
            used = "from-estimators"
    if init_K is None and used == "from-estimators":
        try:
            init_K = _estimator_init(C, tau)
        except ValueError:
            used = "random"
    if init_K is None:
        rng = np.random.default_rng(cfg.seed)
        init_K = RateMatrix.from_offdiagonal(rng.uniform(0.1, 1.0, (n, n)) / tau * 0.1).K
        used = "random"
    # beyond RATE_CAP / tau a state is left within a step almost surely, so
    # larger rates are indistinguishable; the cap also keeps exp() finite
    lo, hi = np.log(floor) - 30.0, np.log(RATE_CAP / tau)
    bounds = [(lo, hi)] * (n * (n - 1))
    theta0 = np.clip(params_from_rates(init_K, floor), lo, hi)
    theta, f, history, nit = _lbfgs(theta0, C, tau, floor, bounds, cfg.max_iter, cfg.grad_tol)

    # The likelihood is flat once every rate saturates, and a long quasi-Newton
    # step from a poor start can land there. Retry from the count estimator.
    if np.any(theta >= hi - 1e-9) and used != "from-estimators":
        try:
            alt0 = np.clip(params_from_rates(_estimator_init(C, tau), floor), lo, hi)
        except ValueError:
            alt0 = None
        if alt0 is not None:
            alt = _lbfgs(alt0, C, tau, floor, bounds, cfg.max_iter, cfg.grad_tol)
            if alt[1] > f:
                theta, f, history, nit = alt
                used += "+from-estimators"

    _, g = mle_objective(theta, C, tau, floor)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient in rate-matrix MLE")
    K = rates_from_params(theta, n, floor)
    return MLEResult(RateMatrix(K), f, history, nit, float(np.abs(g).max() / C.sum()), used)


# --- orchestration ------------------------------------------------------------


@dataclass
class FitConfig:
    seed: int = 0
    restarts: int = 3
    max_iter: int = 100
    tol: float = 1e-8
    kmeans_restarts: int = 10
    mle: MLEConfig = field(default_factory=MLEConfig)


@dataclass
class FitResult:
    mixture: CTMixture
    assignment: SoftAssignment
    loglik: float
    iterations: int
    flags: dict = field(default_factory=dict)
    trails: list = field(default_factory=list, repr=False)


def _ensure_discrete(data, tau, m):
    if data and isinstance(data[0], ContinuousTrail):
        if m is None:
            raise ValueError("continuous trails need m to be discretized")
        return discretize_all(data, tau, m)
    return [x if x.tau is not None else DiscreteTrail(x.states, tau) for x in data]


def fit_mixture(
    data,
    tau: float,
    L: int,
    method: str = "dem",
    cfg: FitConfig | None = None,
    m: int | None = None,
    n: int | None = None,
    mixture=None,
    assignment: SoftAssignment | None = None,
    init: DTMixture | None = None,
    absorbing=(),
) -> FitResult:
    """Discretize, soft-cluster, then fit one weighted MLE per chain.

    ``method`` picks the clustering stage: ``dem`` (discrete EM), ``ktt``
    (spectral), ``verylong`` (per-trail chains), ``posterior`` (responsibilities
    under a given ``mixture``), or ``given`` (use ``assignment`` as is).
    """
    cfg = cfg or FitConfig()
    if L < 1:
        raise ValueError("L must be at least 1")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    trails = _ensure_discrete(list(data), tau, m)
    if not trails:
        raise ValueError("no trails")
    n = n or n_states(trails)
    iterations = 0
    flags: dict = {}

    if method == "dem":
        res = cluster.em_discrete(
            trails,
            cluster.ClusterConfig(L, cfg.max_iter, cfg.tol, cfg.restarts, cfg.seed),
            init=init,
            n=n,
        )
        a, iterations = res.assignment, res.iterations
    elif method == "ktt":
        a = cluster.spectral_cluster(
            trails, cluster.SpectralConfig(L, kmeans_restarts=cfg.kmeans_restarts, seed=cfg.seed), n=n
        )
    elif method == "verylong":
        _, a = cluster.very_long_assignment(trails, L, n=n)
    elif method == "posterior":
        if mixture is None:
            raise ValueError("method 'posterior' needs a mixture")
        dt = mixture.discretize(tau) if isinstance(mixture, CTMixture) else mixture
        a = cluster.posterior_soft_assignment(trails, dt)
    else:
        if assignment is None:
            raise ValueError("method 'given' needs an assignment")
        a = assignment
    if a.L != L or a.r != len(trails):
        raise ValueError("assignment shape does not match trails and L")
    if a.flagged:
        flags["uniform_rows"] = list(a.flagged)

    r = len(trails)
    counts = trail_counts(trails, n)
    first = np.array([x.states[0] for x in trails])
    A = a.a
    start = np.stack([np.bincount(first, weights=A[:, ell], minlength=n) for ell in range(L)]) / r
    mass = A.sum(axis=0)
    chains: list = [None] * L
    for ell in range(L):
        if mass[ell] < 1e-6 * r:
            continue
        C = np.einsum("r,rij->ij", A[:, ell], counts)
        K = mle_rate_matrix(C, tau, cfg.mle).K
        if len(absorbing):
            R = np.array(K.K)
            R[list(absorbing)] = 0.0
            K = RateMatrix.from_offdiagonal(R)
        chains[ell] = K
    empty = [ell for ell in range(L) if chains[ell] is None]
    if empty:
        heaviest = chains[int(np.argmax(mass))]
        rng = np.random.default_rng(cfg.seed)
        for ell in empty:
            R = heaviest.K * rng.uniform(0.9, 1.1, size=(n, n))
            chains[ell] = RateMatrix.from_offdiagonal(R)
        flags["empty_chains"] = empty
        log.warning("chains %s received no assignment mass; reseeded from chain %d", empty, int(np.argmax(mass)))
    start = start / start.sum()
    fitted = CTMixture(tuple(chains), start)
    ll = cluster.mixture_loglik(trails, fitted.discretize(tau))
    return FitResult(fitted, a, ll, iterations, flags, trails)


def discretized_loglik(trails, M: CTMixture, tau: float) -> float:
    return cluster.mixture_loglik(trails, M.discretize(tau))


# --- continuous-time EM -------------------------------------------------------


def continuous_stats(trails, n: int):
    """Per-trail jump counts (r x n x n), holding times (r x n) and first states."""
    r = len(trails)
    J = np.zeros((r, n, n))
    H = np.zeros((r, n))
    first = np.zeros(r, dtype=int)
    for k, x in enumerate(trails):
        s, t = x.states, x.times
        if len(s) > 1:
            np.add.at(J[k], (s[:-1], s[1:]), 1.0)
        dur = np.diff(np.append(t, max(x.horizon, t[-1])))
        np.add.at(H[k], s, dur)
        first[k] = s[0]
    return J, H, first


def _continuous_logw(J, H, first, rates, start):
    off = rates.copy()
    for R in off:
        np.fill_diagonal(R, 0.0)
    with np.errstate(divide="ignore"):
        logK = np.where(off > 0, np.log(np.where(off > 0, off, 1.0)), 0.0)
        logs = np.log(start)
    hold = -np.einsum("lyy->ly", rates)
    out = np.einsum("rij,lij->rl", J, logK) - H @ hold.T + logs[:, first].T
    impossible = np.einsum("rij,lij->rl", J, (off <= 0).astype(float)) > 0
    out[impossible] = -np.inf
    return out


@dataclass
class CEMResult:
    mixture: CTMixture
    assignment: SoftAssignment
    loglik: float
    history: list
    iterations: int
    flags: dict = field(default_factory=dict)


def continuous_loglik(trails, M: CTMixture) -> float:
    J, H, first = continuous_stats(trails, M.n)
    rates = np.stack([c.K for c in M.chains])
    return float(logsumexp(_continuous_logw(J, H, first, rates, M.start), axis=1).sum())


def em_continuous(trails, L: int, cfg: cluster.ClusterConfig | None = None, n=None) -> CEMResult:
    """EM on fully observed jump paths with closed-form rate updates.

    The M-step sets K_yz = (soft jumps y -> z) / (soft time spent in y).
    """
    cfg = cfg or cluster.ClusterConfig(L)
    if not trails:
        raise ValueError("no trails")
    n = n or n_states(trails)
    J, H, first = continuous_stats(trails, n)
    time_in = H.sum(axis=0)
    pooled = np.where(time_in[:, None] > 0, J.sum(axis=0) / np.where(time_in > 0, time_in, 1.0)[:, None], 0.0)
    np.fill_diagonal(pooled, 0.0)
    rng = np.random.default_rng(cfg.seed)
    best = None
    for _ in range(cfg.restarts):
        rates = np.stack([
            RateMatrix.from_offdiagonal(pooled * rng.uniform(0.5, 1.5, (n, n))).K for _ in range(L)
        ])
        start = np.full((L, n), 1.0 / (L * n))
        run = _run_cem(J, H, first, rates, start, cfg)
        if best is None or run[3][-1] > best[3][-1]:
            best = run
    rates, start, a, history, it, unest = best
    mix = CTMixture(tuple(RateMatrix(R) for R in rates), start / start.sum())
    flags = {"unestimated": unest} if unest else {}
    return CEMResult(mix, SoftAssignment(a), history[-1], history, it, flags)


def em_continuous_from(trails, init: CTMixture, cfg: cluster.ClusterConfig) -> CEMResult:
    """Run continuous EM from a given starting mixture."""
    J, H, first = continuous_stats(trails, init.n)
    rates = np.stack([c.K for c in init.chains])
    rates, start, a, history, it, unest = _run_cem(J, H, first, rates, np.array(init.start), cfg)
    mix = CTMixture(tuple(RateMatrix(R) for R in rates), start / start.sum())
    return CEMResult(mix, SoftAssignment(a), history[-1], history, it, {"unestimated": unest} if unest else {})


def _run_cem(J, H, first, rates, start, cfg):
    r = J.shape[0]
    L, n = start.shape
    history = []
    it = 0
    unest: list = []
    while True:
        logw = _continuous_logw(J, H, first, rates, start)
        a, _, norm = cluster._posterior(logw)
        history.append(float(norm.sum()))
        if it >= cfg.max_iter:
            break
        if len(history) > 1 and history[-1] - history[-2] < cfg.tol * max(1.0, abs(history[-2])):
            break
        jumps = np.einsum("rl,rij->lij", a, J)
        hold = a.T @ H
        new = rates.copy()
        unest = []
        for ell in range(L):
            for y in range(n):
                if hold[ell, y] > 0:
                    row = jumps[ell, y] / hold[ell, y]
                    row[y] = 0.0
                    row[y] = -row.sum()
                    new[ell, y] = row
                else:
                    unest.append((ell, y))
        rates = new
        start = np.stack([np.bincount(first, weights=a[:, ell], minlength=n) for ell in range(L)]) / r
        it += 1
    return rates, start, a, history, it, unest


# --- diagnostics and prediction -----------------------------------------------


def amgm_gap(p, a=None) -> tuple[float, float, float]:
    """(geometric, arithmetic, upper) means of likelihoods ``p`` under weights ``a``.

    ``upper = L * max(a) * geometric``. The sandwich
    geometric <= arithmetic <= upper holds when ``a`` is proportional to ``p``
    (the posterior responsibilities), which is the default when ``a`` is None.
    """
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise ValueError("likelihoods must be nonnegative")
    if a is None:
        a = p / p.sum()
    a = np.asarray(a, dtype=float)
    active = a > 0
    if np.any(p[active] == 0):
        geometric = 0.0
    else:
        geometric = float(np.exp(np.sum(a[active] * np.log(p[active]))))
    arithmetic = float(np.dot(a, p))
    return geometric, arithmetic, len(p) * float(a.max()) * geometric


def absorption_probabilities(K, hit: int, miss: int) -> np.ndarray:
    """Probability of reaching ``hit`` before ``miss`` from every state."""
    K = K if isinstance(K, RateMatrix) else RateMatrix(K)
    n = K.n
    P = K.jump_matrix()
    transient = np.array([y for y in range(n) if y not in (hit, miss)], dtype=int)
    h = np.zeros(n)
    h[hit] = 1.0
    if len(transient) == 0:
        return h
    # every transient state must lead to hit or miss
    reach = {hit, miss}
    changed = True
    while changed:
        changed = False
        for y in transient:
            if y not in reach and any(P[y, z] > 0 for z in reach):
                reach.add(int(y))
                changed = True
    stuck = [int(y) for y in transient if y not in reach]
    if stuck:
        raise ValueError(f"substochastic absorption: states {stuck} cannot reach hit or miss")
    A = np.eye(len(transient)) - P[np.ix_(transient, transient)]
    h[transient] = np.linalg.solve(A, P[transient, hit])
    return np.clip(h, 0.0, 1.0)


def prefix_posterior(M: CTMixture, prefix, tau: float | None = None) -> np.ndarray:
    """Pr[chain | prefix] from the continuous path likelihood or the discretized one."""
    if isinstance(prefix, ContinuousTrail):
        J, H, first = continuous_stats([prefix], M.n)
        rates = np.stack([c.K for c in M.chains])
        logw = _continuous_logw(J, H, first, rates, M.start)[0]
    else:
        tau = tau if tau is not None else prefix.tau
        if tau is None:
            raise ValueError("discrete prefix needs tau")
        dt = M.discretize(tau)
        logw = np.array([trail_log_weight(prefix, dt, ell) for ell in range(M.L)])
    norm = logsumexp(logw)
    if not np.isfinite(norm):
        return np.full(M.L, 1.0 / M.L)
    return np.exp(logw - norm)


def predict_absorption(M: CTMixture, prefix, hit: int, miss: int, tau: float | None = None) -> float:
    """Pr[trail ends in ``hit``] by total probability over the chain posterior."""
    last = int(prefix.states[-1])
    if last == hit:
        return 1.0
    if last == miss:
        return 0.0
    post = prefix_posterior(M, prefix, tau)
    probs = np.array([absorption_probabilities(c, hit, miss)[last] for c in M.chains])
    return float(np.clip(post @ probs, 0.0, 1.0))

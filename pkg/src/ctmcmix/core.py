"""Domain types, matrix exponential, distances and evaluation metrics.

Everything here is a pure function of its inputs. Arrays stored on the
dataclasses are copied and marked read-only at construction.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment
from scipy.sparse.csgraph import connected_components

ROW_TOL = 1e-12
STOCH_TOL = 1e-10
NEG_CLAMP = 1e-12
EXHAUSTIVE_MAX_L = 8


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RateMatrix:
    """Generator of a CTMC: nonnegative off-diagonals, rows summing to zero."""

    K: np.ndarray

    def __post_init__(self):
        K = _frozen(self.K)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ValueError(f"rate matrix must be square, got shape {K.shape}")
        if not np.all(np.isfinite(K)):
            raise ValueError("rate matrix has non-finite entries")
        off = K[~np.eye(K.shape[0], dtype=bool)]
        if np.any(off < 0):
            raise ValueError("rate matrix has negative off-diagonal entries")
        scale = max(1.0, float(np.abs(K).max()))
        if np.any(np.abs(K.sum(axis=1)) > ROW_TOL * scale * K.shape[0]):
            raise ValueError("rate matrix rows must sum to zero")
        object.__setattr__(self, "K", K)

    @classmethod
    def from_offdiagonal(cls, rates) -> "RateMatrix":
        """Build a generator from off-diagonal rates; the diagonal is ignored."""
        R = np.array(rates, dtype=float)
        np.fill_diagonal(R, 0.0)
        np.fill_diagonal(R, -R.sum(axis=1))
        return cls(R)

    @property
    def n(self) -> int:
        return self.K.shape[0]

    @property
    def holding_rates(self) -> np.ndarray:
        """|K_yy| per state."""
        return -np.diag(self.K).copy()

    def jump_matrix(self) -> np.ndarray:
        """Embedded jump chain K_yz/|K_yy|; absorbing rows stay on the diagonal."""
        rates = self.holding_rates
        P = np.array(self.K, dtype=float)
        np.fill_diagonal(P, 0.0)
        absorbing = rates <= 0
        P[~absorbing] /= rates[~absorbing, None]
        P[absorbing] = 0.0
        P[absorbing, absorbing] = 1.0
        return P


@dataclass(frozen=True)
class CTMixture:
    chains: tuple
    start: np.ndarray

    def __post_init__(self):
        chains = tuple(c if isinstance(c, RateMatrix) else RateMatrix(c) for c in self.chains)
        if not chains:
            raise ValueError("mixture needs at least one chain")
        n = chains[0].n
        if any(c.n != n for c in chains):
            raise ValueError("all chains must share the same number of states")
        start = _frozen(self.start)
        if start.shape != (len(chains), n):
            raise ValueError(f"start matrix must have shape {(len(chains), n)}, got {start.shape}")
        if np.any(start < 0) or abs(start.sum() - 1.0) > ROW_TOL * 10:
            raise ValueError("start matrix must be nonnegative and sum to 1")
        object.__setattr__(self, "chains", chains)
        object.__setattr__(self, "start", start)

    @property
    def L(self) -> int:
        return len(self.chains)

    @property
    def n(self) -> int:
        return self.chains[0].n

    def discretize(self, tau: float) -> "DTMixture":
        return DTMixture(
            tuple(matrix_exponential(c, tau).T for c in self.chains), self.start, tau
        )


@dataclass(frozen=True)
class DiscreteChain:
    T: np.ndarray
    tau: float | None = None

    def __post_init__(self):
        T = _frozen(self.T)
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise ValueError(f"transition matrix must be square, got shape {T.shape}")
        if np.any(T < 0) or np.any(T > 1 + STOCH_TOL):
            raise ValueError("transition matrix entries must lie in [0, 1]")
        if np.any(np.abs(T.sum(axis=1) - 1) > STOCH_TOL):
            raise ValueError("transition matrix rows must sum to 1")
        object.__setattr__(self, "T", T)

    @property
    def n(self) -> int:
        return self.T.shape[0]


@dataclass(frozen=True)
class DTMixture:
    """Discrete-time mixture: one transition matrix per chain plus joint starts."""

    chains: tuple
    start: np.ndarray
    tau: float | None = None

    def __post_init__(self):
        mats = tuple(
            c.T if isinstance(c, DiscreteChain) else DiscreteChain(c).T for c in self.chains
        )
        n = mats[0].shape[0]
        if any(m.shape != (n, n) for m in mats):
            raise ValueError("all chains must share the same number of states")
        start = _frozen(self.start)
        if start.shape != (len(mats), n):
            raise ValueError(f"start matrix must have shape {(len(mats), n)}")
        if np.any(start < 0) or abs(start.sum() - 1.0) > 1e-9:
            raise ValueError("start matrix must be nonnegative and sum to 1")
        object.__setattr__(self, "chains", mats)
        object.__setattr__(self, "start", start)

    @property
    def L(self) -> int:
        return len(self.chains)

    @property
    def n(self) -> int:
        return self.chains[0].shape[0]

    def stacked(self) -> np.ndarray:
        """L x n x n array of transition matrices."""
        return np.stack(self.chains)


@dataclass(frozen=True)
class ContinuousTrail:
    """Jump sequence of one sampled path.

    ``states[k]`` is entered at ``times[k]``; ``times[0] == 0``. The path is
    observed on ``[0, horizon]`` unless ``absorbed`` is set, in which case the
    last state holds forever.
    """

    states: np.ndarray
    times: np.ndarray
    horizon: float
    true_chain: int | None = None
    absorbed: bool = False

    def __post_init__(self):
        states = _frozen(self.states, dtype=np.int64)
        times = _frozen(self.times)
        if states.ndim != 1 or states.shape != times.shape or len(states) == 0:
            raise ValueError("trail needs matching, non-empty state and time sequences")
        if states.min() < 0:
            raise ValueError("state labels must be nonnegative")
        if times[0] != 0:
            raise ValueError("trail entry times must start at 0")
        if np.any(np.diff(times) <= 0):
            raise ValueError("trail entry times must be strictly increasing")
        if np.any(np.diff(states) == 0):
            raise ValueError("consecutive trail states must differ")
        if self.horizon < times[-1]:
            raise ValueError("horizon precedes the last event")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "horizon", float(self.horizon))

    def __len__(self):
        return len(self.states)

    def state_at(self, t) -> np.ndarray:
        """State occupying each time in ``t``; a jump at exactly t is visible at t."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right") - 1
        return self.states[idx]


@dataclass(frozen=True)
class DiscreteTrail:
    states: np.ndarray
    tau: float | None = None

    def __post_init__(self):
        states = _frozen(self.states, dtype=np.int64)
        if states.ndim != 1 or len(states) == 0:
            raise ValueError("discrete trail must be a non-empty 1-d sequence")
        if states.min() < 0:
            raise ValueError("state labels must be nonnegative")
        if self.tau is not None and self.tau <= 0:
            raise ValueError("tau must be positive")
        object.__setattr__(self, "states", states)

    def __len__(self):
        return len(self.states)

    @property
    def m(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class SoftAssignment:
    """r x L responsibilities; ``flagged`` lists rows that were set uniform."""

    a: np.ndarray
    flagged: tuple = field(default=())

    def __post_init__(self):
        a = _frozen(self.a)
        if a.ndim != 2:
            raise ValueError("assignment must be an r x L matrix")
        if np.any(a < 0) or np.any(np.abs(a.sum(axis=1) - 1) > STOCH_TOL):
            raise ValueError("assignment rows must be nonnegative and sum to 1")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "flagged", tuple(int(i) for i in self.flagged))

    @property
    def r(self) -> int:
        return self.a.shape[0]

    @property
    def L(self) -> int:
        return self.a.shape[1]

    @classmethod
    def hard(cls, labels: Sequence[int], L: int) -> "SoftAssignment":
        labels = np.asarray(labels, dtype=int)
        a = np.zeros((len(labels), L))
        a[np.arange(len(labels)), labels] = 1.0
        return cls(a)

    def entropy(self) -> np.ndarray:
        """Shannon entropy (bits) of each row."""
        a = self.a
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(a > 0, -a * np.log2(a), 0.0)
        return terms.sum(axis=1)


@dataclass(frozen=True)
class WeightedCounts:
    C: np.ndarray

    def __post_init__(self):
        C = _frozen(self.C)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ValueError("count matrix must be square")
        if np.any(C < 0) or not np.all(np.isfinite(C)):
            raise ValueError("counts must be finite and nonnegative")
        object.__setattr__(self, "C", C)

    @property
    def n(self) -> int:
        return self.C.shape[0]

    @property
    def row_totals(self) -> np.ndarray:
        return self.C.sum(axis=1)

    @property
    def total(self) -> float:
        return float(self.C.sum())


Chainish = Union[RateMatrix, DiscreteChain, np.ndarray]


def _as_rate(K) -> np.ndarray:
    return K.K if isinstance(K, RateMatrix) else np.asarray(K, dtype=float)


def matrix_exponential(K, tau: float) -> DiscreteChain:
    """Transition matrix ``exp(K tau)`` of a CTMC observed every ``tau``.

    Entries in ``[-1e-12, 0)`` are clamped to zero; anything more negative is
    treated as a numerical failure.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    A = _as_rate(K)
    if not np.all(np.isfinite(A)):
        raise ValueError("rate matrix has non-finite entries")
    T = scipy.linalg.expm(A * tau)
    if not np.all(np.isfinite(T)) or T.min() < -NEG_CLAMP:
        raise FloatingPointError("matrix exponential produced invalid entries")
    T = np.clip(T, 0.0, 1.0)
    return DiscreteChain(T / T.sum(axis=1, keepdims=True), tau)


def _is_irreducible(adjacency: np.ndarray) -> bool:
    ncomp, _ = connected_components(adjacency > 0, directed=True, connection="strong")
    return ncomp == 1


def stationary_distribution(chain: Chainish) -> np.ndarray:
    """Unique stationary distribution of an irreducible chain.

    Accepts a RateMatrix (solves pi K = 0) or a DiscreteChain (pi T = pi).
    """
    if isinstance(chain, DiscreteChain):
        G = chain.T - np.eye(chain.n)
        adj = chain.T.copy()
    else:
        G = _as_rate(chain)
        adj = G.copy()
    n = G.shape[0]
    np.fill_diagonal(adj, 0.0)
    if n > 1 and not _is_irreducible(adj):
        raise ValueError("chain is reducible: no unique stationary distribution")
    # replace one balance equation by the normalisation constraint
    A = np.vstack([G.T[:-1], np.ones(n)])
    b = np.zeros(n)
    b[-1] = 1.0
    pi = np.linalg.solve(A, b)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _worst_tv(T: np.ndarray, pi: np.ndarray) -> float:
    return 0.5 * float(np.abs(T - pi[None, :]).sum(axis=1).max())


def mixing_time(chain: Chainish, resolution: float = 1e-3) -> float:
    """Smallest t with max over point-mass starts of TV(sT(t), pi) <= 1/3.

    For a RateMatrix the answer is a multiple of ``resolution``; for a
    DiscreteChain it is an integer number of steps.
    """
    pi = stationary_distribution(chain)
    if isinstance(chain, DiscreteChain):
        T = chain.T

        def dist(k: int) -> float:
            return _worst_tv(np.linalg.matrix_power(T, k), pi)

        step = 1.0
    else:
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        A = _as_rate(chain)

        def dist(k: int) -> float:
            return _worst_tv(scipy.linalg.expm(A * (k * resolution)), pi)

        step = resolution

    if dist(0) <= 1 / 3:
        return 0.0
    hi = 1
    while dist(hi) > 1 / 3:
        hi *= 2
        if hi > 2**50:
            raise RuntimeError("mixing time search did not terminate")
    lo = hi // 2
    # invariant: dist(lo) > 1/3 >= dist(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if dist(mid) <= 1 / 3:
            hi = mid
        else:
            lo = mid
    return float(hi * step)


def _tv_pair(a: float, alpha: float, b: float, beta: float) -> float:
    """Integral over [0, inf) of |a e^{-alpha t} - b e^{-beta t}|."""
    if a == 0 and b == 0:
        return 0.0
    if a == 0:
        return b / beta
    if b == 0:
        return a / alpha
    if alpha == beta:
        return abs(a - b) / alpha
    total = a / alpha - b / beta
    t_star = np.log(a / b) / (alpha - beta)
    if not t_star > 0:
        return abs(total)
    head = a * -np.expm1(-alpha * t_star) / alpha - b * -np.expm1(-beta * t_star) / beta
    return abs(head) + abs(total - head)


def tv_ctmc_rows(row: np.ndarray, other: np.ndarray, y: int) -> float:
    """TV distance between the (next state, jump time) laws of two generator rows.

    ``y`` is the index of the diagonal entry in both rows.
    """
    row = np.asarray(row, dtype=float)
    other = np.asarray(other, dtype=float)
    if row.shape != other.shape:
        raise ValueError("rows must have the same length")
    alpha, beta = -row[y], -other[y]
    mask = np.arange(len(row)) != y
    for rate, off in ((alpha, row[mask]), (beta, other[mask])):
        if rate <= 0 and np.any(off > 0):
            raise ValueError("row has zero holding rate but nonzero off-diagonal rates")
    total = sum(_tv_pair(a, alpha, b, beta) for a, b in zip(row[mask], other[mask]))
    return 0.5 * total


def chain_recovery_error(K, K_other) -> float:
    """Mean over states of the row-wise continuous TV distance."""
    A, B = _as_rate(K), _as_rate(K_other)
    if A.shape != B.shape:
        raise ValueError("rate matrices have different shapes")
    n = A.shape[0]
    return sum(tv_ctmc_rows(A[y], B[y], y) for y in range(n)) / n


def min_permutation_cost(cost: np.ndarray) -> tuple[float, tuple]:
    """min over permutations sigma of sum_l cost[l, sigma(l)].

    Exhaustive for L <= 8, Hungarian assignment beyond.
    """
    L = cost.shape[0]
    if L <= EXHAUSTIVE_MAX_L:
        perms = np.array(list(itertools.permutations(range(L))))
        totals = cost[np.arange(L)[None, :], perms].sum(axis=1)
        best = int(np.argmin(totals))
        return float(totals[best]), tuple(int(p) for p in perms[best])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum()), tuple(int(c) for c in cols)


def recovery_error(A: CTMixture, B: CTMixture) -> float:
    if A.L != B.L or A.n != B.n:
        raise ValueError(f"mixtures differ in shape: L={A.L},{B.L} n={A.n},{B.n}")
    cost = np.array([[chain_recovery_error(a, b) for b in B.chains] for a in A.chains])
    return min_permutation_cost(cost)[0] / A.L


def clustering_error(a: SoftAssignment, a_gt: SoftAssignment) -> float:
    X, Y = np.asarray(getattr(a, "a", a)), np.asarray(getattr(a_gt, "a", a_gt))
    if X.shape != Y.shape:
        raise ValueError(f"assignment shapes differ: {X.shape} vs {Y.shape}")
    cost = np.abs(X[:, :, None] - Y[:, None, :]).sum(axis=0)
    return min_permutation_cost(cost)[0] / (2 * X.shape[0])


def trail_log_weight(x: DiscreteTrail, mixture: DTMixture, ell: int) -> float:
    """log of s^ell_{x0} * prod_i T^ell_{x_i x_{i+1}}; -inf when any factor is 0."""
    s = np.asarray(x.states)
    n = mixture.n
    if s.min() < 0 or s.max() >= n:
        raise ValueError(f"trail states outside [0, {n})")
    T = mixture.chains[ell]
    factors = np.concatenate([[mixture.start[ell, s[0]]], T[s[:-1], s[1:]]])
    if np.any(factors <= 0):
        return -np.inf
    return float(np.log(factors).sum())


def condition_number(M) -> float:
    """K_max / K_min over all holding rates of the mixture."""
    chains = M.chains if isinstance(M, CTMixture) else [M]
    rates = np.concatenate([RateMatrix(_as_rate(c)).holding_rates for c in chains])
    if np.any(rates <= 0):
        raise ValueError("degenerate holding rate: some |K_yy| is zero")
    return float(rates.max() / rates.min())


def n_states(trails) -> int:
    """Smallest state space covering every trail."""
    return int(max(int(np.max(x.states)) for x in trails)) + 1


def trail_counts(trails, n: int) -> np.ndarray:
    """r x n x n array of consecutive-pair counts, one slice per trail."""
    out = np.zeros((len(trails), n, n))
    for k, x in enumerate(trails):
        s = np.asarray(getattr(x, "states", x))
        if len(s) > 1:
            np.add.at(out[k], (s[:-1], s[1:]), 1.0)
    return out

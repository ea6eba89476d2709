"""Single-chain estimators from discretized counts and tau-selection advisories."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import RateMatrix, WeightedCounts, n_states, trail_counts


@dataclass
class EstimatorConfig:
    eps_h: float = 0.1
    eps_t: float = 0.1
    eps: float = 0.1
    min_count: int = 20

    def __post_init__(self):
        for name in ("eps_h", "eps_t", "eps"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.min_count < 1:
            raise ValueError("min_count must be at least 1")


@dataclass
class HoldingEstimate:
    q: np.ndarray  # self-transition fraction per state (nan where unobserved)
    rate: np.ndarray  # estimated K_yy <= 0 (0 where unestimated)
    unobserved: list
    underflow: list
    low_count: list

    @property
    def unestimated(self) -> list:
        return sorted(set(self.unobserved) | set(self.underflow))


@dataclass
class RateEstimate:
    K: RateMatrix
    unestimated: list
    no_jumps: list


def _counts(C) -> np.ndarray:
    return C.C if isinstance(C, WeightedCounts) else np.asarray(C, dtype=float)


def estimate_holding(C, tau: float, min_count: int = 20) -> HoldingEstimate:
    """Holding probability q_y = C_yy / c_y and rate K_yy = log(q_y) / tau."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    C = _counts(C)
    c = C.sum(axis=1)
    diag = np.diag(C)
    q = np.full(len(c), np.nan)
    seen = c > 0
    q[seen] = diag[seen] / c[seen]
    rate = np.zeros(len(c))
    ok = seen & (q > 0)
    rate[ok] = np.log(q[ok]) / tau
    unobserved = [int(i) for i in np.flatnonzero(~seen)]
    underflow = [int(i) for i in np.flatnonzero(seen & (q <= 0))]
    low = [int(i) for i in np.flatnonzero(seen & (c < min_count))]
    if low:
        warnings.warn(f"states {low} have fewer than {min_count} transitions", stacklevel=2)
    return HoldingEstimate(q, rate, unobserved, underflow, low)


def estimate_jump_probs(C) -> tuple[np.ndarray, list]:
    """Jump probabilities among state-changing transitions.

    Returns the n x n matrix of p_yz (zero diagonal) and the states without
    any observed state change, whose rows are left at zero.
    """
    C = _counts(C)
    off = C.copy()
    np.fill_diagonal(off, 0.0)
    moves = off.sum(axis=1)
    P = np.zeros_like(off)
    has = moves > 0
    P[has] = off[has] / moves[has, None]
    return P, [int(i) for i in np.flatnonzero(~has)]


def rate_matrix_from_counts(C, tau: float, min_count: int = 20) -> RateEstimate:
    """Compose holding and jump estimates into K_yz = p_yz |K_yy|."""
    C = _counts(C)
    if C.sum() <= 0:
        raise ValueError("all states unestimated: no weighted transitions")
    hold = estimate_holding(C, tau, min_count)
    P, no_jumps = estimate_jump_probs(C)
    R = P * np.abs(hold.rate)[:, None]
    unest = set(hold.unestimated)
    R[sorted(unest)] = 0.0
    if len(unest) == C.shape[0]:
        raise ValueError("all states unestimated")
    return RateEstimate(RateMatrix.from_offdiagonal(R), sorted(unest), no_jumps)


def estimate_rate_matrix(trails, weights=None, tau=None, cfg: EstimatorConfig | None = None, n=None):
    """Weighted-count estimator of one chain's rate matrix from discrete trails."""
    cfg = cfg or EstimatorConfig()
    tau = tau if tau is not None else trails[0].tau
    if tau is None or tau <= 0:
        raise ValueError("a positive tau is required")
    n = n or n_states(trails)
    w = np.ones(len(trails)) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if not np.any(w > 0):
        raise ValueError("all weights are zero")
    C = np.einsum("r,rij->ij", w, trail_counts(trails, n))
    return rate_matrix_from_counts(C, tau, cfg.min_count)


def recommend_tau(kappa: float, K_max: float, eps: float, variant: str = "main") -> float:
    """Discretization interval eps/(100 kappa K_max), or sqrt(eps)/(3 K_max).

    The ``"appendix"`` variant reads ``eps`` as the holding-error target.
    """
    if kappa < 1 or K_max <= 0 or not 0 < eps < 1:
        raise ValueError("need kappa >= 1, K_max > 0 and eps in (0, 1)")
    if variant == "main":
        return eps / (100 * kappa * K_max)
    if variant == "appendix":
        return float(np.sqrt(eps) / (3 * K_max))
    raise ValueError(f"unknown variant {variant!r}")


def bad_transition_bound(K_max: float, tau: float) -> tuple[float, float]:
    """(exact, bound): 1-(1+x)e^{-x} and min(1, x^2) with x = K_max tau."""
    if K_max <= 0 or tau <= 0:
        raise ValueError("K_max and tau must be positive")
    x = K_max * tau
    exact = -np.expm1(-x) - x * np.exp(-x)
    return float(max(exact, 0.0)), float(min(1.0, x * x))

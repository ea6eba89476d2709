"""Synthetic mixtures, continuous-time trail sampling and discretization."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ContinuousTrail, CTMixture, DiscreteTrail, RateMatrix


@dataclass
class GeneratorConfig:
    n: int
    L: int
    rate_upper: float = 1.0
    seed: int = 0
    absorbing: list = field(default_factory=list)

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.L < 1:
            raise ValueError("L must be at least 1")
        if self.rate_upper <= 0:
            raise ValueError("rate_upper must be positive")
        absorbing = list(self.absorbing)
        if len(set(absorbing)) != len(absorbing):
            raise ValueError("absorbing states must be distinct")
        if len(absorbing) >= self.n:
            raise ValueError("need fewer absorbing states than states")
        if any(not 0 <= a < self.n for a in absorbing):
            raise ValueError("absorbing state index out of range")


def trail_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for trail ``index`` so serial and parallel runs agree."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), 1, int(index)]))


def random_rate_matrix(n, rng, rate_upper=1.0, absorbing=()) -> RateMatrix:
    R = rng.uniform(0.0, rate_upper, size=(n, n))
    R[list(absorbing)] = 0.0
    return RateMatrix.from_offdiagonal(R)


def random_mixture(cfg: GeneratorConfig) -> CTMixture:
    rng = np.random.default_rng(cfg.seed)
    chains = [
        random_rate_matrix(cfg.n, rng, cfg.rate_upper, cfg.absorbing) for _ in range(cfg.L)
    ]
    start = rng.dirichlet(np.ones(cfg.L * cfg.n)).reshape(cfg.L, cfg.n)
    return CTMixture(tuple(chains), start)


def proportional_mixture(K: RateMatrix, f: float) -> CTMixture:
    """Two chains (K, f K) with uniform starting probabilities."""
    if f <= 0:
        raise ValueError("proportionality factor must be positive")
    K = K if isinstance(K, RateMatrix) else RateMatrix(K)
    scaled = RateMatrix(f * K.K)
    return CTMixture((K, scaled), np.full((2, K.n), 1.0 / (2 * K.n)))


def sample_continuous_trail(
    M: CTMixture, horizon: float, rng: np.random.Generator
) -> ContinuousTrail:
    """Gillespie-style path of the mixture up to ``horizon`` or absorption."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    start = M.start.ravel()
    if start.sum() <= 0:
        raise ValueError("start matrix is all zero")
    cell = rng.choice(start.size, p=start / start.sum())
    ell, y = divmod(int(cell), M.n)
    K = M.chains[ell]
    rates = K.holding_rates
    jumps = K.jump_matrix()
    cum = np.cumsum(jumps, axis=1)

    states, times = [y], [0.0]
    t = 0.0
    absorbed = False
    while True:
        if rates[y] <= 0:
            absorbed = True
            break
        t += rng.exponential(1.0 / rates[y])
        if t > horizon:
            break
        y = int(np.searchsorted(cum[y], rng.random() * cum[y, -1], side="right"))
        y = min(y, M.n - 1)
        states.append(y)
        times.append(t)
    return ContinuousTrail(
        np.array(states), np.array(times), horizon, true_chain=ell, absorbed=absorbed
    )


def sample_trails(M: CTMixture, r: int, horizon: float, seed: int) -> list:
    return [sample_continuous_trail(M, horizon, trail_rng(seed, i)) for i in range(r)]


def discretize(x: ContinuousTrail, tau: float, m: int) -> DiscreteTrail:
    """Observe ``x`` at times 0, tau, ..., (m-1) tau."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if m < 1:
        raise ValueError("m must be at least 1")
    last = (m - 1) * tau
    if not x.absorbed and last > x.horizon * (1 + 1e-12):
        raise ValueError(
            f"trail observed until {x.horizon} is too short for m={m}, tau={tau}"
        )
    return DiscreteTrail(x.state_at(np.arange(m) * tau), tau)


def discretize_all(trails, tau: float, m: int) -> list:
    return [discretize(x, tau, m) for x in trails]


def count_bad_transitions(x: ContinuousTrail, tau: float, m: int) -> int:
    """Intervals whose interior visits a state differing from both endpoints."""
    obs = discretize(x, tau, m).states
    count = 0
    # entry index range strictly inside each interval
    bounds = np.arange(m) * tau
    lo = np.searchsorted(x.times, bounds[:-1], side="right")
    hi = np.searchsorted(x.times, bounds[1:], side="left")
    for i in range(m - 1):
        if hi[i] <= lo[i]:
            continue
        inner = x.states[lo[i]:hi[i]]
        if np.any((inner != obs[i]) & (inner != obs[i + 1])):
            count += 1
    return count


def truncate(x: ContinuousTrail, t_end: float) -> ContinuousTrail:
    """Restrict ``x`` to the observation window [0, t_end]."""
    keep = x.times <= t_end
    absorbed = x.absorbed and keep.all()
    horizon = t_end if not absorbed else max(t_end, float(x.times[-1]))
    horizon = min(horizon, x.horizon) if not x.absorbed else horizon
    return ContinuousTrail(x.states[keep], x.times[keep], horizon, x.true_chain, absorbed)

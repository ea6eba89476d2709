"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -s`` or ``python3 tests/test_acceptance.py``.
Wall-clock budgets are part of each criterion.
"""
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
from oracles import expected_counts, quad_tv_rows, taylor_expm  # noqa: E402

from ctmcmix.cluster import (  # noqa: E402
    ClusterConfig,
    SpectralConfig,
    em_discrete,
    model_difference_check,
    per_trail_chain,
    spectral_cluster,
)
from ctmcmix.core import (  # noqa: E402
    ContinuousTrail,
    CTMixture,
    RateMatrix,
    SoftAssignment,
    clustering_error,
    matrix_exponential,
    recovery_error,
    tv_ctmc_rows,
)
from ctmcmix.estimators import estimate_holding, recommend_tau  # noqa: E402
from ctmcmix.recover import (  # noqa: E402
    amgm_gap,
    em_continuous,
    fit_mixture,
    mle_objective,
    mle_rate_matrix,
    predict_absorption,
)
from ctmcmix.simulate import (  # noqa: E402
    GeneratorConfig,
    discretize,
    discretize_all,
    random_mixture,
    random_rate_matrix,
    sample_trails,
    truncate,
)


def _instance(seed, n, L, r, horizon, absorbing=()):
    M = random_mixture(GeneratorConfig(n, L, seed=seed, absorbing=list(absorbing)))
    return M, sample_trails(M, r, horizon, seed + 1000)


def _labels(xs, L):
    return SoftAssignment.hard([x.true_chain for x in xs], L)


def c01_expm_oracle():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 7))
        K = random_rate_matrix(n, rng).K
        tau = rng.uniform(0.0, 10.0) / np.abs(K).sum(axis=1).max()  # ||K tau||_inf <= 10
        worst = max(worst, np.abs(matrix_exponential(K, tau).T - taylor_expm(K * tau)).max())
    return worst <= 1e-9, f"max |expm - Taylor| = {worst:.2e} (tol 1e-9)"


def c02_tv_oracle():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 6))
        y = int(rng.integers(n))
        rows = []
        for _ in range(2):
            row = rng.uniform(0, 3, n) * (rng.random(n) > 0.2)
            row[y] = 0.0
            row[y] = -row.sum()
            rows.append(row)
        worst = max(worst, abs(tv_ctmc_rows(rows[0], rows[1], y) - quad_tv_rows(rows[0], rows[1], y)))
    return worst <= 1e-6, f"max |closed form - quadrature| = {worst:.2e} (tol 1e-6)"


def c03_exact_mle():
    rng = np.random.default_rng(3)
    errs = []
    for _ in range(10):
        K = random_rate_matrix(3, rng)
        est = mle_rate_matrix(expected_counts(K.K, 0.1), 0.1)
        errs.append(recovery_error(CTMixture((K,), np.full((1, 3), 1 / 3)), CTMixture((est.K,), np.full((1, 3), 1 / 3))))
    return max(errs) <= 0.01, f"max recovery_error = {max(errs):.2e} over 10 chains (tol 0.01)"


def c04_gradient():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(2, 6))
        tau = rng.uniform(0.05, 1.0)
        C = rng.integers(0, 100, (n, n)).astype(float)
        theta = rng.normal(-0.5, 1.0, n * (n - 1))
        _, g = mle_objective(theta, C, tau, 1e-8)
        h = 1e-6
        fd = np.array([
            (mle_objective(theta + h * e, C, tau, 1e-8)[0] - mle_objective(theta - h * e, C, tau, 1e-8)[0]) / (2 * h)
            for e in np.eye(len(theta))
        ])
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
    return worst <= 1e-4, f"max relative gradient error = {worst:.2e} (tol 1e-4)"


def c05_amgm():
    rng = np.random.default_rng(5)
    bad = 0
    for _ in range(10_000):
        L = int(rng.integers(1, 9))
        p = rng.uniform(0, 1, L) ** rng.uniform(1, 20)
        p = np.maximum(p, 1e-300)
        g, a, u = amgm_gap(p)  # weights are the posterior p / sum(p)
        tol = 1e-12 * max(1.0, u)
        bad += not (g <= a + tol and a <= u + tol)
    eq = 0
    for L in range(1, 9):
        g, a, u = amgm_gap(np.full(L, rng.uniform(0.1, 1)), np.full(L, 1 / L))
        eq += max(abs(g - a), abs(a - u)) <= 1e-12
    return bad == 0 and eq == 8, f"{bad} sandwich violations in 10^4 draws; equality at uniform a for {eq}/8 sizes"


def c06_holding_estimator():
    tau = recommend_tau(1.0, 1.0, 0.01, variant="appendix")
    q = np.exp(-tau)
    M = CTMixture((RateMatrix([[-1.0, 1.0], [1.0, -1.0]]),), np.array([[1.0, 0.0]]))
    c = 100_000
    ok = 0
    for rep in range(100):
        # long enough that state 0 is observed c times before the end
        m = int(2.3 * c)
        x = sample_trails(M, 1, (m - 1) * tau, seed=600 + rep)[0]
        s = discretize(x, tau, m).states
        from_zero = np.flatnonzero(s[:-1] == 0)[:c]
        C = np.zeros((2, 2))
        np.add.at(C, (s[from_zero], s[from_zero + 1]), 1.0)
        q_hat = estimate_holding(C, tau).q[0]
        ok += abs(q_hat - q) <= 0.01 * q and len(from_zero) == c
    return ok >= 95, f"{ok}/100 repeats with |q_hat - q| <= 0.01 q at tau={tau:.4f}"


def c07_model_difference():
    rng = np.random.default_rng(7)
    violations = premises = 0
    for _ in range(1000):
        n = int(rng.integers(2, 6))
        upper = rng.uniform(0.5, 5.0)
        A, B = random_rate_matrix(n, rng, upper).K, random_rate_matrix(n, rng, upper).K
        K_max = max(np.abs(np.diag(A)).max(), np.abs(np.diag(B)).max())
        tau = rng.uniform(0.01, 0.5) / K_max
        gap = np.linalg.norm(A - B, axis=1).max()
        # Delta drawn so that the premise holds in a good share of the draws
        Delta = rng.uniform(0, 1) * max(gap - 8 * tau * (1 + K_max**2), 1e-3) * tau
        rep = model_difference_check(A, B, tau, Delta)
        violations += rep.violations
        premises += int(rep.premise.sum())
    return violations == 0, f"{violations} violations; premise held for {premises} rows"


def c08_groundtruth_recovery():
    errs = []
    for seed in range(5):
        M, xs = _instance(seed, 5, 2, 500, 200 * 0.1)
        res = fit_mixture(discretize_all(xs, 0.1, 200), 0.1, 2, "given", assignment=_labels(xs, 2), n=5)
        errs.append(recovery_error(M, res.mixture))
    med = float(np.median(errs))
    return med <= 0.05, f"median recovery_error = {med:.4f} over 5 seeds (tol 0.05)"


def c09_ktt_long_trails():
    def med(m):
        errs = []
        for seed in range(5):
            M, xs = _instance(100 + seed, 10, 2, 50, m * 0.1)
            a = spectral_cluster(discretize_all(xs, 0.1, m), SpectralConfig(2, seed=seed), n=10)
            errs.append(clustering_error(a, _labels(xs, 2)))
        return float(np.median(errs))

    long_, short = med(2000), med(100)
    return long_ <= 0.05 and long_ < short, f"median clustering_error {long_:.4f} at m=2000 vs {short:.4f} at m=100"


def c10_dem_end_to_end():
    errs, base = [], []
    for seed in range(5):
        M, xs = _instance(200 + seed, 10, 2, 500, 100 * 0.1)
        res = fit_mixture(discretize_all(xs, 0.1, 100), 0.1, 2, "dem", n=10)
        errs.append(recovery_error(M, res.mixture))
        guess = random_mixture(GeneratorConfig(10, 2, seed=10_000 + seed))
        base.append(recovery_error(M, guess))
    e, b = float(np.median(errs)), float(np.median(base))
    return e <= 0.15 and e <= 0.5 * b, f"median recovery_error {e:.4f} vs random baseline {b:.4f}"


def c11_tau_sweep():
    taus = [0.01, 0.03, 0.1, 0.3, 1.0, 3.0]
    med = []
    for tau in taus:
        errs = []
        for seed in range(5):
            M, xs = _instance(300 + seed, 10, 2, 100, 200 * tau)
            res = fit_mixture(discretize_all(xs, tau, 200), tau, 2, "dem", n=10)
            errs.append(recovery_error(M, res.mixture))
        med.append(float(np.median(errs)))
    best = min(med[1:-1])
    detail = ", ".join(f"{t}:{v:.3f}" for t, v in zip(taus, med))
    return best < med[0] and best < med[-1], f"median error by tau {{{detail}}}"


def c12_single_trail():
    M = random_mixture(GeneratorConfig(5, 1, seed=12))
    tau, m = 0.1, 100_000
    x = sample_trails(M, 1, (m - 1) * tau, seed=12)[0]
    est = per_trail_chain(discretize(x, tau, m), 5)
    T = matrix_exponential(M.chains[0], tau).T
    visited = [y for y in range(5) if y not in est.unvisited]
    tv = 0.5 * np.abs(est.chain.T[visited] - T[visited]).sum(axis=1)
    return bool(np.all(tv <= 0.05)), f"max per-state TV = {tv.max():.4f} over {len(visited)} visited states (tol 0.05)"


def _absorbing_mixture(seed):
    M = random_mixture(GeneratorConfig(5, 2, seed=seed, absorbing=[3, 4]))
    start = np.array(M.start)
    start[:, 3:] = 0.0
    return CTMixture(M.chains, start / start.sum())


def _rollouts(M, y, hit, miss, count, rng):
    post = M.start[:, y] / M.start[:, y].sum()
    chains = rng.choice(M.L, size=count, p=post)
    jumps = np.stack([c.jump_matrix() for c in M.chains])
    cum = np.cumsum(jumps, axis=2)
    state = np.full(count, y)
    active = np.ones(count, dtype=bool)
    while active.any():
        idx = np.flatnonzero(active)
        u = rng.random(len(idx))
        rows = cum[chains[idx], state[idx]]
        state[idx] = np.minimum((u[:, None] >= rows).sum(axis=1), M.n - 1)
        active[idx] = ~np.isin(state[idx], [hit, miss])
    return float(np.mean(state == hit))


def c13_absorption():
    rng = np.random.default_rng(13)
    M = _absorbing_mixture(13)
    worst = 0.0
    for y in range(3):
        prefix = ContinuousTrail(np.array([y]), np.array([0.0]), 0.0)
        worst = max(worst, abs(predict_absorption(M, prefix, 3, 4) - _rollouts(M, y, 3, 4, 100_000, rng)))
    gaps = []
    for seed in (1, 2):
        truth = _absorbing_mixture(seed)
        horizon, tau = 60.0, 0.5
        train = sample_trails(truth, 2000, horizon, seed=seed + 50)
        fit = fit_mixture(train, tau, 2, "dem", m=int(horizon / tau) + 1, n=5, absorbing=[3, 4])
        test = [x for x in sample_trails(truth, 16_000, horizon, seed=seed + 90) if x.absorbed]
        hits = []
        for x in test:
            p = truncate(x, 0.5)
            if p.states[-1] in (3, 4):
                continue
            hits.append((x.states[-1] == 3, predict_absorption(fit.mixture, p, 3, 4), predict_absorption(truth, p, 3, 4)))
        hits = hits[:10_000]
        y = np.array([h[0] for h in hits])
        acc_fit = np.mean((np.array([h[1] for h in hits]) > 0.5) == y)
        acc_bayes = np.mean((np.array([h[2] for h in hits]) > 0.5) == y)
        gaps.append((acc_fit, acc_bayes, len(hits)))
    ok_acc = all(abs(a - b) <= 0.02 for a, b, _ in gaps)
    acc = "; ".join(f"learned {a:.3f} vs Bayes {b:.3f} on {k} prefixes" for a, b, k in gaps)
    return worst <= 0.01 and ok_acc, f"max |closed form - MC| = {worst:.4f}; {acc}"


def c14_em_monotone():
    worst = 0.0
    for seed in range(100):
        M, xs = _instance(400 + seed, 4, 2, 20, 3.0)
        d = em_discrete(discretize_all(xs, 0.1, 30), ClusterConfig(2, max_iter=50, restarts=1, seed=seed), n=4)
        c = em_continuous(xs, 2, ClusterConfig(2, max_iter=50, restarts=1, seed=seed), n=4)
        for hist in (d.history, c.history):
            if len(hist) > 1:
                worst = min(worst, float(np.min(np.diff(hist))))
    return worst >= -1e-9, f"largest log-likelihood decrease {max(0.0, -worst):.2e} over 200 runs (tol 1e-9)"


CRITERIA = [
    (1, "matrix exponential vs Taylor oracle", c01_expm_oracle, 5),
    (2, "continuous TV vs quadrature", c02_tv_oracle, 10),
    (3, "exactly realizable MLE", c03_exact_mle, 30),
    (4, "MLE gradient vs finite differences", c04_gradient, 10),
    (5, "AM-GM sandwich", c05_amgm, 5),
    (6, "holding-probability estimator at desk scale", c06_holding_estimator, 60),
    (7, "model-difference implication", c07_model_difference, 30),
    (8, "groundtruth-assignment recovery", c08_groundtruth_recovery, 120),
    (9, "KTT on long trails", c09_ktt_long_trails, 300),
    (10, "dEM end to end", c10_dem_end_to_end, 300),
    (11, "tau sweep has an interior minimizer", c11_tau_sweep, 600),
    (12, "single long trail", c12_single_trail, 60),
    (13, "absorption prediction", c13_absorption, 120),
    (14, "EM monotonicity", c14_em_monotone, 120),
]


def run_criterion(number, name, fn, budget):
    t0 = time.perf_counter()
    ok, detail = fn()
    secs = time.perf_counter() - t0
    passed = bool(ok) and secs < budget
    line = f"{'PASS' if passed else 'FAIL'} [{number:2d}] {name}: {detail}; {secs:.1f}s (budget {budget}s)"
    return passed, line


@pytest.mark.parametrize("number, name, fn, budget", CRITERIA, ids=[f"c{c[0]:02d}" for c in CRITERIA])
def test_criterion(number, name, fn, budget, capsys):
    passed, line = run_criterion(number, name, fn, budget)
    with capsys.disabled():
        print("\n" + line)
    assert passed, line


if __name__ == "__main__":
    results = [run_criterion(*c) for c in CRITERIA]
    for _, line in results:
        print(line)
    sys.exit(0 if all(p for p, _ in results) else 1)

"""ctmcmix command line: generate, fit, sweep, ingest, predict."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .cluster import ClusterConfig
from .core import ContinuousTrail, DiscreteTrail, SoftAssignment, clustering_error, recovery_error
from .experiments import AXES, INITS, SWEEP_METHODS, ExperimentConfig, run_sweep, write_rows
from .ingest import IngestConfig, build_trails, read_events
from .recover import (
    FitConfig,
    MLEConfig,
    em_continuous,
    fit_mixture,
    predict_absorption,
)
from .simulate import GeneratorConfig, discretize, random_mixture, sample_trails, truncate

log = logging.getLogger("ctmcmix")

FIT_METHODS = ("dem", "ktt", "verylong", "cem", "groundtruth")


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SystemExit(f"cannot create output directory {out}: {exc}")
    return out


def _dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_generate(args) -> int:
    try:
        cfg = GeneratorConfig(args.n, args.L, args.rate_upper, args.seed, list(args.absorbing))
    except ValueError as exc:
        raise SystemExit(f"invalid config: {exc}")
    horizon = args.horizon if args.horizon is not None else args.m * args.tau
    M = random_mixture(cfg)
    if cfg.absorbing and not args.start_on_absorbing:
        start = np.array(M.start)
        start[:, cfg.absorbing] = 0.0
        M = type(M)(M.chains, start / start.sum())
    trails = sample_trails(M, args.r, horizon, args.seed)
    out = _out_dir(args.out)
    io.write_mixture(out / "mixture.json", M)
    io.write_trails(out / "trails.jsonl", trails, [f"t{i}" for i in range(len(trails))])
    log.info("wrote %d trails to %s", len(trails), out)
    return 0


def _discretize_for_fit(ids, trails, tau, m, segment_length):
    out_ids, out = [], []
    for tid, x in zip(ids, trails):
        steps = m if m is not None else int(np.floor(x.horizon / tau + 1e-9)) + 1
        d = discretize(x, tau, steps)
        if segment_length:
            s = d.states
            for j in range(0, len(s) - segment_length + 1, segment_length):
                out_ids.append(f"{tid}#{j // segment_length}")
                out.append(DiscreteTrail(s[j : j + segment_length], tau))
        else:
            out_ids.append(tid)
            out.append(d)
    return out_ids, out


def cmd_fit(args) -> int:
    ids, trails = io.read_trails(args.trails)
    truth = None
    if args.truth:
        truth, _ = io.read_mixture(args.truth)
        top = max(int(x.states.max()) for x in trails)
        if top >= truth.n:
            raise SystemExit(f"state {top} does not exist in the reference mixture (n={truth.n})")
    n = args.n or max(int(x.states.max()) for x in trails) + 1
    if truth is not None:
        n = max(n, truth.n)
    t0 = time.perf_counter()
    metrics = {"method": args.method, "L": args.L, "n": n, "tau": args.tau, "m": args.m}
    if args.method == "cem":
        window = [truncate(x, args.tau * args.m) for x in trails] if args.m else trails
        res = em_continuous(
            window, args.L, ClusterConfig(args.L, args.max_iter, args.tol, args.restarts, args.seed), n=n
        )
        mixture, assignment, out_ids = res.mixture, res.assignment, ids
        metrics.update(loglik=res.loglik, iterations=res.iterations, loglik_kind="continuous")
        labels = [x.true_chain for x in trails]
    else:
        out_ids, dtrails = _discretize_for_fit(ids, trails, args.tau, args.m, args.segment_length)
        labels_by_id = {tid: x.true_chain for tid, x in zip(ids, trails)}
        labels = [labels_by_id[t.split("#")[0]] for t in out_ids]
        cfg = FitConfig(
            seed=args.seed,
            restarts=args.restarts,
            max_iter=args.max_iter,
            tol=args.tol,
            kmeans_restarts=args.kmeans_restarts,
            mle=MLEConfig(seed=args.seed),
        )
        kw = {}
        method = args.method
        if method == "groundtruth":
            if any(lab is None for lab in labels):
                raise SystemExit("method groundtruth needs true_chain labels on every trail")
            method, kw["assignment"] = "given", SoftAssignment.hard(labels, args.L)
        res = fit_mixture(dtrails, args.tau, args.L, method, cfg, n=n, absorbing=args.absorbing, **kw)
        mixture, assignment = res.mixture, res.assignment
        metrics.update(loglik=res.loglik, iterations=res.iterations, loglik_kind="discretized", flags=res.flags)
    seconds = time.perf_counter() - t0
    metrics["r"] = len(out_ids)
    metrics["median_assignment_entropy"] = float(np.median(assignment.entropy()))
    if truth is not None:
        if truth.L == mixture.L:
            metrics["recovery_error"] = recovery_error(truth, mixture)
    if all(lab is not None for lab in labels) and labels:
        gt_L = max(max(labels) + 1, args.L)
        if gt_L == args.L:
            metrics["clustering_error"] = clustering_error(assignment, SoftAssignment.hard(labels, args.L))
    out = _out_dir(args.out)
    io.write_mixture(out / "mixture.json", mixture, tau_hint=args.tau)
    io.write_assignment(out / "assignment.csv", out_ids, assignment)
    _dump_json(out / "metrics.json", metrics)
    _dump_json(out / "timing.json", {"seconds": seconds})
    log.info("fit finished in %.2fs; loglik %.4f", seconds, metrics["loglik"])
    return 0


def cmd_sweep(args) -> int:
    try:
        cfg = ExperimentConfig(
            n=args.n,
            L=args.L,
            rate_upper=args.rate_upper,
            seed=args.seed,
            r=args.r,
            m=args.m,
            tau=args.tau,
            axis=args.axis,
            values=[float(v) if args.axis in ("tau", "f") else int(v) for v in args.values],
            methods=list(args.methods),
            repeats=args.repeats,
            budget=args.budget,
            init=args.init,
            restarts=args.restarts,
            max_iter=args.max_iter,
            timing=not args.no_timing,
        )
    except ValueError as exc:
        raise SystemExit(f"invalid sweep: {exc}")
    rows = run_sweep(cfg)
    write_rows(args.out, rows)
    log.info("wrote %d rows to %s", len(rows), args.out)
    return 0


def cmd_ingest(args) -> int:
    cfg = IngestConfig(args.gap, args.top_k, args.min_duration, args.max_duration, list(args.absorbing))
    try:
        ids, trails, tokens = build_trails(read_events(args.events), cfg)
    except ValueError as exc:
        raise SystemExit(str(exc))
    out = _out_dir(args.out)
    io.write_trails(out / "trails.jsonl", trails, ids)
    absorbing = [tokens.index(t) for t in cfg.absorbing]
    _dump_json(out / "states.json", {"states": tokens, "absorbing": absorbing})
    log.info("ingested %d trails over %d states", len(trails), len(tokens))
    return 0


def _prefix(x: ContinuousTrail, args):
    if args.prefix_time is not None:
        return truncate(x, args.prefix_time)
    if args.prefix_events is not None:
        k = min(args.prefix_events, len(x))
        end = x.times[k] if k < len(x) else x.horizon
        return ContinuousTrail(x.states[:k], x.times[:k], max(end, x.times[k - 1]), x.true_chain)
    return x


def cmd_predict(args) -> int:
    M, tau_hint = io.read_mixture(args.mixture)
    recs = io.read_trail_records(args.trails)
    truncating = args.prefix_time is not None or args.prefix_events is not None
    rows, correct, losses = [], [], []
    for rec in recs:
        x = io.record_to_trail(rec)
        prefix = _prefix(x, args)
        if args.discrete:
            tau = args.tau or tau_hint
            steps = int(np.floor(prefix.horizon / tau + 1e-9)) + 1
            prefix = discretize(prefix, tau, steps)
        p = predict_absorption(M, prefix, args.hit, args.miss, tau=args.tau or tau_hint)
        outcome = rec.get("outcome")
        if outcome is None and truncating and x.absorbed:
            outcome = int(x.states[-1])
        row = {"trail_id": rec.get("trail_id"), "p_hit": p, "outcome": "" if outcome is None else outcome}
        if outcome in (args.hit, args.miss):
            y = outcome == args.hit
            correct.append((p > 0.5) == y)
            q = min(max(p if y else 1 - p, 1e-12), 1.0)
            losses.append(-np.log(q))
        rows.append(row)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["trail_id", "p_hit", "outcome"])
        w.writeheader()
        for row in rows:
            w.writerow({**row, "p_hit": repr(float(row["p_hit"]))})
    summary = {"n_prefixes": len(rows), "n_labelled": len(correct)}
    if correct:
        summary["accuracy"] = float(np.mean(correct))
        summary["log_loss"] = float(np.mean(losses))
    print(json.dumps(summary, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ctmcmix", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample a random mixture and trails")
    g.add_argument("--n", type=int, default=5)
    g.add_argument("--L", type=int, default=2)
    g.add_argument("--r", type=int, default=100)
    g.add_argument("--horizon", type=float, default=None)
    g.add_argument("--m", type=int, default=200)
    g.add_argument("--tau", type=float, default=0.1)
    g.add_argument("--rate-upper", type=float, default=1.0)
    g.add_argument("--absorbing", type=int, nargs="*", default=[])
    g.add_argument("--start-on-absorbing", action="store_true")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="learn a mixture from a trail file")
    f.add_argument("trails")
    f.add_argument("--tau", type=float, required=True)
    f.add_argument("--m", type=int, default=None)
    f.add_argument("--L", type=int, required=True)
    f.add_argument("--n", type=int, default=None)
    f.add_argument("--method", choices=FIT_METHODS, default="dem")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--restarts", type=int, default=3)
    f.add_argument("--max-iter", type=int, default=100)
    f.add_argument("--tol", type=float, default=1e-8)
    f.add_argument("--kmeans-restarts", type=int, default=10)
    f.add_argument("--segment-length", type=int, default=None)
    f.add_argument("--absorbing", type=int, nargs="*", default=[])
    f.add_argument("--truth", default=None, help="reference mixture JSON for recovery_error")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("sweep", help="run a synthetic experiment sweep")
    s.add_argument("--axis", choices=AXES, required=True)
    s.add_argument("--values", nargs="+", required=True)
    s.add_argument("--methods", nargs="+", choices=SWEEP_METHODS, default=["dem"])
    s.add_argument("--repeats", type=int, default=5)
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--L", type=int, default=2)
    s.add_argument("--r", type=int, default=100)
    s.add_argument("--m", type=int, default=200)
    s.add_argument("--tau", type=float, default=0.1)
    s.add_argument("--rate-upper", type=float, default=1.0)
    s.add_argument("--budget", type=int, default=None, help="hold r*m fixed")
    s.add_argument("--init", choices=INITS, default="random")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--restarts", type=int, default=3)
    s.add_argument("--max-iter", type=int, default=100)
    s.add_argument("--no-timing", action="store_true", help="write 0 in the seconds column")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    i = sub.add_parser("ingest", help="convert an event log into trails")
    i.add_argument("events")
    i.add_argument("--gap", type=float, default=900.0, help="split threshold in seconds")
    i.add_argument("--top-k", type=int, default=10)
    i.add_argument("--min-duration", type=float, default=None)
    i.add_argument("--max-duration", type=float, default=None)
    i.add_argument("--absorbing", nargs="*", default=[], help="tokens that end a trail")
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_ingest)

    p = sub.add_parser("predict", help="predict hit/miss absorption for trail prefixes")
    p.add_argument("mixture")
    p.add_argument("trails")
    p.add_argument("--hit", type=int, required=True)
    p.add_argument("--miss", type=int, required=True)
    p.add_argument("--prefix-time", type=float, default=None)
    p.add_argument("--prefix-events", type=int, default=None)
    p.add_argument("--discrete", action="store_true", help="use the discretized prefix likelihood")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

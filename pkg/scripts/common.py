"""Shared plumbing for the sweep scripts: run, write CSV, print a median table."""
import argparse
import sys
from pathlib import Path

from ctmcmix.experiments import ExperimentConfig, median_by, run_sweep, write_rows


def parser(description, out):
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=None, help="defaults to CTMCMIX_THREADS")
    ap.add_argument("--quick", action="store_true", help="smaller sweep for a smoke run")
    ap.add_argument("--out", default=f"results/{out}")
    return ap


def run(cfg: ExperimentConfig, out, workers=None, key="recovery_error"):
    rows = run_sweep(cfg, workers)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    write_rows(out, rows)
    med = median_by(rows, key)
    width = max(len(m) for m in cfg.methods)
    print(f"median {key} by {cfg.axis}")
    print(f"{'':>{width}}  " + "  ".join(f"{v:>8}" for v in cfg.values))
    for m in cfg.methods:
        print(f"{m:>{width}}  " + "  ".join(f"{med[(v, m)]:8.4f}" for v in cfg.values))
    print(f"wrote {len(rows)} rows to {out}", file=sys.stderr)
    return rows

"""Trail JSONL, mixture JSON and assignment CSV readers/writers.

Trail lines carry ``trail_id``, ``true_chain`` and ``events``; ``horizon`` and
``absorbed`` are optional extras (defaults: last event time, False).
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .core import ContinuousTrail, CTMixture, RateMatrix, SoftAssignment


def trail_to_record(trail_id: str, x: ContinuousTrail, **extra) -> dict:
    rec = {
        "trail_id": str(trail_id),
        "true_chain": None if x.true_chain is None else int(x.true_chain),
        "events": [{"t": float(t), "state": int(s)} for t, s in zip(x.times, x.states)],
        "horizon": float(x.horizon),
        "absorbed": bool(x.absorbed),
    }
    rec.update(extra)
    return rec


def record_to_trail(rec: dict) -> ContinuousTrail:
    try:
        events = rec["events"]
        times = np.array([float(e["t"]) for e in events])
        states = np.array([int(e["state"]) for e in events], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed trail record {rec.get('trail_id')!r}: {exc}") from exc
    if len(events) == 0:
        raise ValueError(f"trail {rec.get('trail_id')!r} has no events")
    horizon = rec.get("horizon")
    horizon = float(times[-1]) if horizon is None else float(horizon)
    tc = rec.get("true_chain")
    return ContinuousTrail(
        states, times, horizon, None if tc is None else int(tc), bool(rec.get("absorbed", False))
    )


def write_trails(path, trails, ids=None, extras=None) -> None:
    ids = ids if ids is not None else [str(i) for i in range(len(trails))]
    with open(path, "w") as fh:
        for k, (tid, x) in enumerate(zip(ids, trails)):
            extra = extras[k] if extras else {}
            fh.write(json.dumps(trail_to_record(tid, x, **extra)) + "\n")


def read_trail_records(path) -> list:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
    return out


def read_trails(path) -> tuple[list, list]:
    """Return (trail ids, ContinuousTrail list)."""
    recs = read_trail_records(path)
    return [str(r.get("trail_id", i)) for i, r in enumerate(recs)], [record_to_trail(r) for r in recs]


def mixture_to_dict(M: CTMixture, tau_hint: float | None = None) -> dict:
    return {
        "n": M.n,
        "L": M.L,
        "tau_hint": tau_hint,
        "K": [c.K.tolist() for c in M.chains],
        "start": M.start.tolist(),
    }


def mixture_from_dict(d: dict) -> tuple[CTMixture, float | None]:
    try:
        K = np.array(d["K"], dtype=float)
        start = np.array(d["start"], dtype=float)
        n, L = int(d["n"]), int(d["L"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed mixture file: {exc}") from exc
    if K.shape != (L, n, n):
        raise ValueError(f"mixture K has shape {K.shape}, expected {(L, n, n)}")
    return CTMixture(tuple(RateMatrix(k) for k in K), start), d.get("tau_hint")


def write_mixture(path, M: CTMixture, tau_hint: float | None = None) -> None:
    Path(path).write_text(json.dumps(mixture_to_dict(M, tau_hint)) + "\n")


def read_mixture(path) -> tuple[CTMixture, float | None]:
    return mixture_from_dict(json.loads(Path(path).read_text()))


def write_assignment(path, ids, a: SoftAssignment) -> None:
    A = np.asarray(getattr(a, "a", a))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trail_id"] + [f"a_{j + 1}" for j in range(A.shape[1])])
        for tid, row in zip(ids, A):
            w.writerow([tid] + [repr(float(v)) for v in row])


def read_assignment(path) -> tuple[list, SoftAssignment]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[0] != "trail_id":
        raise ValueError("assignment CSV must start with a trail_id column")
    return [r[0] for r in body], SoftAssignment(np.array([[float(v) for v in r[1:]] for r in body]))

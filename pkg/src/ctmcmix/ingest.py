"""Turn raw (entity, timestamp, token) event logs into continuous-time trails."""
from __future__ import annotations

import csv
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .core import ContinuousTrail


@dataclass
class IngestConfig:
    gap: float = 900.0  # split when consecutive events are further apart (seconds)
    top_k: int = 10
    min_duration: float | None = None
    max_duration: float | None = None
    absorbing: list = field(default_factory=list)  # tokens that end a trail


def parse_timestamp(value: str) -> float:
    """Epoch seconds or ISO-8601 (naive values are read as UTC)."""
    value = value.strip()
    try:
        return float(value)
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError as exc:
        raise ValueError(f"unparseable timestamp {value!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def read_events(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"entity_id", "timestamp", "token"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"events file lacks columns {sorted(missing)}")
        return [
            (row["entity_id"], parse_timestamp(row["timestamp"]), row["token"])
            for row in reader
        ]


def build_trails(events, cfg: IngestConfig):
    """Return (trail ids, trails, state tokens in index order)."""
    absorbing = list(cfg.absorbing)
    counts = Counter(tok for _, _, tok in events if tok not in absorbing)
    if cfg.top_k > len(counts):
        raise ValueError(f"top_k={cfg.top_k} exceeds the {len(counts)} distinct tokens")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[: cfg.top_k]
    tokens = [tok for tok, _ in ranked] + absorbing
    index = {tok: i for i, tok in enumerate(tokens)}
    absorbing_idx = {index[t] for t in absorbing}

    streams = defaultdict(list)
    for k, (ent, t, tok) in enumerate(events):
        streams[ent].append((t, k, tok))

    ids, trails = [], []
    for ent in streams:
        stream = sorted(streams[ent])
        segments, current = [], [stream[0]]
        for prev, ev in zip(stream, stream[1:]):
            if ev[0] - prev[0] > cfg.gap:
                segments.append(current)
                current = []
            current.append(ev)
        segments.append(current)
        for seg_no, seg in enumerate(segments):
            trail = _segment_to_trail(seg, index, absorbing_idx)
            if trail is None:
                continue
            dur = trail.horizon
            if cfg.min_duration is not None and dur < cfg.min_duration:
                continue
            if cfg.max_duration is not None and dur > cfg.max_duration:
                continue
            ids.append(f"{ent}-{seg_no}")
            trails.append(trail)
    return ids, trails, tokens


def _segment_to_trail(seg, index, absorbing_idx):
    kept = [(t, index[tok]) for t, _, tok in seg if tok in index]
    if not kept:
        return None
    t0 = kept[0][0]
    states, times = [], []
    absorbed = False
    for t, s in kept:
        if states and states[-1] == s:
            continue
        if times and t - t0 <= times[-1]:
            # simultaneous events: the later token replaces the earlier one
            states[-1] = s
            if len(states) > 1 and states[-2] == s:
                states.pop()
                times.pop()
        else:
            states.append(s)
            times.append(t - t0)
        if s in absorbing_idx:
            absorbed = True
            break
    horizon = times[-1]
    return ContinuousTrail(np.array(states), np.array(times), horizon, None, absorbed)

"""Fixed-duration time-window segmentation of labeled frame streams."""
from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import ROUND_FLOOR, Decimal
from typing import Iterable, Sequence

from .records import ActivityLabel, CaptureRecord, split_streams

__all__ = ["FlowSegment", "segment_by_window", "segment_streams", "window_index"]

# Quotients this close to an integer are re-checked in exact decimal arithmetic.
_BOUNDARY_EPS = 1e-9


@dataclass(frozen=True)
class FlowSegment:
    label: ActivityLabel | None
    window_index: int
    window_s: float
    frames: tuple[CaptureRecord, ...]

    def __len__(self) -> int:
        return len(self.frames)


def window_index(ts: float, t0: float, window_s: float) -> int:
    """Index k of the half-open window ``[t0 + k*w, t0 + (k+1)*w)`` holding ``ts``.

    Values are treated as the decimals their shortest repr spells, so
    ts = 0.6 with t0 = 0 and w = 0.2 lands in window 3, not 2.
    """
    q = (ts - t0) / window_s
    k = math.floor(q)
    if abs(q - round(q)) <= _BOUNDARY_EPS * max(1.0, abs(q)):
        exact = (Decimal(repr(ts)) - Decimal(repr(t0))) / Decimal(repr(window_s))
        k = int(exact.to_integral_value(rounding=ROUND_FLOOR))
    return k


def segment_by_window(records: Sequence[CaptureRecord], window_s: float) -> list[FlowSegment]:
    """Partition one labeled stream into non-empty windows anchored at its first frame.

    Raises ValueError for a non-positive window, mixed labels, or
    decreasing timestamps.
    """
    if not (isinstance(window_s, (int, float)) and math.isfinite(window_s) and window_s > 0):
        raise ValueError(f"window_s must be a positive finite number, got {window_s!r}")
    if not records:
        return []
    label = records[0].label
    t0 = records[0].ts
    buckets: dict[int, list[CaptureRecord]] = {}
    prev_ts = t0
    for rec in records:
        if rec.label != label:
            raise ValueError(f"mixed labels in stream: {label} and {rec.label}")
        if rec.ts < prev_ts:
            raise ValueError(f"decreasing timestamp {rec.ts} after {prev_ts}")
        prev_ts = rec.ts
        buckets.setdefault(window_index(rec.ts, t0, window_s), []).append(rec)
    return [
        FlowSegment(label, k, float(window_s), tuple(buckets[k]))
        for k in sorted(buckets)
    ]


def segment_streams(records: Iterable[CaptureRecord], window_s: float) -> list[FlowSegment]:
    """Segment every contiguous labeled stream of a (filtered) capture."""
    out: list[FlowSegment] = []
    for stream in split_streams(records):
        out.extend(segment_by_window(stream, window_s))
    return out

"""Frame-log ingestion and 802.11 pre-filtering.

A frame log is UTF-8 JSON-lines, one object per sniffed frame::

    {"ts": 0.0, "len": 120, "dir": "up", "ftype": "data",
     "retry": false, "fcs_ok": true, "app": "gmail", "activity": "send_mail"}

Logs recorded per activity may be concatenated into one file.  Timestamps
must be non-decreasing within each contiguous run of lines that share a
label; a label change starts a new stream whose clock may restart.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable, Union

__all__ = [
    "ActivityLabel",
    "CaptureMeta",
    "CaptureRecord",
    "Direction",
    "FrameLogError",
    "FrameType",
    "filter_frames",
    "parse_frame_log",
    "read_frame_log",
    "split_streams",
    "write_frame_log",
]

_REQUIRED_KEYS = ("ts", "len", "dir", "ftype", "retry", "fcs_ok")
_OPTIONAL_KEYS = ("app", "activity")


class FrameLogError(ValueError):
    """Raised for a frame log that violates the canonical format."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"{message} at line {line}"
        super().__init__(message)


class Direction(str, Enum):
    UP = "up"
    DOWN = "down"


class FrameType(str, Enum):
    DATA = "data"
    MGMT = "mgmt"
    CTRL = "ctrl"


@dataclass(frozen=True, order=True)
class ActivityLabel:
    """One in-app activity; ``app`` is the grouping key for leave-one-app-out."""

    app: str
    activity: str

    def __post_init__(self):
        for name in ("app", "activity"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value:
                raise ValueError(f"{name} must be a non-empty string, got {value!r}")
            if value != value.lower() or any(ch.isspace() for ch in value):
                raise ValueError(f"{name} must be lowercase without whitespace, got {value!r}")

    def __str__(self) -> str:
        return f"{self.app}/{self.activity}"

    @classmethod
    def parse(cls, text: Union[str, "ActivityLabel"]) -> "ActivityLabel":
        """Build a label from ``"app/activity"`` (labels pass through)."""
        if isinstance(text, ActivityLabel):
            return text
        app, sep, activity = str(text).partition("/")
        if not sep:
            raise ValueError(f"expected 'app/activity', got {text!r}")
        return cls(app, activity)


@dataclass(frozen=True, slots=True)
class CaptureRecord:
    ts: float
    length: int
    direction: Direction
    ftype: FrameType
    retry: bool = False
    fcs_ok: bool = True
    label: ActivityLabel | None = None

    @property
    def is_clean_data(self) -> bool:
        return self.ftype is FrameType.DATA and not self.retry and self.fcs_ok

    def to_json(self) -> dict:
        out = {
            "ts": self.ts,
            "len": self.length,
            "dir": self.direction.value,
            "ftype": self.ftype.value,
            "retry": self.retry,
            "fcs_ok": self.fcs_ok,
        }
        if self.label is not None:
            out["app"] = self.label.app
            out["activity"] = self.label.activity
        return out


@dataclass
class CaptureMeta:
    record_count: int = 0
    dropped_mgmt_ctrl: int = 0
    dropped_retry_or_fcs: int = 0
    duration: float = 0.0
    label_set: set = field(default_factory=set)

    @property
    def input_count(self) -> int:
        return self.record_count + self.dropped_mgmt_ctrl + self.dropped_retry_or_fcs


def _record_from_obj(obj, lineno: int) -> CaptureRecord:
    if not isinstance(obj, dict):
        raise FrameLogError("expected a JSON object", lineno)
    for key in _REQUIRED_KEYS:
        if key not in obj:
            raise FrameLogError(f"missing mandatory field '{key}'", lineno)
    extra = set(obj) - set(_REQUIRED_KEYS) - set(_OPTIONAL_KEYS)
    if extra:
        raise FrameLogError(f"unknown field(s) {sorted(extra)}", lineno)

    ts = obj["ts"]
    if isinstance(ts, bool) or not isinstance(ts, (int, float)) or not math.isfinite(ts) or ts < 0:
        raise FrameLogError(f"invalid timestamp {ts!r}", lineno)
    length = obj["len"]
    if isinstance(length, bool) or not isinstance(length, int) or length < 1:
        raise FrameLogError(f"invalid frame length {length!r}", lineno)
    try:
        direction = Direction(obj["dir"])
    except ValueError:
        raise FrameLogError(f"unknown direction {obj['dir']!r}", lineno) from None
    try:
        ftype = FrameType(obj["ftype"])
    except ValueError:
        raise FrameLogError(f"unknown ftype {obj['ftype']!r}", lineno) from None
    for key in ("retry", "fcs_ok"):
        if not isinstance(obj[key], bool):
            raise FrameLogError(f"field '{key}' must be a boolean", lineno)

    label = None
    if "app" in obj or "activity" in obj:
        if "app" not in obj or "activity" not in obj:
            raise FrameLogError("'app' and 'activity' must appear together", lineno)
        try:
            label = ActivityLabel(obj["app"], obj["activity"])
        except ValueError as exc:
            raise FrameLogError(str(exc), lineno) from None
    return CaptureRecord(float(ts), length, direction, ftype, obj["retry"], obj["fcs_ok"], label)


def parse_frame_log(stream: Union[IO, bytes, str, Iterable[str]]) -> list[CaptureRecord]:
    """Parse a canonical frame log into records, in file order.

    ``stream`` may be a binary or text file object, raw bytes/str content,
    or any iterable of lines.  Blank lines are ignored.  Raises
    :class:`FrameLogError` naming the offending line.
    """
    if isinstance(stream, bytes):
        stream = stream.decode("utf-8")
    if isinstance(stream, str):
        stream = io.StringIO(stream)

    records: list[CaptureRecord] = []
    prev: CaptureRecord | None = None
    for lineno, line in enumerate(stream, start=1):
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FrameLogError(f"malformed JSON ({exc.msg})", lineno) from None
        rec = _record_from_obj(obj, lineno)
        if prev is not None and prev.label == rec.label and rec.ts < prev.ts:
            raise FrameLogError("decreasing timestamp", lineno)
        records.append(rec)
        prev = rec
    return records


def read_frame_log(path) -> list[CaptureRecord]:
    with open(path, "rb") as fh:
        return parse_frame_log(fh)


def write_frame_log(records: Iterable[CaptureRecord], stream: IO[str]) -> None:
    for rec in records:
        stream.write(json.dumps(rec.to_json(), separators=(",", ":")))
        stream.write("\n")


def filter_frames(records: Iterable[CaptureRecord]) -> tuple[list[CaptureRecord], CaptureMeta]:
    """Keep only error-free data frames.

    Management and control frames are dropped first; of the remaining data
    frames, retransmissions and frames failing the FCS check are dropped.
    Order is preserved.
    """
    kept: list[CaptureRecord] = []
    meta = CaptureMeta()
    for rec in records:
        if rec.ftype is not FrameType.DATA:
            meta.dropped_mgmt_ctrl += 1
        elif rec.retry or not rec.fcs_ok:
            meta.dropped_retry_or_fcs += 1
        else:
            kept.append(rec)
    meta.record_count = len(kept)
    if kept:
        ts = [r.ts for r in kept]
        meta.duration = max(ts) - min(ts)
    meta.label_set = {r.label for r in kept if r.label is not None}
    return kept, meta


def split_streams(records: Iterable[CaptureRecord]) -> list[list[CaptureRecord]]:
    """Split records into contiguous runs sharing one label."""
    streams: list[list[CaptureRecord]] = []
    for rec in records:
        if streams and streams[-1][-1].label == rec.label:
            streams[-1].append(rec)
        else:
            streams.append([rec])
    return streams

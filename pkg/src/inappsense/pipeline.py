"""Frame records to feature table: filter, segment, featurize."""
from __future__ import annotations

from typing import Iterable

from .features import FeatureTable, featurize_segments
from .records import CaptureMeta, CaptureRecord, filter_frames
from .segment import segment_streams


def extract_features(records: Iterable[CaptureRecord], window_s: float) -> tuple[FeatureTable, CaptureMeta]:
    clean, meta = filter_frames(records)
    return featurize_segments(segment_streams(clean, window_s)), meta

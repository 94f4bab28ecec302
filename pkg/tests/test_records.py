import io
import json
import random

import pytest
from hypothesis import given, strategies as st

from inappsense.records import (
    ActivityLabel,
    CaptureRecord,
    Direction,
    FrameLogError,
    FrameType,
    filter_frames,
    parse_frame_log,
    split_streams,
    write_frame_log,
)

LINE = '{"ts":0.0,"len":120,"dir":"up","ftype":"data","retry":false,"fcs_ok":true,"app":"gmail","activity":"send_mail"}'


def line(**kw):
    obj = {"ts": 0.0, "len": 100, "dir": "up", "ftype": "data", "retry": False, "fcs_ok": True}
    obj.update(kw)
    return json.dumps(obj)


def test_parse_single_line():
    (rec,) = parse_frame_log(LINE.encode())
    assert rec == CaptureRecord(0.0, 120, Direction.UP, FrameType.DATA, False, True, ActivityLabel("gmail", "send_mail"))


def test_parse_empty_file():
    records = parse_frame_log(b"")
    assert records == []
    _, meta = filter_frames(records)
    assert meta.record_count == 0


def test_decreasing_timestamp_reports_line():
    with pytest.raises(FrameLogError, match="decreasing timestamp at line 2"):
        parse_frame_log("\n".join([line(ts=1.0), line(ts=0.5)]))


@pytest.mark.parametrize(
    "text, message",
    [
        ("{not json", "malformed JSON"),
        (line(dir="sideways"), "unknown direction"),
        (line(ftype="beacon"), "unknown ftype"),
        ('{"ts":0.0,"len":1,"dir":"up","ftype":"data","retry":false}', "missing mandatory field 'fcs_ok'"),
        (line(len=0), "invalid frame length"),
        (line(len=12.5), "invalid frame length"),
        (line(ts=-1.0), "invalid timestamp"),
        (line(retry="no"), "must be a boolean"),
        (line(app="gmail"), "must appear together"),
        (line(app="Gmail", activity="x"), "lowercase"),
        (line(extra=1), "unknown field"),
    ],
)
def test_parse_errors(text, message):
    with pytest.raises(FrameLogError, match=message) as info:
        parse_frame_log(line(ts=0.0) + "\n" + text)
    assert info.value.line == 2


def test_label_change_starts_new_stream():
    text = "\n".join([
        line(ts=5.0, app="a", activity="x"),
        line(ts=0.0, app="b", activity="y"),
        line(ts=0.1, app="b", activity="y"),
    ])
    records = parse_frame_log(text)
    assert [len(s) for s in split_streams(records)] == [1, 2]


def test_roundtrip_through_writer():
    records = [
        CaptureRecord(0.000001, 60, Direction.DOWN, FrameType.CTRL, False, True, None),
        CaptureRecord(0.1234567, 1500, Direction.UP, FrameType.DATA, True, False, None),
    ]
    buf = io.StringIO()
    write_frame_log(records, buf)
    assert parse_frame_log(buf.getvalue()) == records


def _rec(ftype="data", retry=False, fcs_ok=True, ts=0.0):
    return CaptureRecord(ts, 100, Direction.UP, FrameType(ftype), retry, fcs_ok)


def test_filter_counts_categories():
    records = [_rec() for _ in range(6)] + [_rec("mgmt")] * 2 + [_rec(retry=True)] * 2
    kept, meta = filter_frames(records)
    assert len(kept) == 6
    assert (meta.record_count, meta.dropped_mgmt_ctrl, meta.dropped_retry_or_fcs) == (6, 2, 2)


def test_filter_all_management():
    kept, meta = filter_frames([_rec("mgmt"), _rec("ctrl")])
    assert kept == [] and meta.dropped_mgmt_ctrl == 2


def test_filter_matches_predicate_scan():
    rng = random.Random(3)
    records = [
        _rec(rng.choice(["data", "data", "mgmt", "ctrl"]), rng.random() < 0.2, rng.random() > 0.1, ts=i * 0.01)
        for i in range(1000)
    ]
    expected = []
    for r in records:
        if r.ftype.value == "data" and r.retry is False and r.fcs_ok is True:
            expected.append(r)
    kept, meta = filter_frames(records)
    assert kept == expected
    assert meta.dropped_mgmt_ctrl == sum(r.ftype.value != "data" for r in records)


record_strategy = st.builds(
    CaptureRecord,
    ts=st.floats(0, 100),
    length=st.integers(1, 1500),
    direction=st.sampled_from(Direction),
    ftype=st.sampled_from(FrameType),
    retry=st.booleans(),
    fcs_ok=st.booleans(),
)


@given(st.lists(record_strategy, max_size=60))
def test_filter_properties(records):
    once, meta = filter_frames(records)
    twice, _ = filter_frames(once)
    assert once == twice
    assert all(r.ftype is FrameType.DATA and not r.retry and r.fcs_ok for r in once)
    assert meta.record_count + meta.dropped_mgmt_ctrl + meta.dropped_retry_or_fcs == len(records)

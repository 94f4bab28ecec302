import csv
import io
import json
import math
from decimal import Decimal

import numpy as np
import pytest

from inappsense import cli
from inappsense.dnn import ModelArtifact, ModelConfig, predict_proba, train
from inappsense.evaluation import evaluate_open_set
from inappsense.features import write_feature_csv
from inappsense.openset import classify_batch
from inappsense.pipeline import extract_features
from inappsense.records import filter_frames, read_frame_log, split_streams

SMALL = {"hidden_dims": [128, 64], "epochs": 30, "batch_size": 128, "dropout_rate": 0.1}
HELD_OUT = "gmail,viber"
TRAINED = "facebook,instagram,youtube,messenger,skype,whatsapp"


def ok(*argv):
    code = cli.run([str(a) for a in argv])
    assert code == 0, f"exit {code} for {argv}"


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "cfg.json").write_text(json.dumps(SMALL))
    ok("synth", "--fixture", "paperlike-8", "--apps", TRAINED, "--duration", 30, "--seed", 1, "-o", d / "train.jsonl")
    ok("synth", "--fixture", "paperlike-8", "--apps", HELD_OUT, "--duration", 10, "--seed", 2, "-o", d / "unk.jsonl")
    ok("featurize", d / "train.jsonl", "--window-s", 0.5, "-o", d / "train.csv")
    ok("featurize", d / "unk.jsonl", "--window-s", 0.5, "-o", d / "unk.csv")
    ok("train", d / "train.csv", "--config", d / "cfg.json", "--seed", 7, "-o", d / "model.json")
    return d


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_featurize_rows_equal_nonempty_windows(tmp_path):
    ok("synth", "--fixture", "paperlike-8", "--apps", "skype", "--duration", 5, "--seed", 3, "-o", tmp_path / "s.jsonl")
    ok("featurize", tmp_path / "s.jsonl", "--window-s", 0.2, "-o", tmp_path / "f.csv")
    kept, _ = filter_frames(read_frame_log(tmp_path / "s.jsonl"))
    windows = set()
    w = Decimal("0.2")
    for stream in split_streams(kept):
        t0 = Decimal(repr(stream[0].ts))
        for rec in stream:
            windows.add((rec.label, math.floor((Decimal(repr(rec.ts)) - t0) / w)))
    assert len(read_rows(tmp_path / "f.csv")) == len(windows)
    manifest = json.loads((tmp_path / "f.csv.manifest.json").read_text())
    assert manifest["subcommand"] == "featurize" and manifest["params"]["window_s"] == 0.2


def test_train_exclude_apps(work, tmp_path):
    ok("train", work / "train.csv", "--config", work / "cfg.json", "--exclude-apps", "skype,messenger",
       "-o", tmp_path / "m.json")
    assert ModelArtifact.load(tmp_path / "m.json").apps == ["facebook", "instagram", "whatsapp", "youtube"]


def test_train_is_byte_identical(work, tmp_path):
    ok("train", work / "train.csv", "--config", work / "cfg.json", "--seed", 7, "-o", tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == (work / "model.json").read_bytes()
    assert (tmp_path / "again.json.report.csv").read_bytes() == (work / "model.json.report.csv").read_bytes()
    manifest = json.loads((tmp_path / "again.json.manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["params"]["model_config"]["hidden_dims"] == [128, 64]


def test_classify_untrained_activity_is_mostly_unknown(work):
    ok("classify", work / "model.json", work / "unk.jsonl", "--window-s", 0.5, "-o", work / "pred.csv")
    rows = read_rows(work / "pred.csv")
    assert rows and all(r["app"] in HELD_OUT.split(",") for r in rows)
    unknown = sum(r["verdict"] == "unknown" for r in rows)
    assert unknown > len(rows) / 2
    assert all((r["verdict"] == "unknown") == (float(r["p_max"]) < 0.97) for r in rows)


def test_classify_trained_activity_is_mostly_known(work, tmp_path):
    ok("synth", "--fixture", "paperlike-8", "--apps", "facebook", "--duration", 10, "--seed", 9,
       "-o", tmp_path / "fb.jsonl")
    ok("classify", work / "model.json", tmp_path / "fb.jsonl", "--window-s", 0.5, "--threshold", 0.5,
       "-o", tmp_path / "pred.csv")
    rows = read_rows(tmp_path / "pred.csv")
    right = sum(r["verdict"] == f"{r['app']}/{r['activity']}" for r in rows)
    assert right > len(rows) / 2


def test_file_pipeline_matches_in_process(work):
    out = work / "eval"
    ok("evaluate", work / "model.json", "--known", work / "train.csv", "--unknown", work / "unk.csv",
       "-o", out)
    known, _ = extract_features(read_frame_log(work / "train.jsonl"), 0.5)
    unknown, _ = extract_features(read_frame_log(work / "unk.jsonl"), 0.5)
    artifact, _ = train(known.X, known.labels, ModelConfig.from_json({**SMALL, "seed": 7}))
    assert artifact.dumps() == (work / "model.json").read_text()
    report = evaluate_open_set(
        classify_batch(predict_proba(artifact, known.X), 0.97, artifact.label_map), known.labels,
        classify_batch(predict_proba(artifact, unknown.X), 0.97, artifact.label_map), 0.97,
    )
    buf = io.StringIO()
    report.write_csv(buf)
    assert (out / "eval.csv").read_text() == buf.getvalue()
    assert f"known accuracy       {report.known_accuracy:.4f}" in (out / "eval.txt").read_text()
    sweep = read_rows(out / "sweep.csv")
    assert len(sweep) == 101
    hist = read_rows(out / "histogram.csv")
    assert sum(int(r["known_count"]) for r in hist) == len(known)
    assert sum(int(r["unknown_count"]) for r in hist) == len(unknown)


def test_loao_is_deterministic(work, tmp_path):
    table = cli._read_features(work / "train.csv").concat(cli._read_features(work / "unk.csv"))
    keep = np.isin(table.apps, ["facebook", "gmail", "viber"])
    small = tmp_path / "three.csv"
    with open(small, "w", newline="") as fh:
        write_feature_csv(table.subset(keep), fh)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({**SMALL, "epochs": 5}))
    for name in ("a", "b"):
        ok("loao", small, "--config", cfg, "--seed", 3, "-o", tmp_path / name)
    for f in ("loao.csv", "matrix.csv", "summary.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    rows = read_rows(tmp_path / "a" / "loao.csv")
    assert [r["held_out_app"] for r in rows] == ["facebook", "gmail", "viber"]


def test_artifact_loads_back(work):
    artifact = ModelArtifact.load(work / "model.json")
    assert artifact.threshold == 0.97
    assert not {"gmail", "viber"} & set(artifact.apps)


@pytest.mark.parametrize(
    "argv",
    [
        ["featurize", "missing.jsonl", "--window-s", "0.5", "-o", "x.csv"],
        ["featurize", "in.jsonl", "--window-s", "-1", "-o", "x.csv"],
        ["featurize", "in.jsonl", "--window-size", "0.5", "-o", "x.csv"],
        ["classify", "model.json", "in.jsonl", "--window-s", "0.5", "--threshold", "1.5", "-o", "x.csv"],
        ["train", "bad.csv", "-o", "m.json"],
        ["train", "ok.csv", "--config", "bad.json", "-o", "m.json"],
        ["featurize", "decreasing.jsonl", "--window-s", "0.5", "-o", "x.csv"],
        ["frobnicate"],
    ],
)
def test_input_errors_exit_1(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "in.jsonl").write_text("")
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    (tmp_path / "ok.csv").write_text("app,activity,window_index," + ",".join(f"f{i:02d}" for i in range(48)) + "\n")
    (tmp_path / "bad.json").write_text('{"epochs": 3, "colour": 1}')
    frame = '{{"ts":{},"len":100,"dir":"up","ftype":"data","retry":false,"fcs_ok":true,"app":"a","activity":"b"}}\n'
    (tmp_path / "decreasing.jsonl").write_text(frame.format(1.0) + frame.format(0.5))
    assert cli.run(argv) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("error:") and "\n" not in err


def test_decreasing_timestamp_names_the_line(tmp_path, capsys):
    frame = '{{"ts":{},"len":100,"dir":"up","ftype":"data","retry":false,"fcs_ok":true}}\n'
    (tmp_path / "d.jsonl").write_text(frame.format(1.0) + frame.format(0.5))
    assert cli.run(["featurize", str(tmp_path / "d.jsonl"), "--window-s", "0.5", "-o", str(tmp_path / "x.csv")]) == 1
    assert "decreasing timestamp at line 2" in capsys.readouterr().err
    assert not (tmp_path / "x.csv").exists()


def test_internal_failure_exits_2(work, tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli, "train", boom)
    assert cli.run(["train", str(work / "train.csv"), "-o", str(tmp_path / "m.json")]) == 2
    assert "internal error" in capsys.readouterr().err
    assert not (tmp_path / "m.json").exists()


def test_help_exits_zero(capsys):
    assert cli.run(["--help"]) == 0
    assert "featurize" in capsys.readouterr().out

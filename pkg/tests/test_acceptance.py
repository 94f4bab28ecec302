"""Acceptance criteria, one test per criterion, each at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v``; a PASS/FAIL line per
criterion is printed in the terminal summary.
"""
import json
import math
import os
import random
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inappsense import cli
from inappsense.dnn import ModelConfig, backward, forward, init_model, loss_cce, predict_proba, train
from inappsense.evaluation import misclassification_matrix
from inappsense.features import apply_scaler, featurize, fit_scaler
from inappsense.openset import classify_batch, sweep_from_proba
from inappsense.pipeline import extract_features
from inappsense.records import ActivityLabel, CaptureRecord, Direction, FrameType, filter_frames
from inappsense.segment import FlowSegment, segment_by_window
from inappsense.synth import generate_capture, generate_dataset, paperlike_profiles

from oracles import feature_oracle

HELD_OUT = ("gmail", "viber")


@pytest.fixture
def criterion(record_property):
    def note(number, title, detail=""):
        record_property("criterion", number)
        record_property("title", title)
        if detail:
            record_property("detail", detail)
        print(f"criterion {number}: {title} {detail}")

    return note


def test_1_gradient_finite_differences(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    config = ModelConfig(input_dim=48, hidden_dims=(8, 8), output_dim=5, dropout_rate=0.0)
    params = init_model(config, seed=11)
    X = rng.normal(size=(32, 48))
    y = rng.integers(0, 5, 32)
    _, cache = forward(params, X, "infer")
    grads = backward(cache, y)

    pool = [(i, name, idx) for i, layer in enumerate(params) for name in ("w", "b")
            for idx in np.ndindex(getattr(layer, name).shape)]
    picks = [pool[k] for k in rng.choice(len(pool), size=150, replace=False)]
    step = 1e-6
    worst = 0.0
    for i, name, idx in picks:
        arr = getattr(params[i], name)
        orig = arr[idx]
        arr[idx] = orig + step
        up = loss_cce(forward(params, X)[0], y)
        arr[idx] = orig - step
        down = loss_cce(forward(params, X)[0], y)
        arr[idx] = orig
        numeric = (up - down) / (2 * step)
        analytic = getattr(grads[i], name)[idx]
        worst = max(worst, abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8))
    elapsed = time.perf_counter() - start
    criterion(1, "gradient finite differences (48-8-8-5)",
              f"coords={len(picks)} max_rel_err={worst:.2e} time={elapsed:.2f}s")
    assert len(picks) >= 100
    assert worst < 1e-4
    assert elapsed < 10


def _random_segment(rng, kind):
    label = ActivityLabel("demo", "act")
    if kind == "empty_up":
        frames = [(rng.uniform(0, 0.5), rng.randint(40, 1500), False) for _ in range(rng.randint(1, 30))]
    elif kind == "empty_down":
        frames = [(rng.uniform(0, 0.5), rng.randint(40, 1500), True) for _ in range(rng.randint(1, 30))]
    elif kind == "single":
        frames = [(rng.uniform(0, 0.5), rng.randint(40, 1500), rng.random() < 0.5)]
    else:
        n = rng.choice([2, 3, 4, 5, 10, 50, 200])
        frames = [(rng.uniform(0, 0.5), rng.randint(40, 1500), rng.random() < 0.5) for _ in range(n)]
    frames.sort()
    records = tuple(
        CaptureRecord(t, n, Direction.UP if up else Direction.DOWN, FrameType.DATA, label=label)
        for t, n, up in frames
    )
    return FlowSegment(label, 0, 0.5, records), frames


def test_2_feature_oracle_equivalence(criterion):
    start = time.perf_counter()
    rng = random.Random(7)
    kinds = ["empty_up", "empty_down", "single"] + ["mixed"] * 7
    worst = 0.0
    seen = set()
    for i in range(1000):
        kind = kinds[i % len(kinds)]
        seen.add(kind)
        seg, frames = _random_segment(rng, kind)
        got = featurize(seg).values
        want = np.array(feature_oracle(frames))
        worst = max(worst, float(np.max(np.abs(got - want))))
    elapsed = time.perf_counter() - start
    criterion(2, "feature oracle equivalence (1000 segments)", f"max_abs_err={worst:.2e} time={elapsed:.2f}s")
    assert seen == {"empty_up", "empty_down", "single", "mixed"}
    assert worst <= 1e-9
    assert elapsed < 30


matrices = st.tuples(
    st.integers(0, 2**32 - 1),
    st.lists(st.integers(0, 47), max_size=6),
)


def _scaler_check(seed, constant_cols):
    rng = np.random.default_rng(seed)
    scale = 10.0 ** rng.uniform(-3, 3, 48)
    offset = rng.uniform(-100, 100, 48) * scale
    X = rng.normal(size=(500, 48)) * scale + offset
    for j in constant_cols:
        X[:, j] = offset[j]
    Z = apply_scaler(fit_scaler(X), X)
    const = np.zeros(48, bool)
    const[list(constant_cols)] = True
    mean_err = float(np.max(np.abs(Z[:, ~const].mean(axis=0))))
    std_err = float(np.max(np.abs(Z[:, ~const].std(axis=0) - 1)))
    return mean_err, std_err, bool(np.all(Z[:, const] == 0.0))


def test_3_scaler_contract(criterion):
    worst = [0.0, 0.0]
    exact = True

    @settings(max_examples=60, deadline=None, derandomize=True)
    @given(matrices)
    def check(case):
        mean_err, std_err, zeros = _scaler_check(*case)
        worst[0] = max(worst[0], mean_err)
        worst[1] = max(worst[1], std_err)
        nonlocal exact
        exact = exact and zeros
        assert mean_err < 1e-9 and std_err < 1e-9 and zeros

    try:
        check()
    finally:
        criterion(3, "scaler contract (random 500x48)",
                  f"max|mean|={worst[0]:.1e} max|std-1|={worst[1]:.1e} constant_zero={exact}")


def test_4_threshold_monotonicity(criterion):
    grid = np.linspace(0, 1, 101)
    failures = []

    @settings(max_examples=60, deadline=None, derandomize=True)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 200), st.integers(2, 10))
    def check(seed, n, k):
        rng = np.random.default_rng(seed)
        P = rng.dirichlet(np.full(k, rng.uniform(0.05, 3)), n)
        labels = [ActivityLabel("a", f"c{i}") for i in range(k)]
        rejected = [sum(not p.is_known for p in classify_batch(P, tau, labels)) for tau in grid]
        ok = rejected[0] == 0 and all(a <= b for a, b in zip(rejected, rejected[1:]))
        sweep = sweep_from_proba(P, rng.integers(0, k, n), P, grid)
        ok = ok and list(sweep.unknown_rejected) == rejected
        if not ok:
            failures.append(seed)
        assert ok

    try:
        check()
    finally:
        criterion(4, "threshold monotonicity (101-point grid)", f"failing_sets={len(failures)}")


def test_5_segmentation_partition(criterion):
    profiles = [p for i, p in enumerate(paperlike_profiles()) if i % 5 == 0]
    details = []
    ok = True
    for k, profile in enumerate(profiles):
        clean, _ = filter_frames(generate_capture(profile, 60.0, seed=100 + k))
        counts = []
        for w in (0.5, 0.2, 0.05, 0.02):
            segs = segment_by_window(clean, w)
            ok = ok and sum(len(s) for s in segs) == len(clean)
            counts.append(len(segs))
        ok = ok and all(a <= b for a, b in zip(counts, counts[1:]))
        details.append(counts)
    criterion(5, "segmentation partition on 60 s streams",
              f"streams={len(profiles)} segments(0.5,0.2,0.05,0.02)={details[0]}")
    assert ok


# Training settings for the synthetic end-to-end run.  Architecture,
# optimiser, dropout and batch size are the defaults; the epoch count is
# reduced to keep the run inside its time budget on one core.
E2E_EPOCHS = 30
E2E_SEED = 7
E2E_DURATION = 260.0  # seconds per activity; ~20k segments at 0.5 s


@pytest.mark.slow
def test_6_end_to_end_synthetic(criterion):
    start = time.perf_counter()
    profiles = paperlike_profiles()
    records = generate_dataset(profiles, E2E_DURATION, seed=1)
    table, _ = extract_features(records, 0.5)
    del records
    apps = np.array(table.apps)
    known = table.subset(~np.isin(apps, HELD_OUT))
    unknown = table.subset(np.isin(apps, HELD_OUT))

    artifact, report = train(known.X, known.labels, ModelConfig(epochs=E2E_EPOCHS, seed=E2E_SEED))

    # threshold calibration: validation split plus a separate capture of the
    # held-out apps (different seed, never scored)
    calibration = [p for p in profiles if p.label.app in HELD_OUT]
    cal_table, _ = extract_features(generate_dataset(calibration, E2E_DURATION / 4, seed=2), 0.5)
    index = {lab: i for i, lab in enumerate(artifact.label_map)}
    val = report.val_index
    y_val = np.array([index[known.labels[i]] for i in val])
    sweep = sweep_from_proba(predict_proba(artifact, known.X[val]), y_val, predict_proba(artifact, cal_table.X))
    tau = sweep.recommended_tau

    P_unknown = predict_proba(artifact, unknown.X)
    unknown_apps = np.array(unknown.apps)
    by_app = {app: classify_batch(P_unknown[unknown_apps == app], tau, artifact.label_map) for app in HELD_OUT}
    rates = {app: sum(not p.is_known for p in preds) / len(preds) for app, preds in by_app.items()}
    mean_rate = float(np.mean(list(rates.values())))
    matrix = misclassification_matrix(by_app, artifact.label_map)
    sums = [float(matrix.percent[i].sum()) for i, app in enumerate(matrix.rows) if app not in matrix.empty_rows]
    elapsed = time.perf_counter() - start

    criterion(
        6, "end-to-end paperlike-8 (6 trained / 2 held out)",
        f"segments={len(table)} val_acc={report.final_val_accuracy:.4f} tau={tau:.2f} "
        + " ".join(f"{a}_rej={r:.3f}" for a, r in rates.items())
        + f" mean_rej={mean_rate:.3f} row_sums={[round(s, 2) for s in sums]} time={elapsed:.0f}s",
    )
    assert 15_000 <= len(table) <= 25_000
    assert not set(HELD_OUT) & set(artifact.apps)
    assert report.final_val_accuracy >= 0.90
    assert 0.0 < tau < 1.0
    assert mean_rate >= 0.70
    assert all(abs(s - 100) <= 1 for s in sums)
    assert elapsed < 300


def test_7_determinism(criterion, tmp_path):
    def ok(*argv):
        assert cli.run([str(a) for a in argv]) == 0

    trained = ",".join(sorted({p.label.app for p in paperlike_profiles()} - set(HELD_OUT)))
    ok("synth", "--fixture", "paperlike-8", "--apps", trained, "--duration", 10, "--seed", 5, "-o", tmp_path / "log.jsonl")
    ok("featurize", tmp_path / "log.jsonl", "--window-s", 0.5, "-o", tmp_path / "f.csv")
    (tmp_path / "cfg.json").write_text(json.dumps({"epochs": 3}))
    for name in ("a.json", "b.json"):
        ok("train", tmp_path / "f.csv", "--config", tmp_path / "cfg.json", "--seed", 7, "-o", tmp_path / name)
    same_model = (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    ok("synth", "--fixture", "paperlike-8", "--apps", "facebook,gmail,viber", "--duration", 10, "--seed", 6,
       "-o", tmp_path / "three.jsonl")
    ok("featurize", tmp_path / "three.jsonl", "--window-s", 0.5, "-o", tmp_path / "three.csv")
    (tmp_path / "small.json").write_text(json.dumps({"hidden_dims": [64, 32], "epochs": 5, "batch_size": 64}))
    for name in ("la", "lb"):
        ok("loao", tmp_path / "three.csv", "--config", tmp_path / "small.json", "--seed", 7, "-o", tmp_path / name)
    same_loao = all(
        (tmp_path / "la" / f).read_bytes() == (tmp_path / "lb" / f).read_bytes()
        for f in ("loao.csv", "matrix.csv", "summary.txt")
    )
    criterion(7, "determinism (train --seed 7, loao)", f"artifact_identical={same_model} loao_identical={same_loao}")
    assert same_model and same_loao


DATASET_ENV = "INAPPSENSE_DATASET"


def test_8_optional_public_dataset(criterion):
    path = os.environ.get(DATASET_ENV)
    if not path or not os.path.exists(path):
        criterion(8, "optional real-capture check", "dataset not available")
        pytest.skip(f"dataset not available (set {DATASET_ENV} to a frame log)")
    from inappsense.records import read_frame_log

    table, _ = extract_features(read_frame_log(path), 0.5)
    _, report = train(table.X, table.labels, ModelConfig(seed=E2E_SEED))
    acc = report.final_val_accuracy
    criterion(8, "optional real-capture check (0.5 s windows)", f"val_acc={acc:.4f} target=0.93+-0.05")
    assert math.fabs(acc - 0.93) <= 0.05

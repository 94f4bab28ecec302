"""Command-line front end: ``inappsense <subcommand> ...``.

Stages exchange files (JSON-lines frame logs, feature CSVs, JSON model
artifacts) so each step can be rerun or inspected on its own.  Every
output is written atomically and gets a ``*.manifest.json`` next to it
recording the resolved parameters.

Exit status is 0 on success, 1 for bad input (flags, files, schemas) and
2 for anything else.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dnn import DEFAULT_THRESHOLD, ModelArtifact, ModelConfig, predict_proba, train
from .evaluation import evaluate_open_set, leave_one_app_out
from .features import FeatureTable, read_feature_csv, write_feature_csv
from .openset import classify_batch, confidence_histogram, sweep_from_proba
from .pipeline import extract_features
from .records import read_frame_log, write_frame_log
from .synth import generate_dataset, paperlike_profiles, profiles_from_json

log = logging.getLogger("inappsense")

FIXTURES = {"paperlike-8": paperlike_profiles}


class InputError(Exception):
    """Bad flags, missing files or malformed inputs (exit status 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


# -- file helpers -------------------------------------------------------------


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _render(writer, obj) -> str:
    buf = io.StringIO()
    writer(obj, buf)
    return buf.getvalue()


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None


def _read_features(path) -> FeatureTable:
    with open(path, encoding="utf-8", newline="") as fh:
        try:
            return read_feature_csv(fh)
        except ValueError as exc:
            raise InputError(f"{path}: {exc}") from None


def _read_logs(paths, window_s: float) -> FeatureTable:
    table = None
    for path in paths:
        try:
            part, meta = extract_features(read_frame_log(path), window_s)
        except ValueError as exc:
            raise InputError(f"{path}: {exc}") from None
        log.info("%s: kept %d frames, %d segments", path, meta.record_count, len(part))
        table = part if table is None else table.concat(part)
    return table


def _model_config(args) -> ModelConfig:
    obj = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        obj["seed"] = args.seed
    try:
        return ModelConfig.from_json(obj)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{args.config}: {exc}") from None


def _apps(text: str | None) -> set[str]:
    return {a.strip() for a in text.split(",") if a.strip()} if text else set()


class Run:
    """Collects outputs of one invocation and writes its manifest(s)."""

    def __init__(self, args, inputs):
        self.args = args
        self.inputs = [str(p) for p in inputs]
        self.outputs: list[str] = []

    def write(self, path, text: str) -> None:
        atomic_write(path, text)
        self.outputs.append(str(path))

    def manifest(self, seed=None, **resolved) -> dict:
        params = {
            k: v for k, v in vars(self.args).items()
            if k not in ("func", "inputs", "output", "verbose", "started")
        }
        return {
            "tool": "inappsense",
            "version": __version__,
            "subcommand": self.args.command,
            "params": {**params, **resolved},
            "inputs": self.inputs,
            "outputs": self.outputs,
            "seed": seed,
            "duration_s": round(time.perf_counter() - self.args.started, 3),
        }

    def finish(self, manifest_path, seed=None, **resolved) -> None:
        text = json.dumps(self.manifest(seed, **resolved), indent=2, sort_keys=True)
        atomic_write(manifest_path, text + "\n")


def _manifest_path(output) -> Path:
    return Path(f"{output}.manifest.json")


# -- subcommands --------------------------------------------------------------


def cmd_synth(args) -> None:
    if args.fixture:
        profiles = FIXTURES[args.fixture]()
    else:
        try:
            profiles = profiles_from_json(_read_json(args.config))
        except ValueError as exc:
            raise InputError(f"{args.config}: {exc}") from None
    wanted = _apps(args.apps)
    if wanted:
        missing = wanted - {p.label.app for p in profiles}
        if missing:
            raise InputError(f"--apps: no profiles for {', '.join(sorted(missing))}")
        profiles = [p for p in profiles if p.label.app in wanted]
    if not args.duration > 0:
        raise InputError("--duration must be positive")
    records = generate_dataset(profiles, args.duration, args.seed)
    run = Run(args, [args.config] if args.config else [])
    run.write(args.output, _render(write_frame_log, records))
    run.finish(_manifest_path(args.output), args.seed)


def cmd_featurize(args) -> None:
    table = _read_logs(args.inputs, args.window_s)
    run = Run(args, args.inputs)
    run.write(args.output, _render(write_feature_csv, table))
    run.finish(_manifest_path(args.output))


def cmd_train(args) -> None:
    config = _model_config(args)
    table = _read_features(args.inputs[0])
    dropped = _apps(args.exclude_apps)
    if dropped:
        table = table.subset(np.array([app not in dropped for app in table.apps]))
    if any(lab is None for lab in table.labels):
        raise InputError(f"{args.inputs[0]}: training needs labelled rows")
    try:
        artifact, report = train(table.X, table.labels, config)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    artifact.threshold = args.threshold
    report_path = args.report or f"{args.output}.report.csv"
    run = Run(args, args.inputs + ([args.config] if args.config else []))
    run.write(args.output, artifact.dumps())
    run.write(report_path, _render(lambda r, s: r.write_csv(s), report))
    run.finish(_manifest_path(args.output), config.seed, model_config=artifact.config.to_json())
    print(f"validation accuracy {report.final_val_accuracy:.4f} "
          f"({report.n_train} train / {report.n_val} val, {len(artifact.label_map)} classes)")


def _load_artifact(path) -> ModelArtifact:
    try:
        return ModelArtifact.load(path)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc.msg})") from None
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def _threshold(args, artifact: ModelArtifact) -> float:
    return artifact.threshold if args.threshold is None else args.threshold


def cmd_classify(args) -> None:
    artifact = _load_artifact(args.model)
    table = _read_logs(args.inputs, args.window_s)
    tau = _threshold(args, artifact)
    preds = classify_batch(predict_proba(artifact, table.X), tau, artifact.label_map) if len(table) else []
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["app", "activity", "window_index", "p_max", "argmax_app", "argmax_activity", "verdict"])
    for lab, k, p in zip(table.labels, table.window_index, preds):
        top = artifact.label_map[p.argmax_index]
        writer.writerow([lab.app if lab else "", lab.activity if lab else "", int(k), repr(p.p_max),
                         top.app, top.activity, p.verdict])
    run = Run(args, [args.model, *args.inputs])
    run.write(args.output, buf.getvalue())
    run.finish(_manifest_path(args.output))
    n_unknown = sum(not p.is_known for p in preds)
    print(f"{len(preds)} segments, {n_unknown} unknown at threshold {tau}")


def cmd_evaluate(args) -> None:
    artifact = _load_artifact(args.model)
    known = _read_features(args.known)
    unknown = _read_features(args.unknown)
    if len(known) == 0 or len(unknown) == 0:
        raise InputError("evaluate needs non-empty known and unknown feature sets")
    index = {lab: i for i, lab in enumerate(artifact.label_map)}
    strangers = sorted({str(lab) for lab in known.labels if lab not in index})
    if strangers:
        raise InputError(f"{args.known}: labels not in the model: {', '.join(strangers)}")
    tau = _threshold(args, artifact)
    P_known = predict_proba(artifact, known.X)
    P_unknown = predict_proba(artifact, unknown.X)
    known_preds = classify_batch(P_known, tau, artifact.label_map)
    unknown_preds = classify_batch(P_unknown, tau, artifact.label_map)
    report = evaluate_open_set(known_preds, known.labels, unknown_preds, tau)
    hist = confidence_histogram(P_known, P_unknown, args.bins)
    sweep = sweep_from_proba(P_known, [index[lab] for lab in known.labels], P_unknown)

    out = Path(args.output)
    run = Run(args, [args.model, args.known, args.unknown])
    summary = report.summary() + f"recommended tau      {sweep.recommended_tau:.2f}\n"
    run.write(out / "eval.txt", summary)
    run.write(out / "eval.csv", _render(lambda r, s: r.write_csv(s), report))
    run.write(out / "histogram.csv", _render(lambda h, s: h.write_csv(s), hist))
    run.write(out / "sweep.csv", _render(lambda w, s: w.write_csv(s), sweep))
    run.finish(out / "manifest.json")
    sys.stdout.write(summary)


def cmd_loao(args) -> None:
    config = _model_config(args)
    table = _read_features(args.inputs[0])
    if any(lab is None for lab in table.labels):
        raise InputError(f"{args.inputs[0]}: leave-one-app-out needs labelled rows")
    tau = DEFAULT_THRESHOLD if args.threshold is None else args.threshold
    try:
        report = leave_one_app_out(table, config, tau_policy=args.tau_policy, threshold=tau)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    out = Path(args.output)
    run = Run(args, args.inputs + ([args.config] if args.config else []))
    run.write(out / "loao.csv", _render(lambda r, s: r.write_csv(s), report))
    run.write(out / "matrix.csv", _render(lambda m, s: m.write_csv(s), report.matrix))
    run.write(out / "summary.txt", report.summary())
    run.finish(out / "manifest.json", config.seed, model_config=config.to_json())
    sys.stdout.write(report.summary())


# -- argument parsing -----------------------------------------------------------


def _unit_interval(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in [0, 1], got {value}")
    return value


def _positive(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (value > 0 and np.isfinite(value)):
        raise argparse.ArgumentTypeError(f"must be a positive number, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="inappsense", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"inappsense {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate labelled synthetic frame logs")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="JSON profile file ({\"profiles\": [...]})")
    src.add_argument("--fixture", choices=sorted(FIXTURES))
    p.add_argument("--apps", help="comma-separated apps to keep")
    p.add_argument("--duration", type=_positive, default=60.0, help="seconds per activity (default 60)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="frame logs -> feature CSV")
    p.add_argument("inputs", nargs="+", metavar="LOG")
    p.add_argument("--window-s", type=_positive, required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="feature CSV -> model artifact and training report")
    p.add_argument("inputs", nargs=1, metavar="FEATURES")
    p.add_argument("--config", help="JSON file of model settings")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--threshold", type=_unit_interval, default=DEFAULT_THRESHOLD)
    p.add_argument("--exclude-apps", help="comma-separated apps left out of training")
    p.add_argument("--report", help="training report CSV (default: OUTPUT.report.csv)")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="model + frame logs -> per-segment predictions")
    p.add_argument("model")
    p.add_argument("inputs", nargs="+", metavar="LOG")
    p.add_argument("--window-s", type=_positive, required=True)
    p.add_argument("--threshold", type=_unit_interval, help="default: the model's own (0.97 unless trained otherwise)")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="open-set report, confidence histogram and threshold sweep")
    p.add_argument("model")
    p.add_argument("--known", required=True, help="feature CSV of trained activities")
    p.add_argument("--unknown", required=True, help="feature CSV of untrained activities")
    p.add_argument("--threshold", type=_unit_interval)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("loao", help="leave-one-app-out detection rates and misclassification matrix")
    p.add_argument("inputs", nargs=1, metavar="FEATURES")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold", type=_unit_interval)
    p.add_argument("--tau-policy", choices=("fixed", "sweep"), default="fixed")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_loao)
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.started = time.perf_counter()
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        args.func(args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: cannot open {exc.filename}: {exc.strerror}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

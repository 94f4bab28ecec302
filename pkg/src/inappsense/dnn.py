"""Fully connected tanh network with softmax output, trained with Adam.

Everything is plain numpy in float64: forward pass, inverted dropout,
fused softmax/cross-entropy backpropagation and the Adam update, so each
piece can be checked numerically on its own.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from .features import FeatureVector, Scaler, apply_scaler, fit_scaler
from .records import ActivityLabel
from .validation import check_features, check_labels

__all__ = [
    "ARTIFACT_VERSION",
    "DEFAULT_THRESHOLD",
    "AdamState",
    "EpochRecord",
    "ForwardCache",
    "Layer",
    "ModelArtifact",
    "ModelConfig",
    "TrainReport",
    "TrainingDivergedError",
    "adam_step",
    "backward",
    "forward",
    "init_adam",
    "init_model",
    "loss_cce",
    "one_hot",
    "predict_proba",
    "stratified_split",
    "train",
]

log = logging.getLogger(__name__)

ARTIFACT_VERSION = 1
DEFAULT_THRESHOLD = 0.97
PROB_FLOOR = 1e-12


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int, batch: int, detail: str = "non-finite loss"):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"training diverged ({detail}) at epoch {epoch}, batch {batch}")


@dataclass(frozen=True)
class ModelConfig:
    output_dim: int = 2
    input_dim: int = 48
    hidden_dims: tuple[int, ...] = (1024, 512, 256, 128)
    hidden_activation: str = "tanh"
    dropout_rate: float = 0.3
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 2048
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.output_dim < 2:
            raise ValueError("output_dim must be >= 2")
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden_dims must be a non-empty list of positive integers")
        if self.hidden_activation != "tanh":
            raise ValueError("only the tanh hidden activation is supported")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_epsilon > 0):
            raise ValueError("invalid Adam hyperparameters")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.output_dim]

    def to_json(self) -> dict:
        out = asdict(self)
        out["hidden_dims"] = list(self.hidden_dims)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown model config key(s): {sorted(unknown)}")
        return cls(**obj)


@dataclass
class Layer:
    w: np.ndarray  # (fan_out, fan_in)
    b: np.ndarray  # (fan_out,)


def init_model(config: ModelConfig, seed=None) -> list[Layer]:
    """Glorot-uniform weights, zero biases; ``seed`` defaults to ``config.seed``."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    sizes = config.layer_sizes
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        params.append(Layer(rng.uniform(-limit, limit, size=(fan_out, fan_in)), np.zeros(fan_out)))
    return params


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class ForwardCache:
    params: list[Layer]
    mode: str
    inputs: list[np.ndarray] = field(default_factory=list)  # input to each layer
    hidden: list[np.ndarray] = field(default_factory=list)  # tanh outputs before dropout
    masks: list[np.ndarray | None] = field(default_factory=list)
    probs: np.ndarray | None = None


def forward(params: Sequence[Layer], X, mode: str = "infer", dropout_rate: float = 0.0, rng=None):
    """Run the network; returns ``(probabilities, cache)``.

    In ``"train"`` mode each hidden activation is multiplied by an inverted
    dropout mask (keep-prob ``1 - dropout_rate``, survivors scaled up) drawn
    from ``rng`` (seed or Generator).  ``"infer"`` mode applies no dropout.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    A = np.asarray(X, dtype=float)
    if A.ndim == 1:
        A = A.reshape(1, -1)
    if A.shape[1] != params[0].w.shape[1]:
        raise ValueError(f"expected {params[0].w.shape[1]} input features, got {A.shape[1]}")
    use_dropout = mode == "train" and dropout_rate > 0
    if use_dropout:
        rng = np.random.default_rng(rng)
        keep = 1.0 - dropout_rate

    cache = ForwardCache(list(params), mode)
    for depth, layer in enumerate(params[:-1]):
        cache.inputs.append(A)
        H = np.tanh(A @ layer.w.T + layer.b)
        if not np.all(np.isfinite(H)):
            raise FloatingPointError(f"non-finite activation in hidden layer {depth}")
        cache.hidden.append(H)
        if use_dropout:
            mask = (rng.random(H.shape) < keep) / keep
            cache.masks.append(mask)
            A = H * mask
        else:
            cache.masks.append(None)
            A = H
    cache.inputs.append(A)
    out = params[-1]
    logits = A @ out.w.T + out.b
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite activation in output layer")
    cache.probs = softmax(logits)
    return cache.probs, cache


def one_hot(y, n_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=int)
    out = np.zeros((y.size, n_classes))
    out[np.arange(y.size), y] = 1.0
    return out


def _as_targets(targets, n_classes: int) -> np.ndarray:
    T = np.asarray(targets)
    if T.ndim == 1:
        return one_hot(T, n_classes)
    return T.astype(float)


def loss_cce(probabilities, targets) -> float:
    """Mean categorical cross-entropy; probabilities floored at 1e-12 before the log.

    ``targets`` is either a one-hot matrix or a vector of class indices.
    """
    P = np.asarray(probabilities, dtype=float)
    if P.ndim == 1:
        P = P.reshape(1, -1)
    T = _as_targets(targets, P.shape[1])
    if T.shape != P.shape:
        raise ValueError(f"targets shape {T.shape} does not match probabilities {P.shape}")
    return float(-(T * np.log(np.maximum(P, PROB_FLOOR))).sum() / P.shape[0])


def backward(cache: ForwardCache, targets) -> list[Layer]:
    """Exact gradients of :func:`loss_cce` for the batch held in ``cache``.

    Dropout masks recorded by the forward pass are replayed.
    """
    if cache is None or cache.probs is None or len(cache.inputs) != len(cache.params):
        raise ValueError("backward needs the cache of a completed forward pass")
    P = cache.probs
    T = _as_targets(targets, P.shape[1])
    if T.shape != P.shape:
        raise ValueError(f"targets shape {T.shape} does not match cached batch {P.shape}")

    delta = (P - T) / P.shape[0]
    grads: list[Layer] = [None] * len(cache.params)  # type: ignore[list-item]
    for depth in range(len(cache.params) - 1, -1, -1):
        A_in = cache.inputs[depth]
        grads[depth] = Layer(delta.T @ A_in, delta.sum(axis=0))
        if depth == 0:
            break
        dA = delta @ cache.params[depth].w
        mask = cache.masks[depth - 1]
        if mask is not None:
            dA = dA * mask
        H = cache.hidden[depth - 1]
        delta = dA * (1.0 - H * H)
    return grads


@dataclass
class AdamState:
    m: list[Layer]
    v: list[Layer]
    t: int = 0


def init_adam(params: Sequence[Layer]) -> AdamState:
    zeros = lambda: [Layer(np.zeros_like(p.w), np.zeros_like(p.b)) for p in params]  # noqa: E731
    return AdamState(zeros(), zeros(), 0)


def adam_step(
    state: AdamState,
    params: Sequence[Layer],
    grads: Sequence[Layer],
    t: int | None = None,
    *,
    learning_rate: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> tuple[list[Layer], AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    t = state.t + 1 if t is None else int(t)
    if t < 1:
        raise ValueError("Adam step index must be >= 1")
    if not (len(params) == len(grads) == len(state.m)):
        raise ValueError("params, gradients and optimizer state have different depths")
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        updated = []
        for name in ("w", "b"):
            pv, gv, mv, vv = (getattr(o, name) for o in (p, g, m, v))
            if gv.shape != pv.shape or mv.shape != pv.shape:
                raise ValueError(f"shape mismatch in Adam step: {gv.shape} vs {pv.shape}")
            mv = beta1 * mv + (1.0 - beta1) * gv
            vv = beta2 * vv + (1.0 - beta2) * gv * gv
            step = learning_rate * (mv / c1) / (np.sqrt(vv / c2) + epsilon)
            updated.append((pv - step, mv, vv))
        (pw, mw, vw), (pb, mb, vb) = updated
        new_params.append(Layer(pw, pb))
        new_m.append(Layer(mw, mb))
        new_v.append(Layer(vw, vb))
    return new_params, AdamState(new_m, new_v, t)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_accuracy: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord]
    seed: int
    n_train: int
    n_val: int
    train_index: np.ndarray = field(default=None, repr=False)
    val_index: np.ndarray = field(default=None, repr=False)

    @property
    def final_val_accuracy(self) -> float:
        return self.epochs[-1].val_accuracy

    @property
    def final_train_accuracy(self) -> float:
        return self.epochs[-1].train_accuracy

    def write_csv(self, stream) -> None:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "train_accuracy", "val_accuracy", "seed", "n_train", "n_val"])
        for rec in self.epochs:
            writer.writerow(
                [rec.epoch, repr(rec.train_loss), repr(rec.train_accuracy), repr(rec.val_accuracy),
                 self.seed, self.n_train, self.n_val]
            )


@dataclass
class ModelArtifact:
    config: ModelConfig
    params: list[Layer]
    scaler: Scaler
    label_map: list[ActivityLabel]
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if len(self.label_map) != self.config.output_dim:
            raise ValueError("label_map length must equal output_dim")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")

    @property
    def apps(self) -> list[str]:
        return sorted({lab.app for lab in self.label_map})

    def predict_proba(self, X) -> np.ndarray:
        return predict_proba(self, X)

    def to_json(self) -> dict:
        return {
            "version": ARTIFACT_VERSION,
            "config": self.config.to_json(),
            "label_map": [[lab.app, lab.activity] for lab in self.label_map],
            "scaler": self.scaler.to_json(),
            "layers": [{"w": layer.w.tolist(), "b": layer.b.tolist()} for layer in self.params],
            "threshold": float(self.threshold),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"))

    @classmethod
    def from_json(cls, obj: dict) -> "ModelArtifact":
        if obj.get("version") != ARTIFACT_VERSION:
            raise ValueError(f"unsupported model artifact version {obj.get('version')!r}")
        try:
            config = ModelConfig.from_json(obj["config"])
            params = [Layer(np.asarray(l["w"], dtype=float), np.asarray(l["b"], dtype=float)) for l in obj["layers"]]
            label_map = [ActivityLabel(app, act) for app, act in obj["label_map"]]
            scaler = Scaler.from_json(obj["scaler"])
            threshold = float(obj["threshold"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed model artifact: {exc}") from None
        sizes = config.layer_sizes
        if len(params) != len(sizes) - 1 or any(
            p.w.shape != (fo, fi) or p.b.shape != (fo,) for p, fi, fo in zip(params, sizes[:-1], sizes[1:])
        ):
            raise ValueError("layer shapes do not match the model config")
        if scaler.mean.shape != (config.input_dim,) or scaler.std.shape != (config.input_dim,):
            raise ValueError("scaler width does not match input_dim")
        return cls(config, params, scaler, label_map, threshold)

    @classmethod
    def loads(cls, text: str) -> "ModelArtifact":
        return cls.from_json(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "ModelArtifact":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


def predict_proba(artifact: ModelArtifact, X) -> np.ndarray:
    """Scale with the artifact's scaler and run an inference forward pass.

    A single vector (1-D or :class:`FeatureVector`) gives a 1-D result.
    """
    if isinstance(X, FeatureVector):
        X = X.values
    arr = np.asarray(X, dtype=float)
    single = arr.ndim == 1
    arr = check_features(arr.reshape(1, -1) if single else arr, artifact.config.input_dim)
    P, _ = forward(artifact.params, apply_scaler(artifact.scaler, arr), mode="infer")
    return P[0] if single else P


def stratified_split(y: np.ndarray, val_fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Per-class seeded split; every class keeps >= 1 sample on each side."""
    rng = np.random.default_rng(rng)
    train_idx, val_idx = [], []
    for c in np.unique(y):
        members = rng.permutation(np.flatnonzero(y == c))
        n_val = min(len(members) - 1, max(1, int(math.floor(val_fraction * len(members) + 0.5))))
        val_idx.append(members[:n_val])
        train_idx.append(members[n_val:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(val_idx))


def train(X, labels, config: ModelConfig | None = None) -> tuple[ModelArtifact, TrainReport]:
    """Fit scaler and network on a stratified 80/20 split.

    ``labels`` are :class:`ActivityLabel` values (or ``"app/activity"``
    strings).  The output layer is sized to the distinct labels, ordered
    by (app, activity).  Everything random derives from ``config.seed``.
    """
    config = config or ModelConfig()
    X = check_features(X, config.input_dim)
    labels = check_labels(labels, len(X))
    label_map = sorted(set(labels))
    if len(label_map) < 2:
        raise ValueError("training needs at least 2 classes")
    index = {lab: i for i, lab in enumerate(label_map)}
    y = np.array([index[lab] for lab in labels], dtype=int)
    counts = np.bincount(y, minlength=len(label_map))
    if counts.min() < 2:
        small = [str(label_map[i]) for i in np.flatnonzero(counts < 2)]
        raise ValueError(f"classes with fewer than 2 samples: {', '.join(small)}")
    config = replace(config, output_dim=len(label_map))

    split_seq, init_seq, shuffle_seq, dropout_seq = np.random.SeedSequence(config.seed).spawn(4)
    train_idx, val_idx = stratified_split(y, 0.2, split_seq)
    scaler = fit_scaler(X[train_idx])
    Xs = apply_scaler(scaler, X)
    X_tr, y_tr = Xs[train_idx], y[train_idx]
    X_val, y_val = Xs[val_idx], y[val_idx]
    T_tr = one_hot(y_tr, config.output_dim)

    params = init_model(config, init_seq)
    state = init_adam(params)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)
    history = []
    n = len(y_tr)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for batch_no, start in enumerate(range(0, n, config.batch_size), start=1):
            idx = order[start:start + config.batch_size]
            try:
                P, cache = forward(params, X_tr[idx], "train", config.dropout_rate, dropout_rng)
            except FloatingPointError as exc:
                raise TrainingDivergedError(epoch, batch_no, str(exc)) from None
            loss = loss_cce(P, T_tr[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, batch_no)
            loss_sum += loss * len(idx)
            correct += int((P.argmax(axis=1) == y_tr[idx]).sum())
            grads = backward(cache, T_tr[idx])
            params, state = adam_step(
                state, params, grads, state.t + 1,
                learning_rate=config.learning_rate, beta1=config.adam_beta1,
                beta2=config.adam_beta2, epsilon=config.adam_epsilon,
            )
        P_val, _ = forward(params, X_val, "infer")
        val_acc = float((P_val.argmax(axis=1) == y_val).mean())
        history.append(EpochRecord(epoch, loss_sum / n, correct / n, val_acc))
        log.debug("epoch %d loss %.4f train %.4f val %.4f", epoch, loss_sum / n, correct / n, val_acc)

    artifact = ModelArtifact(config, params, scaler, label_map, DEFAULT_THRESHOLD)
    report = TrainReport(history, config.seed, len(train_idx), len(val_idx), train_idx, val_idx)
    return artifact, report

"""Accept/reject network for LiDAR detections.

A small feed-forward net (ReLU hidden layers, sigmoid output) trained with
class-weighted binary cross-entropy and Adam. Everything is plain numpy with
hand-written gradients so training is reproducible bit for bit.
"""

from __future__ import annotations

import json
import logging
import math
import os
import warnings
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from .kitti_io import Detection
from .matching import FeatureLayout, TrainingSample, samples_to_arrays

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PROB_CLAMP = 1e-7


class NumericalError(RuntimeError):
    pass


class ModelFormatError(ValueError):
    pass


@dataclass
class MlpModel:
    layer_dims: list[int]
    weights: list[np.ndarray]  # each (out, in)
    biases: list[np.ndarray]
    feature_layout: FeatureLayout

    def __post_init__(self):
        dims = self.layer_dims
        if len(dims) < 2 or dims[-1] != 1:
            raise ValueError(f"layer dims must end in 1, got {dims}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("one weight matrix and bias vector per layer expected")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise ValueError(f"layer {i}: shapes {W.shape}/{b.shape} do not match dims {dims}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameters")
        if dims[0] != self.feature_layout.n_features:
            raise ValueError(f"input dim {dims[0]} does not match layout {self.feature_layout.name}")

    @property
    def n_inputs(self) -> int:
        return self.layer_dims[0]

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> MlpModel:
        return MlpModel(list(self.layer_dims), [W.copy() for W in self.weights],
                        [b.copy() for b in self.biases], self.feature_layout)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model: MlpModel, lr: float = 1e-4) -> AdamState:
        params = model.params()
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0, lr)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    lr: float = 1e-4
    pos_weight: float = 10.0
    neg_weight: float = 1.0
    hidden_width: int = 64
    hidden_layers: int = 1
    batch_size: int = 4
    full_batch: bool = False
    seed: int = 0
    shuffle_each_epoch: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not (self.pos_weight > 0 and self.neg_weight > 0):
            raise ValueError("class weights must be > 0")
        if self.batch_size < 1 or self.hidden_width < 1 or self.hidden_layers < 1:
            raise ValueError("batch_size, hidden_width and hidden_layers must be >= 1")


@dataclass(frozen=True)
class Prediction:
    probability: float
    accepted: bool


@dataclass
class EpochStats:
    epoch: int
    loss: float
    recall: float
    precision: float


@dataclass
class TrainingLog:
    epochs: list[EpochStats] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def init_model(layout: FeatureLayout, hidden_width: int = 64, seed: int = 0, hidden_layers: int = 1) -> MlpModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    if hidden_width < 1 or hidden_layers < 1:
        raise ValueError("hidden_width and hidden_layers must be >= 1")
    dims = [layout.n_features] + [hidden_width] * hidden_layers + [1]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(dims, weights, biases, layout)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _as_batch(model: MlpModel, x) -> np.ndarray:
    X = np.asarray(x, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.n_inputs:
        raise ValueError(f"expected feature vectors of length {model.n_inputs}, got shape {np.shape(x)}")
    return X


def _forward_cache(model: MlpModel, X: np.ndarray):
    acts = [X]
    pre = []
    a = X
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W.T + b
        pre.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        acts.append(a)
    return pre, acts


def forward(model: MlpModel, x):
    """Probability for one feature vector (float) or a batch (1-D array)."""
    X = _as_batch(model, x)
    pre, _ = _forward_cache(model, X)
    p = sigmoid(pre[-1][:, 0])
    return float(p[0]) if np.ndim(x) == 1 else p


def weighted_bce(p, y, pos_weight: float = 10.0, neg_weight: float = 1.0):
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    loss = -(pos_weight * y * np.log(p) + neg_weight * (1.0 - y) * np.log1p(-p))
    return float(loss) if loss.ndim == 0 else loss


def backward(model: MlpModel, X, y, pos_weight: float = 10.0, neg_weight: float = 1.0):
    """Mean weighted-BCE loss over the batch and its gradient per parameter.

    Gradients come back in :meth:`MlpModel.params` order.
    """
    X = _as_batch(model, X)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = X.shape[0]
    if n == 0 or y.shape[0] != n:
        raise ValueError("batch must be non-empty with one label per row")
    pre, acts = _forward_cache(model, X)
    p = sigmoid(pre[-1][:, 0])
    loss = float(np.mean(weighted_bce(p, y, pos_weight, neg_weight)))
    w = np.where(y > 0.5, pos_weight, neg_weight)
    # sigmoid + BCE: dL/dz = w * (p - y) at the output pre-activation
    delta = ((w * (p - y)) / n)[:, None]
    grads = []
    for i in range(len(model.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append(delta.T @ acts[i])
        if i > 0:
            delta = (delta @ model.weights[i]) * (pre[i - 1] > 0)
    grads.reverse()
    return loss, grads


def adam_step(model: MlpModel, state: AdamState, grads: Sequence[np.ndarray]) -> tuple[MlpModel, AdamState]:
    """One bias-corrected Adam update, applied in place and returned."""
    params = model.params()
    if len(grads) != len(params):
        raise ValueError("gradient list does not match model parameters")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return model, state


def _recall_precision(p: np.ndarray, y: np.ndarray, threshold: float = 0.5) -> tuple[float, float]:
    pred = p >= threshold
    pos = y > 0.5
    tp = int(np.sum(pred & pos))
    recall = tp / int(np.sum(pos)) if np.any(pos) else 1.0
    precision = tp / int(np.sum(pred)) if np.any(pred) else 1.0
    return recall, precision


def train(samples, cfg: TrainConfig = TrainConfig(), layout: FeatureLayout | None = None):
    """Fit a fresh model with mini-batch Adam.

    ``samples`` is a sequence of :class:`TrainingSample` or an ``(X, y)`` pair.
    Returns ``(model, TrainingLog)``; raises NumericalError on a NaN loss.
    """
    if isinstance(samples, tuple) and len(samples) == 2 and isinstance(samples[0], np.ndarray):
        X, y = (np.asarray(a, dtype=np.float64) for a in samples)
    else:
        X, y = samples_to_arrays(samples)
    if X.shape[0] == 0:
        raise ValueError("no training samples")
    if layout is None:
        layout = FeatureLayout(X.shape[1])
    tlog = TrainingLog()
    n_pos = int(np.sum(y > 0.5))
    if n_pos == 0 or n_pos == len(y):
        msg = f"training set has a single class ({n_pos} positives of {len(y)})"
        warnings.warn(msg)
        tlog.warnings.append(msg)

    model = init_model(layout, cfg.hidden_width, cfg.seed, cfg.hidden_layers)
    state = AdamState.for_model(model, cfg.lr)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    n = X.shape[0]
    batch = n if cfg.full_batch else cfg.batch_size
    order = np.arange(n)
    for epoch in range(1, cfg.epochs + 1):
        if cfg.shuffle_each_epoch:
            order = shuffle_rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss, grads = backward(model, X[idx], y[idx], cfg.pos_weight, cfg.neg_weight)
            if not math.isfinite(loss):
                raise NumericalError(
                    f"loss became {loss} in epoch {epoch}; lower the learning rate (currently {cfg.lr})")
            adam_step(model, state, grads)
        p = forward(model, X)
        epoch_loss = float(np.mean(weighted_bce(p, y, cfg.pos_weight, cfg.neg_weight)))
        if not math.isfinite(epoch_loss):
            raise NumericalError(f"loss became {epoch_loss} after epoch {epoch}; lower the learning rate")
        recall, precision = _recall_precision(p, y)
        tlog.epochs.append(EpochStats(epoch, epoch_loss, recall, precision))
        log.info("epoch %d loss %.6f recall %.4f precision %.4f", epoch, epoch_loss, recall, precision)
    return model, tlog


def predict(model: MlpModel, x, threshold: float = 0.5) -> Prediction:
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    p = forward(model, np.asarray(x, dtype=np.float64).reshape(-1))
    return Prediction(p, p >= threshold)


def filter_detections(model: MlpModel, dets: Sequence[Detection], features, threshold: float = 0.5,
                      rescore: bool = False) -> list[Detection]:
    """Keep the detections the verifier accepts, in input order.

    Boxes and scores pass through untouched unless ``rescore`` multiplies each
    kept score by its verifier probability.
    """
    if len(dets) != len(features):
        raise ValueError(f"{len(dets)} detections but {len(features)} feature vectors")
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    if not dets:
        return []
    p = forward(model, np.vstack(features))
    kept = []
    for det, prob in zip(dets, p):
        if prob >= threshold:
            kept.append(det.with_score(det.score * float(prob)) if rescore else det)
    return kept


def model_to_dict(model: MlpModel, cfg: TrainConfig | None = None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "feature_layout": model.feature_layout.name,
        "layer_dims": list(model.layer_dims),
        "weights": [W.tolist() for W in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "train_config": asdict(cfg) if cfg is not None else None,
        "seed": cfg.seed if cfg is not None else None,
    }


def save_model(model: MlpModel, path, cfg: TrainConfig | None = None, extra: dict | None = None) -> None:
    doc = model_to_dict(model, cfg)
    if extra:
        doc.update(extra)
    # json writes floats with repr(), which round-trips float64 exactly
    text = json.dumps(doc, indent=1, sort_keys=False)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")
    os.replace(tmp, path)


def model_from_dict(doc: dict) -> MlpModel:
    if not isinstance(doc, dict):
        raise ModelFormatError("model file must hold a JSON object")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ModelFormatError(f"unsupported schema_version {doc.get('schema_version')!r}")
    try:
        layout = FeatureLayout[doc["feature_layout"]]
        dims = [int(d) for d in doc["layer_dims"]]
        weights = [np.asarray(W, dtype=np.float64) for W in doc["weights"]]
        biases = [np.asarray(b, dtype=np.float64) for b in doc["biases"]]
        return MlpModel(dims, weights, biases, layout)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model: {exc}") from None


def load_model(path) -> MlpModel:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not a complete model file ({exc})") from None
    return model_from_dict(doc)


def load_model_doc(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)

"""Head-only training: the backbone is a frozen feature extractor, only the FC layer learns."""

from __future__ import annotations

import numpy as np

from ..tensor import DType, Tensor, real_values
from .graph import ModelGraph, Op, execute


class TrainingError(ValueError):
    pass


def _head_index(model: ModelGraph) -> int:
    for i, layer in enumerate(model.layers):
        if layer.op is Op.FULLY_CONNECTED:
            return i
    raise TrainingError("model has no fully connected head")


def extract_features(model: ModelGraph, images, batch_size: int = 64) -> np.ndarray:
    """Pooled backbone features (the FC input) for a batch of [0, 1] images."""
    idx = _head_index(model)
    backbone = ModelGraph(model.layers[:idx], model.input_shape, model.num_classes,
                          model.dtype, model.qparams)
    out = []
    for i in range(0, len(images), batch_size):
        t = execute(backbone, images[i:i + batch_size])
        out.append(real_values(t).reshape(len(t.data), -1))
    return np.concatenate(out)


def head_loss_grad(weight: np.ndarray, bias: np.ndarray, feats: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy of ``feats @ weight.T + bias`` and its gradients."""
    logits = feats @ weight.T + bias
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    n = len(labels)
    loss = -np.mean(np.log(p[np.arange(n), labels]))
    d = p.copy()
    d[np.arange(n), labels] -= 1.0
    d /= n
    return loss, d.T @ feats, d.sum(axis=0)


def train_head(model: ModelGraph, images, labels, lr: float = 2.0, epochs: int = 50,
               seed: int = 0, features: np.ndarray | None = None):
    """Full-batch gradient descent on the FC layer. Returns ``(model, train_accuracy)``.

    Descent runs on centred features divided by one global scale (small-init
    backbones emit features around 1e-15).  A single scalar keeps the folded
    weights on a common scale, which per-tensor int8 needs; per-feature
    standardization would not.
    ``features`` may be passed to skip the backbone pass.
    """
    if model.dtype is not DType.REAL32:
        raise TrainingError("train_head needs a real32 model")
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise TrainingError("empty training set")
    if lr < 0 or not np.isfinite(lr):
        raise TrainingError(f"learning rate must be non-negative, got {lr}")
    if features is None:
        features = extract_features(model, images)
    if labels.min() < 0 or labels.max() >= model.num_classes:
        raise TrainingError("label outside the model's classes")

    out = model.copy()
    head = out.layers[_head_index(out)]
    w = head.weight.data.astype(np.float64)
    b = head.bias.astype(np.float64)
    if lr == 0 or epochs == 0:
        return out, _accuracy(w, b, features, labels)

    mu = features.mean(axis=0)
    sigma = float(features.std()) or 1.0
    z = (features - mu) / sigma
    rng = np.random.default_rng([seed, 3])
    ws = rng.uniform(-0.01, 0.01, size=w.shape)
    bs = np.zeros_like(b)
    for _ in range(epochs):
        _, gw, gb = head_loss_grad(ws, bs, z, labels)
        ws -= lr * gw
        bs -= lr * gb
    w = ws / sigma
    b = bs - w @ mu
    head.weight = Tensor(w.astype(np.float32))
    head.bias = b.astype(np.float32)
    return out, _accuracy(w, b, features, labels)


def _accuracy(w, b, feats, labels) -> float:
    pred = np.argmax(feats @ w.T + b, axis=1)
    return float(np.mean(pred == labels))

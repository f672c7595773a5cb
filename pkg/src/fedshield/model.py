"""A small feed-forward softmax classifier on a flat float64 weight vector.

hidden_dim == 0 gives multinomial logistic regression; hidden_dim > 0 adds
one ReLU hidden layer. The flat layout records an (offset, length) span per
parameter block so the final affine map (the "last layer") can be sliced
out of any weight or gradient vector, which the defense relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset


class DimMismatchError(ValueError):
    """Input dimensions disagree with the model layout."""


@dataclass(frozen=True)
class ModelLayout:
    """Shape of the classifier and the span map into its flat weight vector."""

    input_dim: int
    hidden_dim: int
    num_classes: int

    def __post_init__(self):
        if self.input_dim < 1 or self.num_classes < 1 or self.hidden_dim < 0:
            raise ValueError(f"invalid layout {self}")

    @property
    def spans(self) -> dict[str, tuple[int, int]]:
        """Parameter block name -> (offset, length); blocks tile the vector."""
        d, h, c = self.input_dim, self.hidden_dim, self.num_classes
        if h == 0:
            return {"w_out": (0, d * c), "b_out": (d * c, c)}
        return {
            "w_hidden": (0, d * h),
            "b_hidden": (d * h, h),
            "w_out": (d * h + h, h * c),
            "b_out": (d * h + h + h * c, c),
        }

    @property
    def total_size(self) -> int:
        offset, length = list(self.spans.values())[-1]
        return offset + length

    @property
    def last_layer_span(self) -> tuple[int, int]:
        """Span covering the final affine map's weights and biases."""
        offset, _ = self.spans["w_out"]
        return offset, self.total_size - offset

    def block(self, values: np.ndarray, name: str) -> np.ndarray:
        offset, length = self.spans[name]
        return values[offset : offset + length]


@dataclass
class WeightVector:
    """Flat parameter vector tied to its layout."""

    values: np.ndarray
    layout: ModelLayout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.layout.total_size,):
            raise DimMismatchError(
                f"weight vector length {self.values.shape} != layout size {self.layout.total_size}"
            )

    def copy(self) -> "WeightVector":
        return WeightVector(self.values.copy(), self.layout)


@dataclass(frozen=True)
class TrainConfig:
    """Local SGD settings: epochs, mini-batch size, learning rate, shuffle seed."""

    epochs: int = 3
    batch_size: int = 32
    learning_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate < 0:
            raise ValueError(f"invalid training config {self}")


def last_layer_slice(vector: np.ndarray, layout: ModelLayout) -> np.ndarray:
    """Copy of the final affine map's portion of a flat vector."""
    offset, length = layout.last_layer_span
    return np.asarray(vector[offset : offset + length], dtype=np.float64).copy()


def init_weights(layout: ModelLayout, seed: int) -> WeightVector:
    """Glorot-uniform weights (limit sqrt(6 / (fan_in + fan_out)) per layer),
    zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    values = np.zeros(layout.total_size)
    d, h, c = layout.input_dim, layout.hidden_dim, layout.num_classes
    fans = {"w_out": (d if h == 0 else h, c)}
    if h > 0:
        fans["w_hidden"] = (d, h)
    for name in layout.spans:
        if name not in fans:
            continue  # biases stay zero
        fan_in, fan_out = fans[name]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        offset, length = layout.spans[name]
        values[offset : offset + length] = rng.uniform(-limit, limit, size=length)
    return WeightVector(values, layout)


def _unpack(w: WeightVector):
    lay = w.layout
    d, h, c = lay.input_dim, lay.hidden_dim, lay.num_classes
    if h == 0:
        return (
            lay.block(w.values, "w_out").reshape(d, c),
            lay.block(w.values, "b_out"),
            None,
            None,
        )
    return (
        lay.block(w.values, "w_out").reshape(h, c),
        lay.block(w.values, "b_out"),
        lay.block(w.values, "w_hidden").reshape(d, h),
        lay.block(w.values, "b_hidden"),
    )


def _forward(w: WeightVector, features: np.ndarray):
    """Returns (logits, hidden_pre, hidden_act); hidden parts are None for
    the logistic layout."""
    w_out, b_out, w_hidden, b_hidden = _unpack(w)
    if features.shape[1] != w.layout.input_dim:
        raise DimMismatchError(f"features dim {features.shape[1]} != input_dim {w.layout.input_dim}")
    if w_hidden is None:
        return features @ w_out + b_out, None, None
    pre = features @ w_hidden + b_hidden
    act = np.maximum(pre, 0.0)
    return act @ w_out + b_out, pre, act


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def loss_and_grad(
    w: WeightVector, batch_features: np.ndarray, batch_labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over the batch and its exact flat gradient."""
    x = np.asarray(batch_features, dtype=np.float64)
    y = np.asarray(batch_labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DimMismatchError("batch must be a non-empty 2-D matrix")
    if y.shape != (x.shape[0],):
        raise DimMismatchError("one label per batch row required")
    n = x.shape[0]
    logits, pre, act = _forward(w, x)

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(n), y].mean())

    delta = _softmax(logits)
    delta[np.arange(n), y] -= 1.0
    delta /= n

    lay = w.layout
    grad = np.zeros(lay.total_size)
    if lay.hidden_dim == 0:
        lay.block(grad, "w_out")[:] = (x.T @ delta).ravel()
        lay.block(grad, "b_out")[:] = delta.sum(axis=0)
        return loss, grad
    w_out = lay.block(w.values, "w_out").reshape(lay.hidden_dim, lay.num_classes)
    lay.block(grad, "w_out")[:] = (act.T @ delta).ravel()
    lay.block(grad, "b_out")[:] = delta.sum(axis=0)
    d_hidden = (delta @ w_out.T) * (pre > 0.0)
    lay.block(grad, "w_hidden")[:] = (x.T @ d_hidden).ravel()
    lay.block(grad, "b_hidden")[:] = d_hidden.sum(axis=0)
    return loss, grad


def local_train(w0: WeightVector, data: Dataset, cfg: TrainConfig) -> tuple[WeightVector, np.ndarray]:
    """E epochs of mini-batch SGD from w0, reshuffling each epoch.

    Returns the trained weights and the cumulative gradient, i.e. the sum of
    all applied batch gradients, which equals (w0 - w_final) / learning_rate
    whenever the rate is nonzero. The final batch of an epoch may be short.
    """
    if data.dim != w0.layout.input_dim or data.num_classes > w0.layout.num_classes:
        raise DimMismatchError("dataset shape incompatible with model layout")
    if cfg.learning_rate == 0.0:
        # zero-rate limit: no weight motion, and the accumulated update
        # (w0 - w_final) / rate is zero by the update rule
        return w0.copy(), np.zeros_like(w0.values)
    rng = np.random.default_rng(cfg.seed)
    weights = w0.values.copy()
    cumulative = np.zeros_like(weights)
    n = data.num_samples
    current = WeightVector(weights, w0.layout)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            _, grad = loss_and_grad(current, data.features[batch], data.labels[batch])
            weights -= cfg.learning_rate * grad
            cumulative += grad
    return current, cumulative


def predict(w: WeightVector, features: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties break toward the lowest class index."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise DimMismatchError("features must be 2-D")
    logits, _, _ = _forward(w, x)
    return np.argmax(logits, axis=1).astype(np.int64)

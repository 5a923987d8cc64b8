"""Dense softmax network with hand-written reverse-mode gradients.

The model is a stack of dense layers (the shared backbone) feeding one
linear head per class; class scores are the softmax of the head outputs.
No autodiff framework is involved: ``backward`` chains analytic
derivatives layer by layer, and the loss objects it accepts supply the
derivative of the loss with respect to the class probabilities.

Everything runs in float64.  Probabilities are clamped to
``[PROB_FLOOR, 1 - PROB_FLOOR]`` before any logarithm, and loss objects
zero their gradient where the clamp is active so that analytic and
finite-difference derivatives agree.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .core import FormatError, InputError, LabeledDataset, NumericError

PROB_FLOOR = 1e-12

_ACTIVATIONS = ("relu", "tanh", "identity")

FORMAT_VERSION = 1


@dataclass(frozen=True)
class BackboneSpec:
    """Widths of the dense stack, input first, feature output last."""

    layer_widths: tuple
    activation: str = "relu"

    def __post_init__(self) -> None:
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2:
            raise InputError("layer_widths needs at least input and output widths")
        if any(w <= 0 for w in widths):
            raise InputError(f"layer widths must be positive, got {widths}")
        if self.activation not in _ACTIVATIONS:
            raise InputError(
                f"unknown activation {self.activation!r}, choose from {_ACTIVATIONS}"
            )
        object.__setattr__(self, "layer_widths", widths)

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def feature_dim(self) -> int:
        return self.layer_widths[-1]


class SelectiveModel:
    """Backbone parameters plus K linear heads."""

    def __init__(
        self,
        spec: BackboneSpec,
        num_classes: int,
        weights: list,
        biases: list,
        head_w: np.ndarray,
        head_b: np.ndarray,
    ):
        if num_classes < 1:
            raise InputError("need at least one class head")
        widths = spec.layer_widths
        if len(weights) != len(widths) - 1 or len(biases) != len(widths) - 1:
            raise InputError("layer parameter count does not match spec")
        for i, (W, b) in enumerate(zip(weights, biases)):
            if W.shape != (widths[i + 1], widths[i]) or b.shape != (widths[i + 1],):
                raise InputError(
                    f"layer {i} expects W{(widths[i + 1], widths[i])}, "
                    f"got {W.shape} / {b.shape}"
                )
        if head_w.shape != (num_classes, spec.feature_dim):
            raise InputError(
                f"heads expect shape {(num_classes, spec.feature_dim)}, got {head_w.shape}"
            )
        if head_b.shape != (num_classes,):
            raise InputError(f"head bias shape {head_b.shape} is wrong")
        self.spec = spec
        self.num_classes = num_classes
        self.weights = [np.asarray(W, dtype=np.float64) for W in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.head_w = np.asarray(head_w, dtype=np.float64)
        self.head_b = np.asarray(head_b, dtype=np.float64)

    @property
    def input_dim(self) -> int:
        return self.spec.input_dim

    def copy(self) -> "SelectiveModel":
        return SelectiveModel(
            self.spec,
            self.num_classes,
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.head_w.copy(),
            self.head_b.copy(),
        )


def init_model(
    spec: BackboneSpec, num_classes: int, seed: int | np.random.Generator
) -> SelectiveModel:
    """Seeded uniform init with limit sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = (
        seed
        if isinstance(seed, np.random.Generator)
        else np.random.default_rng(seed)
    )
    widths = spec.layer_widths
    weights, biases = [], []
    for i in range(len(widths) - 1):
        fan_in, fan_out = widths[i], widths[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    limit = np.sqrt(6.0 / (spec.feature_dim + num_classes))
    head_w = rng.uniform(-limit, limit, size=(num_classes, spec.feature_dim))
    head_b = np.zeros(num_classes)
    return SelectiveModel(spec, num_classes, weights, biases, head_w, head_b)


def _activate(a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(a, 0.0)
    if kind == "tanh":
        return np.tanh(a)
    return a


def _activation_grad(h: np.ndarray, kind: str) -> np.ndarray:
    # derivative expressed through the post-activation value
    if kind == "relu":
        return (h > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - h * h
    return np.ones_like(h)


def _forward_pass(model: SelectiveModel, X: np.ndarray):
    """Returns (per-layer activations, logits, softmax probabilities)."""
    h = X
    acts = [h]
    for W, b in zip(model.weights, model.biases):
        h = _activate(h @ W.T + b, model.spec.activation)
        acts.append(h)
    logits = h @ model.head_w.T + model.head_b
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    return acts, logits, probs


def _check_batch(model: SelectiveModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.input_dim:
        raise InputError(
            f"model expects inputs of dim {model.input_dim}, got {X.shape[1]}"
        )
    return X


def forward_batch(model: SelectiveModel, X: np.ndarray) -> np.ndarray:
    """Class-probability matrix, one row per input point."""
    X = _check_batch(model, X)
    _, _, probs = _forward_pass(model, X)
    return probs


def forward(model: SelectiveModel, x: np.ndarray) -> np.ndarray:
    """Scores for a single point: positive, summing to one."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64)).ravel()
    return forward_batch(model, x[None, :])[0]


class LossSpec(Protocol):
    def value_and_grad(
        self, probs: np.ndarray, labels: np.ndarray
    ) -> tuple[float, np.ndarray]: ...


@dataclass
class GradientBundle:
    """Parameter gradients with the same shapes as the model's parameters."""

    weights: list
    biases: list
    head_w: np.ndarray
    head_b: np.ndarray

    @classmethod
    def zeros_like(cls, model: SelectiveModel) -> "GradientBundle":
        return cls(
            [np.zeros_like(W) for W in model.weights],
            [np.zeros_like(b) for b in model.biases],
            np.zeros_like(model.head_w),
            np.zeros_like(model.head_b),
        )


def backward(
    model: SelectiveModel, batch: LabeledDataset, loss_spec: LossSpec
) -> tuple[float, GradientBundle]:
    """Loss value and exact parameter gradients on one batch.

    The loss object sees the softmax outputs and returns d(loss)/d(probs);
    the softmax Jacobian, head, and backbone chains are applied here.
    """
    X = _check_batch(model, batch.features)
    acts, _, probs = _forward_pass(model, X)
    value, dprobs = loss_spec.value_and_grad(probs, batch.labels)
    if not np.isfinite(value):
        raise NumericError(f"loss evaluated to a non-finite value: {value}")

    # softmax vector-Jacobian product, row-wise
    inner = np.sum(dprobs * probs, axis=1, keepdims=True)
    dlogits = probs * (dprobs - inner)

    feat = acts[-1]
    g_head_w = dlogits.T @ feat
    g_head_b = dlogits.sum(axis=0)
    d_h = dlogits @ model.head_w

    g_ws: list = [None] * len(model.weights)
    g_bs: list = [None] * len(model.biases)
    kind = model.spec.activation
    for i in range(len(model.weights) - 1, -1, -1):
        da = d_h * _activation_grad(acts[i + 1], kind)
        g_ws[i] = da.T @ acts[i]
        g_bs[i] = da.sum(axis=0)
        d_h = da @ model.weights[i]
    return value, GradientBundle(g_ws, g_bs, g_head_w, g_head_b)


def sgd_step(model: SelectiveModel, grads: GradientBundle, lr: float) -> None:
    """In-place descent step on every parameter."""
    for W, g in zip(model.weights, grads.weights):
        W -= lr * g
    for b, g in zip(model.biases, grads.biases):
        b -= lr * g
    model.head_w -= lr * grads.head_w
    model.head_b -= lr * grads.head_b


class _CrossEntropy:
    """Mean negative log-probability of the true class."""

    def value_and_grad(self, probs, labels):
        n = probs.shape[0]
        idx = np.arange(n)
        p = np.clip(probs[idx, labels], PROB_FLOOR, 1.0 - PROB_FLOOR)
        value = float(np.mean(-np.log(p)))
        dprobs = np.zeros_like(probs)
        interior = (probs[idx, labels] > PROB_FLOOR) & (
            probs[idx, labels] < 1.0 - PROB_FLOOR
        )
        dprobs[idx, labels] = np.where(interior, -1.0 / (n * p), 0.0)
        return value, dprobs


CROSS_ENTROPY = _CrossEntropy()


def warm_start(
    data: LabeledDataset,
    spec: BackboneSpec,
    num_classes: int,
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 128,
) -> SelectiveModel:
    """Seeded init plus minibatch SGD on cross-entropy.

    ``epochs=0`` returns the untouched initialization; identical seeds give
    bit-identical models.
    """
    if epochs < 0:
        raise InputError("epochs must be nonnegative")
    if lr <= 0:
        raise InputError("learning rate must be positive")
    rng = np.random.default_rng(seed)
    model = init_model(spec, num_classes, rng)
    n = data.n
    for _ in range(epochs):
        perm = np.arange(n) if batch_size >= n else rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = data.subset(perm[start : start + batch_size])
            _, grads = backward(model, batch, CROSS_ENTROPY)
            sgd_step(model, grads, lr)
    return model


def serialize(model: SelectiveModel) -> bytes:
    """Versioned binary payload with full shape metadata."""
    buf = io.BytesIO()
    arrays = {
        "format_version": np.int64(FORMAT_VERSION),
        "layer_widths": np.array(model.spec.layer_widths, dtype=np.int64),
        "activation": np.array(model.spec.activation),
        "num_classes": np.int64(model.num_classes),
        "head_w": model.head_w,
        "head_b": model.head_b,
    }
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"W{i}"] = W
        arrays[f"b{i}"] = b
    np.savez(buf, **arrays)
    return buf.getvalue()


def deserialize(
    payload: bytes,
    expected_num_classes: int | None = None,
    expected_input_dim: int | None = None,
) -> SelectiveModel:
    """Rebuild a model, failing with :class:`FormatError` on any mismatch."""
    try:
        archive = np.load(io.BytesIO(payload))
        names = set(archive.files)
    except Exception as exc:
        raise FormatError(f"unreadable model payload: {exc}") from exc
    try:
        if "format_version" not in names:
            raise FormatError("payload missing format_version")
        version = int(archive["format_version"])
        if version != FORMAT_VERSION:
            raise FormatError(
                f"payload format version {version}, expected {FORMAT_VERSION}"
            )
        spec = BackboneSpec(
            tuple(int(w) for w in archive["layer_widths"]),
            str(archive["activation"]),
        )
        num_classes = int(archive["num_classes"])
        weights, biases = [], []
        for i in range(len(spec.layer_widths) - 1):
            if f"W{i}" not in names or f"b{i}" not in names:
                raise FormatError(f"payload missing parameters for layer {i}")
            weights.append(archive[f"W{i}"])
            biases.append(archive[f"b{i}"])
        model = SelectiveModel(
            spec, num_classes, weights, biases, archive["head_w"], archive["head_b"]
        )
    except FormatError:
        raise
    except (InputError, KeyError, ValueError) as exc:
        raise FormatError(f"malformed model payload: {exc}") from exc
    if expected_num_classes is not None and model.num_classes != expected_num_classes:
        raise FormatError(
            f"payload has {model.num_classes} class heads, expected {expected_num_classes}"
        )
    if expected_input_dim is not None and model.input_dim != expected_input_dim:
        raise FormatError(
            f"payload expects input dim {model.input_dim}, not {expected_input_dim}"
        )
    return model

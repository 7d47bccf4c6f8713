"""Toy MLP classifiers: forward pass, input gradients, JSON model files and training.

All parameters are float64. Inference uses a broadcast multiply-and-sum rather
than BLAS matmul: BLAS picks different kernels for different batch shapes, so
a row's logits would depend on what else was in the batch. The engine relies
on batch-invariant logits to match a one-input-at-a-time loop bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import FormatError, ModelError, TrainingError

ACTIVATIONS = ("relu", "none")
_KERNEL_BLOCK = 1 << 22  # max elements of the product temporary


@dataclass(frozen=True, eq=False)
class Layer:
    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = "none"


def _affine(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    out = np.empty((n, w.shape[0]))
    rows = max(1, _KERNEL_BLOCK // max(1, w.size))
    for s in range(0, n, rows):
        out[s : s + rows] = (x[s : s + rows, None, :] * w[None, :, :]).sum(axis=-1)
    return out + b


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    return logits - (m + np.log(np.exp(logits - m).sum(axis=-1, keepdims=True)))


def softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-row ``-log softmax(logits)[y]``, computed as ``logsumexp - logit_y`` (never negative)."""
    logits = np.atleast_2d(logits)
    y = np.atleast_1d(y)
    m = logits.max(axis=-1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=-1))
    return lse - logits[np.arange(len(y)), y]


class ToyClassifier:
    """Feed-forward classifier f: R^n_x -> R^n_c built from affine layers."""

    def __init__(self, layers: Sequence[Layer]):
        if not layers:
            raise ModelError("model needs at least one layer")
        fixed = []
        for n, layer in enumerate(layers):
            w = np.array(layer.w, dtype=np.float64, ndmin=2)
            b = np.array(layer.b, dtype=np.float64).reshape(-1)
            if layer.activation not in ACTIVATIONS:
                raise ModelError(f"layer {n}: unknown activation {layer.activation!r}")
            if b.shape != (w.shape[0],):
                raise ModelError(f"layer {n}: bias length {b.size} != {w.shape[0]} outputs")
            if fixed and fixed[-1].w.shape[0] != w.shape[1]:
                raise ModelError(f"layer {n}: expects {w.shape[1]} inputs, previous layer gives {fixed[-1].w.shape[0]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ModelError(f"layer {n}: non-finite parameters")
            w.flags.writeable = False
            b.flags.writeable = False
            fixed.append(Layer(w, b, layer.activation))
        if fixed[-1].activation != "none":
            raise ModelError("last layer must output raw logits (activation 'none')")
        self.layers: tuple[Layer, ...] = tuple(fixed)

    @property
    def input_dim(self) -> int:
        return self.layers[0].w.shape[1]

    @property
    def n_classes(self) -> int:
        return self.layers[-1].w.shape[0]

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ModelError(f"expected inputs of length {self.input_dim}, got shape {x.shape}")
        return x

    def logits(self, x: np.ndarray) -> np.ndarray:
        """Batch forward pass, (n, n_x) -> (n, n_c)."""
        h = self._check(x)
        for layer in self.layers:
            h = _affine(h, layer.w, layer.b)
            if layer.activation == "relu":
                h = np.maximum(h, 0.0)
        return h

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ModelError(f"predict takes one input vector, got shape {x.shape}")
        return self.logits(x[None, :])[0]

    def predict_class(self, x: np.ndarray) -> int:
        # np.argmax returns the first maximum, i.e. ties go to the lowest index
        return int(np.argmax(self.predict(x)))

    def _forward_cache(self, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        pre = []
        h = x
        for layer in self.layers:
            z = _affine(h, layer.w, layer.b)
            pre.append(z)
            h = np.maximum(z, 0.0) if layer.activation == "relu" else z
        return pre, h

    def _backward_input(self, pre: list[np.ndarray], dout: np.ndarray) -> np.ndarray:
        g = dout
        for layer, z in zip(reversed(self.layers), reversed(pre)):
            if layer.activation == "relu":
                g = g * (z > 0)  # derivative at 0 taken as 0
            g = g @ layer.w
        return g

    def loss_and_input_gradient_batch(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = self._check(x)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        if y.shape[0] != x.shape[0]:
            raise ModelError("one label per input required")
        if np.any((y < 0) | (y >= self.n_classes)):
            raise ModelError(f"labels must lie in [0, {self.n_classes})")
        pre, logits = self._forward_cache(x)
        loss = cross_entropy(logits, y)
        d = softmax(logits)
        d[np.arange(len(y)), y] -= 1.0
        return loss, self._backward_input(pre, d)

    def loss_and_input_gradient(self, x: np.ndarray, y: int) -> tuple[float, np.ndarray]:
        loss, grad = self.loss_and_input_gradient_batch(np.asarray(x, dtype=np.float64)[None, :], [y])
        return float(loss[0]), grad[0]

    def logit_diff_gradient(self, x: np.ndarray, a: int, b: int) -> np.ndarray:
        """Gradient of ``logit_a - logit_b`` with respect to the input."""
        x = self._check(np.asarray(x, dtype=np.float64)[None, :])
        for c in (a, b):
            if not 0 <= c < self.n_classes:
                raise ModelError(f"class {c} out of range")
        pre, _ = self._forward_cache(x)
        d = np.zeros((1, self.n_classes))
        d[0, a] += 1.0
        d[0, b] -= 1.0
        return self._backward_input(pre, d)[0]

    def to_json(self) -> dict[str, Any]:
        return {
            "type": "mlp",
            "input_dim": self.input_dim,
            "layers": [
                {"w": layer.w.tolist(), "b": layer.b.tolist(), "activation": layer.activation}
                for layer in self.layers
            ],
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "ToyClassifier":
        try:
            if obj.get("type") != "mlp":
                raise FormatError(f"unsupported model type {obj.get('type')!r}")
            layers = [Layer(np.array(l["w"], dtype=np.float64), np.array(l["b"], dtype=np.float64), l["activation"]) for l in obj["layers"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed model JSON: {exc}") from exc
        model = cls(layers)
        if int(obj.get("input_dim", model.input_dim)) != model.input_dim:
            raise FormatError("input_dim does not match first layer width")
        return model


def linear_model(w: np.ndarray, b: np.ndarray) -> ToyClassifier:
    return ToyClassifier([Layer(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))])


def affine_binary(w: np.ndarray, b: float) -> ToyClassifier:
    """Two-class model whose logit gap ``logit_0 - logit_1`` equals ``w.x + b``."""
    w = np.asarray(w, dtype=np.float64)
    return linear_model(np.stack([w, np.zeros_like(w)]), np.array([b, 0.0]))


def save_model(model: ToyClassifier, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_json()) + "\n")


def load_model(path: str | Path) -> ToyClassifier:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    return ToyClassifier.from_json(obj)


def predict(model, x: np.ndarray) -> np.ndarray:
    return model.predict(x)


def predict_class(model, x: np.ndarray) -> int:
    return model.predict_class(x)


def loss_and_input_gradient(model, x: np.ndarray, y: int) -> tuple[float, np.ndarray]:
    return model.loss_and_input_gradient(x, y)


def logit_diff_gradient(model, x: np.ndarray, a: int, b: int) -> np.ndarray:
    return model.logit_diff_gradient(x, a, b)


# --- training -------------------------------------------------------------


@dataclass(frozen=True)
class Augmentation:
    kind: str = "none"  # none | gaussian | fgsm
    magnitude: float = 0.0

    @classmethod
    def parse(cls, text: str) -> "Augmentation":
        """``none``, ``gaussian:0.1`` or ``fgsm:0.03``."""
        kind, _, mag = text.partition(":")
        if kind == "none":
            return cls()
        if kind not in ("gaussian", "fgsm") or not mag:
            raise ValueError(f"bad augmentation {text!r}")
        aug = cls(kind, float(mag))
        if aug.magnitude < 0:
            raise ValueError("augmentation magnitude must be >= 0")
        return aug


@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple[int, ...] = (32,)
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.1
    augmentation: Augmentation = Augmentation()


def init_model(input_dim: int, hidden: Sequence[int], n_classes: int, rng: np.random.Generator) -> ToyClassifier:
    sizes = [input_dim, *hidden, n_classes]
    layers = []
    for n, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = np.sqrt(6.0 / fan_in)  # He-uniform
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        act = "none" if n == len(sizes) - 2 else "relu"
        layers.append(Layer(w, np.zeros(fan_out), act))
    return ToyClassifier(layers)


def _fgsm_batch(model: ToyClassifier, x: np.ndarray, y: np.ndarray, eps: float) -> np.ndarray:
    _, g = model.loss_and_input_gradient_batch(x, y)
    return np.clip(x + eps * np.sign(g), 0.0, 1.0)


def train_toy(dataset, config: TrainConfig, seed: int, n_classes: int | None = None) -> ToyClassifier:
    """Mini-batch SGD on softmax cross-entropy.

    Shuffling and augmentation noise use separate generators so that
    ``gaussian:0`` reproduces the unaugmented run exactly.
    """
    x_all = np.asarray(dataset.images, dtype=np.float64)
    y_all = np.asarray(dataset.labels, dtype=np.int64)
    if len(x_all) == 0:
        raise ValueError("cannot train on an empty dataset")
    n_classes = n_classes or int(y_all.max()) + 1
    init_rng = np.random.default_rng([seed, 0])
    order_rng = np.random.default_rng([seed, 1])
    noise_rng = np.random.default_rng([seed, 2])
    model = init_model(x_all.shape[1], config.hidden, n_classes, init_rng)
    ws = [l.w.copy() for l in model.layers]
    bs = [l.b.copy() for l in model.layers]
    acts = [l.activation for l in model.layers]
    aug = config.augmentation

    # overflow is caught below as a non-finite loss
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            order = order_rng.permutation(len(x_all))
            for start in range(0, len(order), config.batch_size):
                idx = order[start : start + config.batch_size]
                x, y = x_all[idx], y_all[idx]
                if aug.kind == "gaussian":
                    x = np.clip(x + aug.magnitude * noise_rng.standard_normal(x.shape), 0.0, 1.0)
                elif aug.kind == "fgsm":
                    current = ToyClassifier([Layer(w, b, a) for w, b, a in zip(ws, bs, acts)])
                    x = _fgsm_batch(current, x, y, aug.magnitude)

                hs, zs = [x], []
                for w, b, a in zip(ws, bs, acts):
                    z = hs[-1] @ w.T + b
                    zs.append(z)
                    hs.append(np.maximum(z, 0.0) if a == "relu" else z)
                loss = cross_entropy(hs[-1], y).mean()
                if not np.isfinite(loss):
                    raise TrainingError(f"training diverged at epoch {epoch} (loss={loss})")
                d = softmax(hs[-1])
                d[np.arange(len(y)), y] -= 1.0
                d /= len(y)
                for n in reversed(range(len(ws))):
                    if acts[n] == "relu":
                        d = d * (zs[n] > 0)
                    gw = d.T @ hs[n]
                    gb = d.sum(axis=0)
                    d = d @ ws[n]
                    ws[n] -= config.lr * gw
                    bs[n] -= config.lr * gb
    final = [Layer(w, b, a) for w, b, a in zip(ws, bs, acts)]
    for layer in final:
        if not (np.all(np.isfinite(layer.w)) and np.all(np.isfinite(layer.b))):
            raise TrainingError("training produced non-finite parameters")
    return ToyClassifier(final)


def accuracy(model, images: np.ndarray, labels: np.ndarray) -> float:
    pred = np.argmax(model.logits(np.asarray(images, dtype=np.float64)), axis=1)
    return float(np.mean(pred == np.asarray(labels)))

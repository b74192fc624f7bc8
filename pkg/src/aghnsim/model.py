"""A small dense ReLU classifier with a hand-written backward pass.

Each aggregation layer ``r`` owns a weight matrix ``W_r`` (fan_in x fan_out)
and a bias ``b_r``; both live in one flat vector laid out as
``[W_r.ravel(), b_r]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import StructuralError
from .params import LayeredParams


@dataclass(frozen=True)
class DenseNetSpec:
    input_dim: int = 16
    hidden_dims: tuple = (32, 32, 32)
    num_classes: int = 10
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise StructuralError("layer widths must be positive")
        if self.num_classes < 2:
            raise StructuralError("num_classes must be at least 2")
        if self.activation != "relu":
            raise StructuralError(f"unsupported activation {self.activation!r}")

    @property
    def dims(self) -> list:
        return [self.input_dim, *self.hidden_dims, self.num_classes]

    @property
    def num_layers(self) -> int:
        return len(self.hidden_dims) + 1

    @property
    def layer_names(self) -> tuple:
        return tuple(f"layer{r}" for r in range(self.num_layers))


@dataclass(frozen=True)
class Batch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise StructuralError(f"bad batch shapes {x.shape} / {y.shape}")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(self.features[idx], self.labels[idx])


class DenseNet:
    """Forward, loss and gradient for parameters laid out per ``spec``."""

    def __init__(self, spec: DenseNetSpec):
        self.spec = spec
        dims = spec.dims
        self._shapes = [(dims[r], dims[r + 1]) for r in range(spec.num_layers)]

    def init_params(self, seed: int) -> LayeredParams:
        """Glorot-uniform weights, zero biases, keyed by ``seed``."""
        gen = rng.stream(seed, rng.INIT)
        layers = []
        for fan_in, fan_out in self._shapes:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = gen.uniform(-limit, limit, size=fan_in * fan_out)
            layers.append(np.concatenate([w, np.zeros(fan_out)]))
        return LayeredParams(tuple(layers), self.spec.layer_names)

    def _unpack(self, params: LayeredParams):
        if len(params) != len(self._shapes):
            raise StructuralError(
                f"expected {len(self._shapes)} layers, got {len(params)}"
            )
        out = []
        for flat, (fi, fo) in zip(params.layers, self._shapes):
            if flat.size != fi * fo + fo:
                raise StructuralError(
                    f"layer of size {flat.size} does not fit {fi}x{fo} + bias"
                )
            out.append((flat[: fi * fo].reshape(fi, fo), flat[fi * fo:]))
        return out

    def _forward(self, wb, x):
        acts = [x]
        pre = []
        h = x
        last = len(wb) - 1
        for r, (w, b) in enumerate(wb):
            z = h @ w + b
            pre.append(z)
            h = np.maximum(z, 0.0) if r < last else z
            acts.append(h)
        return pre, acts

    @staticmethod
    def _log_softmax(logits):
        shifted = logits - logits.max(axis=1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def logits(self, params: LayeredParams, features) -> np.ndarray:
        _, acts = self._forward(self._unpack(params), np.asarray(features, dtype=np.float64))
        return acts[-1]

    def softmax(self, params: LayeredParams, features) -> np.ndarray:
        return np.exp(self._log_softmax(self.logits(params, features)))

    def forward_loss(self, params: LayeredParams, batch: Batch):
        """Mean cross-entropy and accuracy of ``params`` on ``batch``."""
        self._check_batch(batch)
        logp = self._log_softmax(self.logits(params, batch.features))
        n = len(batch)
        loss = -float(np.add.reduce(logp[np.arange(n), batch.labels])) / n
        # np.argmax returns the first maximal index
        acc = float(np.count_nonzero(np.argmax(logp, axis=1) == batch.labels)) / n
        return max(loss, 0.0), acc

    def loss_and_grad(self, params: LayeredParams, batch: Batch):
        self._check_batch(batch)
        wb = self._unpack(params)
        pre, acts = self._forward(wb, batch.features)
        logp = self._log_softmax(acts[-1])
        n = len(batch)
        rows = np.arange(n)
        loss = -float(np.add.reduce(logp[rows, batch.labels])) / n

        delta = np.exp(logp)
        delta[rows, batch.labels] -= 1.0
        delta /= n
        grads = [None] * len(wb)
        for r in range(len(wb) - 1, -1, -1):
            w, _ = wb[r]
            gw = acts[r].T @ delta
            gb = delta.sum(axis=0)
            grads[r] = np.concatenate([gw.ravel(), gb])
            if r > 0:
                delta = (delta @ w.T) * (pre[r - 1] > 0.0)
        return loss, LayeredParams._trusted([_frozen(g) for g in grads], params.names)

    def backward(self, params: LayeredParams, batch: Batch) -> LayeredParams:
        """Exact gradient of the mean cross-entropy with respect to ``params``."""
        return self.loss_and_grad(params, batch)[1]

    def _check_batch(self, batch: Batch):
        if len(batch) < 1:
            raise StructuralError("empty batch")
        if batch.features.shape[1] != self.spec.input_dim:
            raise StructuralError(
                f"features have {batch.features.shape[1]} columns, model expects {self.spec.input_dim}"
            )
        if batch.labels.min() < 0 or batch.labels.max() >= self.spec.num_classes:
            raise StructuralError("label outside [0, num_classes)")


def _frozen(a):
    a.setflags(write=False)
    return a

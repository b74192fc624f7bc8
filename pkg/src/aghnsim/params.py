"""Layer-structured parameter containers and the vector algebra on top of them.

A layer tensor is a flat, read-only ``float64`` numpy vector.  A network layer
that owns several arrays (a weight matrix and a bias) is stored as one flat
vector; the model knows how to view it.  All reductions go through
``numpy.add.reduce`` on contiguous vectors, which uses a fixed pairwise
summation tree, so results are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import StructuralError

_NORM_FLOOR = 1e-12


def as_layer(values) -> np.ndarray:
    """Copy ``values`` into a read-only flat float64 layer tensor."""
    arr = np.array(values, dtype=np.float64).ravel()
    if not np.all(np.isfinite(arr)):
        raise StructuralError("layer tensor contains non-finite values")
    arr.setflags(write=False)
    return arr


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise StructuralError(f"shape mismatch: {a.shape} vs {b.shape}")


def dot(a: np.ndarray, b: np.ndarray) -> float:
    _check_pair(a, b)
    return float(np.add.reduce(np.multiply(a, b).ravel()))


def norm(a: np.ndarray) -> float:
    return float(np.sqrt(dot(a, a)))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; 0 when either vector has (near) zero norm."""
    _check_pair(a, b)
    na, nb = norm(a), norm(b)
    if na < _NORM_FLOOR or nb < _NORM_FLOOR:
        return 0.0
    c = dot(a, b) / (na * nb)
    return min(1.0, max(-1.0, c))


def combine_layers(weights: Sequence[float], tensors: Sequence[np.ndarray]) -> np.ndarray:
    """Weighted sum of layer tensors, accumulated in ascending index order."""
    if len(weights) == 0 or len(weights) != len(tensors):
        raise StructuralError(
            f"need matching non-empty inputs, got {len(weights)} weights and {len(tensors)} tensors"
        )
    out = np.zeros_like(tensors[0], dtype=np.float64)
    for w, t in zip(weights, tensors):
        _check_pair(out, t)
        out += float(w) * t
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class LayeredParams:
    """Ordered per-layer parameter vectors of one model."""

    layers: tuple
    names: tuple

    def __post_init__(self):
        layers = tuple(as_layer(l) for l in self.layers)
        names = tuple(str(n) for n in self.names)
        if not layers:
            raise StructuralError("LayeredParams needs at least one layer")
        if len(names) != len(layers):
            raise StructuralError(f"{len(layers)} layers but {len(names)} names")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "names", names)

    @classmethod
    def _trusted(cls, layers, names):
        # skips validation and copying; callers guarantee read-only finite arrays
        obj = object.__new__(cls)
        object.__setattr__(obj, "layers", tuple(layers))
        object.__setattr__(obj, "names", tuple(names))
        return obj

    def __len__(self):
        return len(self.layers)

    @property
    def num_scalars(self) -> int:
        return sum(l.size for l in self.layers)

    def same_structure(self, other: "LayeredParams") -> bool:
        return self.names == other.names and all(
            a.shape == b.shape for a, b in zip(self.layers, other.layers)
        )

    def check_structure(self, other: "LayeredParams") -> None:
        if not self.same_structure(other):
            raise StructuralError("parameter structures differ")

    def _binary(self, other, op):
        self.check_structure(other)
        out = []
        for a, b in zip(self.layers, other.layers):
            c = op(a, b)
            c.setflags(write=False)
            out.append(c)
        return LayeredParams._trusted(out, self.names)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def scale(self, factor: float) -> "LayeredParams":
        out = []
        for a in self.layers:
            c = a * float(factor)
            c.setflags(write=False)
            out.append(c)
        return LayeredParams._trusted(out, self.names)

    def zeros_like(self) -> "LayeredParams":
        out = []
        for a in self.layers:
            c = np.zeros_like(a)
            c.setflags(write=False)
            out.append(c)
        return LayeredParams._trusted(out, self.names)

    def flat(self) -> np.ndarray:
        return np.concatenate(self.layers)

    def equals(self, other: "LayeredParams") -> bool:
        """Bitwise equality of structure and values."""
        return self.same_structure(other) and all(
            np.array_equal(a, b) for a, b in zip(self.layers, other.layers)
        )

    def max_abs_diff(self, other: "LayeredParams") -> float:
        self.check_structure(other)
        return max(float(np.max(np.abs(a - b))) if a.size else 0.0
                   for a, b in zip(self.layers, other.layers))

    def to_lists(self) -> dict:
        return {"names": list(self.names), "layers": [l.tolist() for l in self.layers]}

    @classmethod
    def from_lists(cls, data: dict) -> "LayeredParams":
        return cls(tuple(data["layers"]), tuple(data["names"]))


def axpy_combine(weights: Sequence[float], params: Sequence[LayeredParams]) -> LayeredParams:
    """Per-layer ``sum_j weights[j] * params[j]`` in ascending ``j`` order."""
    if len(params) == 0 or len(weights) != len(params):
        raise StructuralError(
            f"need matching non-empty inputs, got {len(weights)} weights and {len(params)} params"
        )
    first = params[0]
    for p in params[1:]:
        first.check_structure(p)
    layers = [
        combine_layers(weights, [p.layers[r] for p in params]) for r in range(len(first))
    ]
    return LayeredParams._trusted(layers, first.names)

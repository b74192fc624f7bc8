"""Server-side attentive graph hypernetwork, one per client.

For a central client ``i`` and a layer ``r`` the collaboration graph is a star
over all ``N`` clients.  Edge weights come from the cosine similarity of the
clients' latest parameter updates, sharpened by a per-layer temperature ``q``
and combined with a per-layer self weight ``p``::

    s_j     = softmax_{j != i}(q * cos(a_i, a_j))
    alpha_i = p / (1 + p)
    alpha_j = s_j / (1 + p)              (j != i)
    theta_bar_i = sum_j alpha_j * h_j

where ``h_j`` are the clients' trained parameters at that layer.  ``p`` and
``q`` are trained by gradient descent on ``<d theta_bar / d(p, q), delta>``
with the central client's next local update ``delta`` as the descent signal.
Layers never interact.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, StructuralError
from .params import LayeredParams, combine_layers, cosine, dot


@dataclass(frozen=True)
class HypernetState:
    p: tuple
    q: tuple
    eta_hn: float = 0.005
    p_trainable: bool = True
    q_trainable: bool = True
    share_across_layers: bool = False

    def __post_init__(self):
        p = tuple(float(v) for v in self.p)
        q = tuple(float(v) for v in self.q)
        if len(p) != len(q) or not p:
            raise ConfigurationError("p and q must be non-empty and of equal length")
        if any(v < 0 for v in p):
            raise ConfigurationError("p must be non-negative", "aghn.p_init")
        if self.eta_hn <= 0:
            raise ConfigurationError("eta_hn must be > 0", "aghn.eta_hn")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @classmethod
    def initial(cls, num_layers: int, p_init: float, q_init: float, **flags) -> "HypernetState":
        return cls((p_init,) * num_layers, (q_init,) * num_layers, **flags)

    @property
    def num_layers(self) -> int:
        return len(self.p)


@dataclass(frozen=True)
class CollaborationGraph:
    """Star graph of one central client at one layer.

    ``softmax_weights`` and ``cosines`` are length ``N``; the central client's
    own entry is unused and stored as 0 in ``softmax_weights``.
    """

    central_client: int
    layer: int
    cosines: np.ndarray
    softmax_weights: np.ndarray
    alpha: np.ndarray
    p_used: float
    q_used: float


@dataclass(frozen=True)
class AghnOutput:
    personalized_initial: LayeredParams
    graphs: tuple
    delta_p: Optional[tuple] = None
    delta_q: Optional[tuple] = None


def attentive_weights(cosines: Sequence[float], self_index: int, p: float, q: float):
    """Tunable attentive weights of one star graph.

    Returns ``(s, alpha)``: the softmax over the other clients (``s[self_index]``
    is 0) and the normalized edge weights including the self loop.
    """
    c = np.asarray(cosines, dtype=np.float64)
    n = c.shape[0]
    if n < 2:
        raise ConfigurationError("a collaboration graph needs at least two clients")
    if not 0 <= self_index < n:
        raise StructuralError(f"self_index {self_index} outside [0, {n})")
    if p < 0:
        raise ConfigurationError("p must be non-negative")
    others = np.ones(n, dtype=bool)
    others[self_index] = False

    z = q * np.where(others, c, 0.0)
    z = z - z[others].max()
    e = np.where(others, np.exp(np.where(others, z, 0.0)), 0.0)
    s = e / np.add.reduce(e)
    s[self_index] = 0.0

    alpha = s / (1.0 + p)
    alpha[self_index] = p / (1.0 + p)
    return s, alpha


def aggregate_layer(alpha: Sequence[float], h: Sequence[np.ndarray]) -> np.ndarray:
    if len(alpha) != len(h):
        raise StructuralError(f"{len(alpha)} weights for {len(h)} tensors")
    return combine_layers(alpha, h)


def pq_gradients(h: Sequence[np.ndarray], cosines, softmax_weights, p: float, q: float,
                 delta_theta_layer: np.ndarray, self_index: int):
    """Gradients of ``<theta_bar(p, q), delta>`` with respect to ``p`` and ``q``.

    ``d theta_bar / dp = (h_i - sum_j s_j h_j) / (1 + p)^2`` and
    ``d theta_bar / dq = sum_j s_j (c_j - c_mean) h_j / (1 + p)`` where
    ``c_mean = sum_j s_j c_j``; sums run over ``j != i``.
    """
    n = len(h)
    if len(cosines) != n or len(softmax_weights) != n:
        raise StructuralError("h, cosines and softmax weights must have one entry per client")
    proj = np.array([dot(hj, delta_theta_layer) for hj in h])
    s = np.asarray(softmax_weights, dtype=np.float64).copy()
    c = np.asarray(cosines, dtype=np.float64).copy()
    s[self_index] = 0.0
    c[self_index] = 0.0
    c_mean = float(np.add.reduce(s * c))
    dp = (proj[self_index] - float(np.add.reduce(s * proj))) / (1.0 + p) ** 2
    dq = float(np.add.reduce(s * (c - c_mean) * proj)) / (1.0 + p)
    return float(dp), float(dq)


def apply_pq_update(state: HypernetState, dp: Sequence[float], dq: Sequence[float]) -> HypernetState:
    """One gradient step on ``p`` (clamped at 0) and ``q``."""
    r = state.num_layers
    if len(dp) != r or len(dq) != r:
        raise StructuralError(f"expected {r} gradients per parameter")
    dp = [float(v) for v in dp]
    dq = [float(v) for v in dq]
    if state.share_across_layers:
        dp = [sum(dp) / r] * r
        dq = [sum(dq) / r] * r
    p, q = state.p, state.q
    if state.p_trainable:
        p = tuple(max(0.0, pr - state.eta_hn * g) for pr, g in zip(p, dp))
    if state.q_trainable:
        q = tuple(qr - state.eta_hn * g for qr, g in zip(q, dq))
    return replace(state, p=p, q=q)


def cosine_matrices(all_delta: Sequence[LayeredParams]) -> list:
    """Per-layer symmetric N x N cosine matrices of the clients' updates."""
    n = len(all_delta)
    first = all_delta[0]
    for d in all_delta[1:]:
        first.check_structure(d)
    mats = []
    for r in range(len(first)):
        m = np.ones((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                m[i, j] = m[j, i] = cosine(all_delta[i].layers[r], all_delta[j].layers[r])
        mats.append(m)
    return mats


def run_aghn(all_theta: Sequence[LayeredParams], all_delta: Sequence[LayeredParams],
             i: int, state: HypernetState, cosines: Optional[list] = None) -> AghnOutput:
    """Build client ``i``'s layer-wise collaboration graphs and aggregate.

    ``cosines`` may carry precomputed ``cosine_matrices(all_delta)`` so that a
    round computes them once for all central clients.
    """
    n = len(all_theta)
    if n < 2:
        raise ConfigurationError("a collaboration graph needs at least two clients")
    if len(all_delta) != n:
        raise StructuralError("one update per client required")
    first = all_theta[0]
    for t in list(all_theta[1:]) + list(all_delta):
        first.check_structure(t)
    if len(first) != state.num_layers:
        raise StructuralError(f"model has {len(first)} layers, hypernet state {state.num_layers}")
    if cosines is None:
        cosines = cosine_matrices(all_delta)

    layers, graphs = [], []
    for r in range(len(first)):
        c = cosines[r][i].copy()
        c.setflags(write=False)
        s, alpha = attentive_weights(c, i, state.p[r], state.q[r])
        s.setflags(write=False)
        alpha.setflags(write=False)
        layers.append(aggregate_layer(alpha, [t.layers[r] for t in all_theta]))
        graphs.append(CollaborationGraph(i, r, c, s, alpha, state.p[r], state.q[r]))
    return AghnOutput(LayeredParams._trusted(layers, first.names), tuple(graphs))


def hypernet_gradients(output: AghnOutput, all_theta: Sequence[LayeredParams],
                       delta_theta: LayeredParams):
    """Per-layer ``(dp, dq)`` for the graphs in ``output``."""
    dp, dq = [], []
    for g in output.graphs:
        r = g.layer
        a, b = pq_gradients([t.layers[r] for t in all_theta], g.cosines, g.softmax_weights,
                            g.p_used, g.q_used, delta_theta.layers[r], g.central_client)
        dp.append(a)
        dq.append(b)
    return tuple(dp), tuple(dq)

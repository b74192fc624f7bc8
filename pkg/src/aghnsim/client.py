"""Local mini-batch SGD starting from the model a client receives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import ConfigurationError, NumericalDivergenceError
from .model import Batch, DenseNet
from .params import LayeredParams


@dataclass(frozen=True)
class LocalTrainConfig:
    epochs: int = 5
    batch_size: int = 64
    learning_rate: float = 0.01
    shuffle_seed: int = 0

    def validate(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0", "local.epochs")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1", "local.batch_size")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0", "local.learning_rate")


@dataclass(frozen=True)
class ClientUpdateResult:
    theta: LayeredParams
    delta_theta: LayeredParams
    train_loss_curve: tuple
    sample_count: int


def sgd(model: DenseNet, params: LayeredParams, shard: Batch, epochs: int,
        batch_size: int, lr: float, gen: np.random.Generator, round_index=None):
    """Run ``epochs`` passes of shuffled mini-batch SGD.

    Returns the final parameters and the mean training loss of every epoch.
    The last, possibly partial, batch of each epoch is used.
    """
    layers = [np.array(l) for l in params.layers]
    n = len(shard)
    curve = []
    for epoch in range(epochs):
        order = gen.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, batch_size)):
            idx = order[start:start + batch_size]
            current = LayeredParams._trusted(layers, params.names)
            # overflow surfaces as a non-finite loss, reported below
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grad = model.loss_and_grad(current, shard.subset(idx))
            if not math.isfinite(loss):
                raise NumericalDivergenceError(
                    f"non-finite training loss at round {round_index}, epoch {epoch}, batch {b}",
                    round_index=round_index, epoch=epoch, batch=b,
                )
            total += loss * len(idx)
            layers = [w - lr * g for w, g in zip(layers, grad.layers)]
        curve.append(total / n)
    for w in layers:
        if not np.all(np.isfinite(w)):
            raise NumericalDivergenceError(
                f"non-finite parameters after local training at round {round_index}",
                round_index=round_index,
            )
        w.setflags(write=False)
    return LayeredParams._trusted(layers, params.names), curve


def client_update(model: DenseNet, initial: LayeredParams, shard: Batch,
                  cfg: LocalTrainConfig, round_index=None) -> ClientUpdateResult:
    """Train locally from ``initial`` and report the parameter delta.

    ``theta`` is rebuilt as ``initial + delta_theta`` so that a server holding
    only ``initial`` and the transmitted delta reconstructs it bit for bit.
    """
    cfg.validate()
    if len(shard) < 1:
        raise ConfigurationError("empty training shard")
    gen = rng.stream(cfg.shuffle_seed, rng.SHUFFLE)
    trained, curve = sgd(model, initial, shard, cfg.epochs, cfg.batch_size,
                         cfg.learning_rate, gen, round_index)
    delta = trained - initial
    return ClientUpdateResult(
        theta=initial + delta,
        delta_theta=delta,
        train_loss_curve=tuple(curve),
        sample_count=len(shard),
    )

"""Round-synchronous server loop with pluggable aggregation strategies.

Each round ``t = 1..T``:

1. every client gets a personalized initial model built from the previous
   round's trained models (``fedaghn``: attentive graph hypernetwork;
   ``fedavg``/``fedavg_ft``: sample-weighted mean; ``local``: own model);
2. every client trains locally and uploads only its parameter delta; the
   server rebuilds the trained model as ``received + delta``;
3. each client's deliverable model is evaluated on its train/val/test splits
   and offered to the best-on-validation tracker.  The deliverable is the
   trained personalized model for ``fedaghn`` and ``local`` and the freshly
   aggregated global model for ``fedavg`` and ``fedavg_ft``;
4. ``fedaghn`` updates each client's ``p``/``q`` with the fresh delta.

``fedavg_ft`` fine-tunes the final global model locally for ``ft_epochs`` and
offers the result to the tracker as one extra candidate.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from math import ceil
from typing import Optional

import numpy as np

from . import aghn, rng
from .client import client_update, sgd
from .config import P_GRID, Q_GRID, ExperimentConfig
from .data import FederatedDataset, generate
from .errors import ConfigurationError, NumericalDivergenceError
from .model import DenseNet
from .params import LayeredParams, axpy_combine

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass
class RoundSnapshot:
    round: int
    per_client: list
    graphs: Optional[list] = None
    pq: Optional[list] = None
    strategy_counters: dict = field(default_factory=dict)


@dataclass
class BestModelTracker:
    """Per-client best validation accuracy; ties keep the earlier round."""

    best_val_acc: list
    best_round: list
    test_acc: list
    test_loss: list
    theta: list

    @classmethod
    def empty(cls, n: int) -> "BestModelTracker":
        return cls([-1.0] * n, [-1] * n, [float("nan")] * n, [float("nan")] * n, [None] * n)

    def offer(self, client: int, round_index: int, val_acc: float, test_acc: float,
              test_loss: float, theta: LayeredParams) -> bool:
        if val_acc > self.best_val_acc[client]:
            self.best_val_acc[client] = val_acc
            self.best_round[client] = round_index
            self.test_acc[client] = test_acc
            self.test_loss[client] = test_loss
            self.theta[client] = theta
            return True
        return False


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    snapshots: list
    final_report: dict
    client_groups: tuple
    tracker: BestModelTracker = field(repr=False)
    final_thetas: list = field(repr=False, default_factory=list)


def snapshot_rounds(rounds: int) -> tuple:
    """First, prior (1/6), middle (1/2) and final round."""
    if rounds < 1:
        return ()
    return tuple(sorted({1, ceil(rounds / 6), ceil(rounds / 2), rounds}))


def stage_rounds(rounds: int) -> dict:
    return {"first": 1, "prior": ceil(rounds / 6), "middle": ceil(rounds / 2), "final": rounds}


def _evaluate(model: DenseNet, theta: LayeredParams, shard) -> dict:
    out = {}
    for split in SPLITS:
        loss, acc = model.forward_loss(theta, shard.split(split))
        out[f"{split}_loss"] = loss
        out[f"{split}_acc"] = acc
    return out


def fedavg_aggregate(thetas, sizes) -> LayeredParams:
    total = float(sum(sizes))
    return axpy_combine([s / total for s in sizes], thetas)


class _Pool:
    def __init__(self, workers: int):
        self._ex = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def map(self, fn, items):
        if self._ex is None:
            return [fn(x) for x in items]
        return list(self._ex.map(fn, items))

    def close(self):
        if self._ex is not None:
            self._ex.shutdown()


def run_experiment(cfg: ExperimentConfig, dataset: Optional[FederatedDataset] = None,
                   observer=None) -> ExperimentResult:
    """Run one full federated experiment; deterministic in ``cfg``.

    ``observer(t, received)`` is called once per round with the list of models
    the clients received.
    """
    cfg.validate()
    if dataset is None:
        dataset = generate(cfg.task, cfg.partition)
    n = dataset.num_clients
    if n != cfg.num_clients:
        raise ConfigurationError(f"dataset has {n} clients, config expects {cfg.num_clients}", "num_clients")

    model = DenseNet(cfg.model)
    init = model.init_params(cfg.master_seed)
    num_layers = len(init)
    sizes = dataset.train_sizes()
    shards = dataset.shards
    strategy = cfg.strategy
    cadence = set(range(1, cfg.rounds + 1)) if cfg.snapshot_every_round else set(snapshot_rounds(cfg.rounds))

    thetas = [init] * n
    if cfg.aghn.first_round_delta == "same_as_theta":
        deltas = [init] * n
    else:
        deltas = [init.zeros_like()] * n
    states = [
        aghn.HypernetState.initial(
            num_layers, cfg.aghn.p_init, cfg.aghn.q_init, eta_hn=cfg.aghn.eta_hn,
            p_trainable=cfg.aghn.p_trainable, q_trainable=cfg.aghn.q_trainable,
            share_across_layers=cfg.aghn.share_across_layers,
        )
        for _ in range(n)
    ]
    tracker = BestModelTracker.empty(n)
    snapshots = []
    payload = 0 if strategy == "local" else n * init.num_scalars * 2
    pool = _Pool(cfg.workers)

    def train(i, t, received):
        local = replace(cfg.local, shuffle_seed=rng.derive_seed(cfg.master_seed, i, t))
        try:
            return client_update(model, received, shards[i].train, local, round_index=t)
        except NumericalDivergenceError as exc:
            exc.client = i
            raise

    try:
        for t in range(1, cfg.rounds + 1):
            aghn_out = None
            if strategy == "fedaghn":
                cos = aghn.cosine_matrices(deltas)
                aghn_out = pool.map(lambda i: aghn.run_aghn(thetas, deltas, i, states[i], cos), range(n))
                received = [o.personalized_initial for o in aghn_out]
            elif strategy in ("fedavg", "fedavg_ft"):
                received = [fedavg_aggregate(thetas, sizes)] * n
            else:
                received = list(thetas)
            if observer is not None:
                observer(t, received)

            results = pool.map(lambda i: train(i, t, received[i]), range(n))
            # only the delta travels; the server rebuilds the trained model
            new_deltas = [res.delta_theta for res in results]
            new_thetas = [received[i] + new_deltas[i] for i in range(n)]
            if strategy in ("fedavg", "fedavg_ft"):
                deliverable = [fedavg_aggregate(new_thetas, sizes)] * n
            else:
                deliverable = new_thetas
            per_client = pool.map(lambda i: _evaluate(model, deliverable[i], shards[i]), range(n))
            for i, metrics in enumerate(per_client):
                tracker.offer(i, t, metrics["val_acc"], metrics["test_acc"], metrics["test_loss"],
                              deliverable[i])
                curve = results[i].train_loss_curve
                metrics["local_train_loss"] = curve[-1] if curve else float("nan")

            snap = RoundSnapshot(t, per_client, strategy_counters={"payload_scalars_sent": payload})
            if strategy == "fedaghn":
                grads = pool.map(
                    lambda i: aghn.hypernet_gradients(aghn_out[i], thetas, new_deltas[i]), range(n)
                )
                snap.pq = [{"p": list(s.p), "q": list(s.q)} for s in states]
                if t in cadence:
                    snap.graphs = [
                        {
                            "alpha": [g.alpha.tolist() for g in aghn_out[i].graphs],
                            "p": [g.p_used for g in aghn_out[i].graphs],
                            "q": [g.q_used for g in aghn_out[i].graphs],
                        }
                        for i in range(n)
                    ]
                states = [aghn.apply_pq_update(states[i], *grads[i]) for i in range(n)]
            snapshots.append(snap)
            thetas, deltas = new_thetas, new_deltas
            log.debug("round %d mean val acc %.4f", t, np.mean([m["val_acc"] for m in per_client]))

        finetune = None
        if strategy == "fedavg_ft" and cfg.rounds > 0:
            global_model = fedavg_aggregate(thetas, sizes)

            def tune(i):
                gen = rng.stream(rng.derive_seed(cfg.master_seed, i, cfg.rounds + 1), rng.FINETUNE)
                tuned, _ = sgd(model, global_model, shards[i].train, cfg.ft_epochs,
                               cfg.local.batch_size, cfg.local.learning_rate, gen, cfg.rounds + 1)
                return tuned, _evaluate(model, tuned, shards[i])

            finetune = pool.map(tune, range(n))
            for i, (tuned, m) in enumerate(finetune):
                tracker.offer(i, cfg.rounds + 1, m["val_acc"], m["test_acc"], m["test_loss"], tuned)
    finally:
        pool.close()

    for i in range(n):
        if tracker.best_round[i] < 0:
            # no rounds: the shared initial model is the only candidate
            m = _evaluate(model, init, shards[i])
            tracker.offer(i, 0, m["val_acc"], m["test_acc"], m["test_loss"], init)

    report = {
        "strategy": strategy,
        "master_seed": cfg.master_seed,
        "rounds": cfg.rounds,
        "mean_test_acc": float(np.mean(tracker.test_acc)),
        "per_client_test_acc": list(tracker.test_acc),
        "per_client_best_val_acc": list(tracker.best_val_acc),
        "per_client_best_round": list(tracker.best_round),
        "payload_scalars_per_round": payload,
    }
    if finetune is not None:
        report["finetune_test_acc"] = [m["test_acc"] for _, m in finetune]
    if strategy == "fedaghn":
        report["final_p"] = [list(s.p) for s in states]
        report["final_q"] = [list(s.q) for s in states]
    return ExperimentResult(cfg, snapshots, report, dataset.client_groups, tracker, thetas)


def run_repeats(cfg: ExperimentConfig, repeats: int, dataset: Optional[FederatedDataset] = None):
    """Run seeds ``master_seed + k`` on one shared dataset."""
    if repeats < 1:
        raise ConfigurationError("repeats must be >= 1", "repeats")
    cfg.validate()
    if dataset is None:
        dataset = generate(cfg.task, cfg.partition)
    return [run_experiment(replace(cfg, master_seed=cfg.master_seed + k), dataset) for k in range(repeats)]


def summarize(results) -> dict:
    """Mean and standard deviation of the mean test accuracy over repeats."""
    accs = [r.final_report["mean_test_acc"] for r in results]
    per_client = np.mean([r.final_report["per_client_test_acc"] for r in results], axis=0)
    return {
        "mean_test_acc": float(np.mean(accs)),
        "std_test_acc": float(np.std(accs)),
        "repeat_test_acc": accs,
        "per_client_acc": per_client.tolist(),
        "seeds": [r.config.master_seed for r in results],
    }


ABLATION_VARIANTS = ("no_pq", "frozen_pq", "no_p", "no_q", "shared_layers", "full")


def ablation_configs(base: ExperimentConfig) -> dict:
    if base.strategy != "fedaghn":
        raise ConfigurationError("ablations require strategy = fedaghn", "strategy")
    a = base.aghn
    full = replace(a, p_trainable=True, q_trainable=True, share_across_layers=False)
    variants = {
        "no_pq": replace(full, p_init=1.0 / (base.num_clients - 1), q_init=0.0,
                         p_trainable=False, q_trainable=False),
        "frozen_pq": replace(full, p_trainable=False, q_trainable=False),
        "no_p": replace(full, p_trainable=False),
        "no_q": replace(full, q_trainable=False),
        "shared_layers": replace(full, share_across_layers=True),
        "full": full,
    }
    return {name: replace(base, aghn=v) for name, v in variants.items()}


def run_ablation_suite(base: ExperimentConfig, repeats: int = 1, dataset=None, on_result=None) -> dict:
    """Mean test accuracy (and spread) of every ablation variant.

    ``on_result(variant, result)`` is called for every finished run.
    """
    cfgs = ablation_configs(base)
    if dataset is None:
        dataset = generate(base.task, base.partition)
    table = {}
    for name, c in cfgs.items():
        results = run_repeats(c, repeats, dataset)
        if on_result is not None:
            for res in results:
                on_result(name, res)
        table[name] = summarize(results)
    return table


def run_pq_sweep(base: ExperimentConfig, p_grid=P_GRID, q_grid=Q_GRID, repeats: int = 1, dataset=None):
    """``len(p_grid) x len(q_grid)`` matrix of mean test accuracies."""
    if not p_grid or not q_grid:
        raise ConfigurationError("sweep grids must be non-empty", "aghn.p_init")
    if dataset is None:
        dataset = generate(base.task, base.partition)
    out = np.zeros((len(p_grid), len(q_grid)))
    for a, p in enumerate(p_grid):
        for b, q in enumerate(q_grid):
            cfg = replace(base, aghn=replace(base.aghn, p_init=float(p), q_init=float(q)))
            out[a, b] = summarize(run_repeats(cfg, repeats, dataset))["mean_test_acc"]
    return out

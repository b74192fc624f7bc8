"""Synthetic Gaussian-mixture classification data and Non-IID partitions.

Class means are drawn once per task and shared by every client; clients differ
only in their label distribution.  Three partition schemes are supported:

``pathological``
    every client holds ``classes_per_client`` randomly chosen classes in equal
    amounts.
``dirichlet``
    for every class, the share each client receives is drawn from
    ``Dir(beta)``; small ``beta`` means strong label skew.
``grouped``
    clients form ``num_groups`` equal groups; each group owns an exclusive
    block of classes from which ``dominant_fraction`` of a client's samples
    come, the rest is drawn uniformly over all classes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng
from .errors import ConfigurationError
from .files import atomic_write_text
from .model import Batch
from .params import cosine

DATASET_SCHEMA = "aghn-dataset/1"
MIN_CLIENT_SAMPLES = 10
SCHEMES = ("pathological", "dirichlet", "grouped")


@dataclass(frozen=True)
class SyntheticTaskSpec:
    num_classes: int = 10
    feature_dim: int = 16
    class_mean_scale: float = 1.0
    class_noise_sigma: float = 2.0
    samples_per_client: int = 300
    seed: int = 0

    def validate(self):
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2", "task.num_classes")
        if self.feature_dim < 1:
            raise ConfigurationError("feature_dim must be >= 1", "task.feature_dim")
        if self.class_mean_scale <= 0:
            raise ConfigurationError("class_mean_scale must be > 0", "task.class_mean_scale")
        if self.class_noise_sigma <= 0:
            raise ConfigurationError("class_noise_sigma must be > 0", "task.class_noise_sigma")
        if self.samples_per_client < MIN_CLIENT_SAMPLES:
            raise ConfigurationError(
                f"samples_per_client must be >= {MIN_CLIENT_SAMPLES}", "task.samples_per_client"
            )


@dataclass(frozen=True)
class PartitionSpec:
    scheme: str = "grouped"
    num_clients: int = 20
    classes_per_client: int = 2
    beta: float = 0.1
    num_groups: int = 5
    dominant_fraction: float = 0.8

    def validate(self, num_classes: int):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown partition scheme {self.scheme!r}", "partition.scheme")
        if self.num_clients < 2:
            raise ConfigurationError("num_clients must be >= 2", "partition.num_clients")
        if self.scheme == "pathological":
            if not 1 <= self.classes_per_client <= num_classes:
                raise ConfigurationError(
                    "classes_per_client must lie in [1, num_classes]",
                    "partition.classes_per_client",
                )
        elif self.scheme == "dirichlet":
            if not self.beta > 0:
                raise ConfigurationError("beta must be > 0", "partition.beta")
        else:
            if self.num_groups < 1 or self.num_clients % self.num_groups:
                raise ConfigurationError(
                    "num_clients must be divisible by num_groups", "partition.num_groups"
                )
            if num_classes % self.num_groups:
                raise ConfigurationError(
                    "num_classes must be divisible by num_groups", "partition.num_groups"
                )
            if not 0.0 < self.dominant_fraction <= 1.0:
                raise ConfigurationError(
                    "dominant_fraction must lie in (0, 1]", "partition.dominant_fraction"
                )


@dataclass(frozen=True)
class ClientShard:
    train: Batch
    val: Batch
    test: Batch

    def split(self, name: str) -> Batch:
        return getattr(self, name)


@dataclass(frozen=True)
class FederatedDataset:
    task: SyntheticTaskSpec
    part: PartitionSpec
    shards: tuple
    client_groups: tuple
    class_histograms: np.ndarray = field(repr=False)

    @property
    def num_clients(self) -> int:
        return len(self.shards)

    def train_sizes(self) -> list:
        return [len(s.train) for s in self.shards]

    def to_json(self, path) -> None:
        doc = {
            "version": DATASET_SCHEMA,
            "task": asdict(self.task),
            "part": asdict(self.part),
            "client_groups": list(self.client_groups),
            "clients": [
                {
                    split: {
                        "features": s.split(split).features.tolist(),
                        "labels": s.split(split).labels.tolist(),
                    }
                    for split in ("train", "val", "test")
                }
                for s in self.shards
            ],
        }
        atomic_write_text(path, json.dumps(doc, separators=(",", ":")))

    @classmethod
    def from_json(cls, path) -> "FederatedDataset":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("version") != DATASET_SCHEMA:
            raise ConfigurationError(f"{path}: unsupported dataset version {doc.get('version')!r}")
        task = SyntheticTaskSpec(**doc["task"])
        part = PartitionSpec(**doc["part"])
        shards = []
        for c in doc["clients"]:
            parts = {
                k: Batch(
                    np.asarray(c[k]["features"], dtype=np.float64).reshape(-1, task.feature_dim),
                    np.asarray(c[k]["labels"], dtype=np.int64),
                )
                for k in ("train", "val", "test")
            }
            shards.append(ClientShard(**parts))
        hist = _histograms(shards, task.num_classes)
        return cls(task, part, tuple(shards), tuple(doc["client_groups"]), hist)


def split_sizes(n: int):
    """7:1:2 train/val/test sizes; rounding remainders go to train."""
    n_val = n // 10
    n_test = (2 * n) // 10
    return n - n_val - n_test, n_val, n_test


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    raw = weights * total
    base = np.floor(raw).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:short]] += 1
    return base


def _label_counts(task: SyntheticTaskSpec, part: PartitionSpec) -> np.ndarray:
    """Per-client, per-class sample counts (N x C)."""
    n, c, spc = part.num_clients, task.num_classes, task.samples_per_client
    gen = rng.stream(task.seed, rng.DATA, 1)
    counts = np.zeros((n, c), dtype=np.int64)

    if part.scheme == "pathological":
        k = part.classes_per_client
        for i in range(n):
            classes = np.sort(gen.choice(c, size=k, replace=False))
            counts[i, classes] = _largest_remainder(np.full(k, 1.0 / k), spc)
        return counts

    if part.scheme == "dirichlet":
        per_class = _largest_remainder(np.full(c, 1.0 / c), n * spc)
        shares = np.zeros((n, c))
        for k in range(c):
            props = gen.dirichlet(np.full(n, part.beta))
            shares[:, k] = props
            counts[:, k] = _largest_remainder(props, int(per_class[k]))
        for i in range(n):
            deficit = MIN_CLIENT_SAMPLES - int(counts[i].sum())
            if deficit > 0:
                mix = shares[i] / shares[i].sum() if shares[i].sum() > 0 else np.full(c, 1.0 / c)
                extra = gen.choice(c, size=deficit, p=mix)
                counts[i] += np.bincount(extra, minlength=c)
        return counts

    g = part.num_groups
    per_group = n // g
    block = c // g
    n_dom = int(round(part.dominant_fraction * spc))
    for i in range(n):
        grp = i // per_group
        dom = gen.integers(grp * block, (grp + 1) * block, size=n_dom)
        rest = gen.integers(0, c, size=spc - n_dom)
        counts[i] = np.bincount(np.concatenate([dom, rest]), minlength=c)
    return counts


def _histograms(shards, num_classes: int) -> np.ndarray:
    hist = np.zeros((len(shards), num_classes), dtype=np.int64)
    for i, s in enumerate(shards):
        for b in (s.train, s.val, s.test):
            hist[i] += np.bincount(b.labels, minlength=num_classes)
    return hist


def client_groups(part: PartitionSpec) -> tuple:
    if part.scheme != "grouped":
        return tuple(-1 for _ in range(part.num_clients))
    per_group = part.num_clients // part.num_groups
    return tuple(i // per_group for i in range(part.num_clients))


def generate(task: SyntheticTaskSpec, part: PartitionSpec) -> FederatedDataset:
    """Build the full federated dataset; deterministic in ``task.seed``."""
    task.validate()
    part.validate(task.num_classes)

    means = rng.stream(task.seed, rng.DATA, 0).normal(
        0.0, task.class_mean_scale, size=(task.num_classes, task.feature_dim)
    )
    counts = _label_counts(task, part)

    shards = []
    for i in range(part.num_clients):
        n = int(counts[i].sum())
        _, n_val, n_test = split_sizes(n)
        if n_val < 1 or n_test < 1:
            raise ConfigurationError(
                f"client {i} receives only {n} samples; every split must be non-empty",
                "task.samples_per_client",
            )
        gen = rng.stream(task.seed, rng.DATA, 2, i)
        labels = np.repeat(np.arange(task.num_classes), counts[i])
        labels = labels[gen.permutation(n)]
        feats = means[labels] + gen.normal(0.0, task.class_noise_sigma, size=(n, task.feature_dim))
        n_train = n - n_val - n_test
        shards.append(
            ClientShard(
                train=Batch(feats[:n_train], labels[:n_train]),
                val=Batch(feats[n_train:n_train + n_val], labels[n_train:n_train + n_val]),
                test=Batch(feats[n_train + n_val:], labels[n_train + n_val:]),
            )
        )
    return FederatedDataset(
        task, part, tuple(shards), client_groups(part), _histograms(shards, task.num_classes)
    )


def heterogeneity_report(ds: FederatedDataset):
    """Class histograms and their pairwise cosine-similarity matrix."""
    hist = ds.class_histograms.astype(np.float64)
    n = hist.shape[0]
    sim = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            sim[i, j] = sim[j, i] = cosine(hist[i], hist[j])
    return ds.class_histograms.copy(), sim

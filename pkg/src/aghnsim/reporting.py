"""Collaboration-weight analytics and file exports.

Weight analytics split every collaboration graph of a grouped experiment into
three kinds of edges: the self loop ("self"), edges from clients of the same
group ("similar") and edges from every other client ("other").
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass
from math import ceil
from typing import Optional

import numpy as np

from .errors import ReportingError
from .files import atomic_write_text
from .orchestrator import RoundSnapshot, stage_rounds

SNAPSHOT_SCHEMA = "aghn-snapshot/1"
REPORT_SCHEMA = "aghn-report/1"
CSV_HEADER = ("round", "client", "split", "loss", "accuracy")
STAGES = ("first", "prior", "middle", "final")
SCOPES = ("all_layers", "shallow", "deep")

# full-scale reference averages (case study, CIFAR-100, final round); documentation only
REFERENCE_SELF_SIMILAR_OTHER = (0.0126, 0.0733, 0.0480)


@dataclass(frozen=True)
class WeightDecomposition:
    scope: str
    stage: str
    round: int
    self_weight: float
    similar_weight: Optional[float]
    other_weight: Optional[float]


def scope_layers(scope, num_layers: int) -> list:
    """Layer indices covered by ``scope``; shallow is the first ceil(R/2) layers."""
    split = ceil(num_layers / 2)
    if scope == "all_layers":
        return list(range(num_layers))
    if scope == "shallow":
        return list(range(split))
    if scope == "deep":
        return list(range(split, num_layers))
    if isinstance(scope, (int, np.integer)) and 0 <= scope < num_layers:
        return [int(scope)]
    raise ReportingError(f"unknown scope {scope!r} for a {num_layers}-layer model")


def _resolve_stage(snapshots, stage):
    if isinstance(stage, (int, np.integer)):
        return str(stage), int(stage)
    if stage not in STAGES:
        raise ReportingError(f"unknown stage {stage!r}")
    total = max(s.round for s in snapshots)
    return stage, stage_rounds(total)[stage]


def decompose_weights(snapshots, groups, scope="all_layers", stage="final") -> WeightDecomposition:
    """Average self / similar / other weights over all central clients."""
    if not snapshots:
        raise ReportingError("no snapshots")
    groups = np.asarray(groups)
    if np.any(groups < 0):
        raise ReportingError("weight decomposition needs a grouped partition")
    label, rnd = _resolve_stage(snapshots, stage)
    snap = next((s for s in snapshots if s.round == rnd), None)
    if snap is None or not snap.graphs:
        raise ReportingError(f"no collaboration graphs recorded at round {rnd} (stage {label})")
    n = len(snap.graphs)
    if len(groups) != n:
        raise ReportingError(f"{len(groups)} group labels for {n} clients")
    layers = scope_layers(scope, len(snap.graphs[0]["alpha"]))
    if not layers:
        raise ReportingError(f"scope {scope!r} selects no layers")

    selfs, sims, others = [], [], []
    for i, g in enumerate(snap.graphs):
        same = groups == groups[i]
        same[i] = False
        diff = groups != groups[i]
        for r in layers:
            a = np.asarray(g["alpha"][r], dtype=np.float64)
            selfs.append(a[i])
            if same.any():
                sims.append(float(np.mean(a[same])))
            if diff.any():
                others.append(float(np.mean(a[diff])))
    return WeightDecomposition(
        scope=scope if isinstance(scope, str) else f"layer{scope}",
        stage=label,
        round=rnd,
        self_weight=float(np.mean(selfs)),
        similar_weight=float(np.mean(sims)) if sims else None,
        other_weight=float(np.mean(others)) if others else None,
    )


def trend_report(snapshots, groups) -> list:
    """Rows of (scope, category) with one column per stage."""
    with_graphs = [s for s in snapshots if s.graphs]
    if not with_graphs:
        raise ReportingError("no collaboration graphs recorded (not a fedaghn run?)")
    num_layers = len(with_graphs[0].graphs[0]["alpha"])
    rows = []
    for scope in SCOPES:
        if not scope_layers(scope, num_layers):
            continue
        decs = {st: decompose_weights(snapshots, groups, scope, st) for st in STAGES}
        for cat, attr in (("self", "self_weight"), ("similar", "similar_weight"), ("other", "other_weight")):
            row = {"scope": scope, "category": cat}
            row.update({st: getattr(decs[st], attr) for st in STAGES})
            rows.append(row)
    return rows


# ---------------------------------------------------------------- exports


def _num(x):
    if x is None:
        return None
    x = float(x)
    return None if math.isnan(x) else x


def _snapshot_to_dict(s: RoundSnapshot) -> dict:
    return {
        "round": s.round,
        "per_client": [{k: _num(v) for k, v in m.items()} for m in s.per_client],
        "graphs": s.graphs,
        "pq": s.pq,
        "strategy_counters": dict(s.strategy_counters),
    }


def snapshots_document(result) -> dict:
    cfg = result.config
    from .config import flatten

    return {
        "schema": SNAPSHOT_SCHEMA,
        "meta": {
            "strategy": cfg.strategy,
            "rounds": cfg.rounds,
            "num_clients": cfg.num_clients,
            "master_seed": cfg.master_seed,
            "layer_names": list(cfg.model.layer_names),
            "client_groups": list(result.client_groups),
            "config": {k: list(v) if isinstance(v, tuple) else v for k, v in flatten(cfg).items()},
        },
        "snapshots": [_snapshot_to_dict(s) for s in result.snapshots],
    }


def _dumps(doc) -> str:
    return json.dumps(doc, separators=(",", ":"), allow_nan=False) + "\n"


def export_snapshots_json(result, path) -> None:
    atomic_write_text(path, _dumps(snapshots_document(result)))


def load_snapshots(path):
    """Read a snapshot file; returns ``(meta, [RoundSnapshot, ...])``."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema") != SNAPSHOT_SCHEMA:
        raise ReportingError(f"{path}: unsupported snapshot schema {doc.get('schema')!r}")
    snaps = [
        RoundSnapshot(
            round=d["round"],
            per_client=[{k: (float("nan") if v is None else v) for k, v in m.items()} for m in d["per_client"]],
            graphs=d["graphs"],
            pq=d["pq"],
            strategy_counters=d["strategy_counters"],
        )
        for d in doc["snapshots"]
    ]
    return doc["meta"], snaps


def metrics_csv(snapshots) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for s in snapshots:
        for i, m in enumerate(s.per_client):
            for split in ("train", "val", "test"):
                w.writerow((s.round, i, split, f"{m[f'{split}_loss']:.10f}", f"{m[f'{split}_acc']:.10f}"))
    return buf.getvalue()


def export_metrics_csv(snapshots, path) -> None:
    atomic_write_text(path, metrics_csv(snapshots))


def graph_dot(alpha, central: int, layer: int, round_index: int) -> str:
    """Star graph in Graphviz DOT: one edge from every client into ``central``."""
    lines = [f'digraph "graph_c{central}_l{layer}_t{round_index}" {{']
    lines.append(f'  "c{central}" [shape=doublecircle];')
    for j in range(len(alpha)):
        if j != central:
            lines.append(f'  "c{j}";')
    for j, a in enumerate(alpha):
        lines.append(f'  "c{j}" -> "c{central}" [label="{float(a):.4f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_graphs_dot(snapshots, out_dir, rounds=None, clients=None, layers=None) -> list:
    """Write ``graph_c{i}_l{r}_t{t}.dot`` for every recorded graph; returns the paths."""
    written = []
    for s in snapshots:
        if not s.graphs or (rounds is not None and s.round not in rounds):
            continue
        for i, g in enumerate(s.graphs):
            if clients is not None and i not in clients:
                continue
            for r, alpha in enumerate(g["alpha"]):
                if layers is not None and r not in layers:
                    continue
                path = os.path.join(out_dir, f"graph_c{i}_l{r}_t{s.round}.dot")
                atomic_write_text(path, graph_dot(alpha, i, r, s.round))
                written.append(path)
    return written


def export_report_json(report: dict, path) -> None:
    atomic_write_text(path, _dumps({"schema": REPORT_SCHEMA, **report}))


def _table_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else (f"{v:.6f}" if isinstance(v, float) else v) for v in row])
    return buf.getvalue()


def export_trend_csv(rows, path) -> None:
    atomic_write_text(
        path, _table_csv(("scope", "category", *STAGES), [[r["scope"], r["category"], *(r[s] for s in STAGES)] for r in rows])
    )


def export_ablation_csv(table: dict, path) -> None:
    rows = [[name, v["mean_test_acc"], v["std_test_acc"]] for name, v in table.items()]
    atomic_write_text(path, _table_csv(("variant", "mean_test_acc", "std_test_acc"), rows))


def export_sweep_csv(matrix, p_grid, q_grid, path) -> None:
    rows = [[float(p), *(float(x) for x in matrix[a])] for a, p in enumerate(p_grid)]
    atomic_write_text(path, _table_csv(("p_init", *(f"q={q:g}" for q in q_grid)), rows))


def export(obj, fmt: str, path, **kw):
    """Dispatch on ``fmt``: ``csv`` (metrics), ``json`` (snapshots) or ``dot`` (graphs)."""
    if fmt == "csv":
        snaps = obj.snapshots if hasattr(obj, "snapshots") else obj
        return export_metrics_csv(snaps, path)
    if fmt == "json":
        return export_snapshots_json(obj, path)
    if fmt == "dot":
        snaps = obj.snapshots if hasattr(obj, "snapshots") else obj
        return export_graphs_dot(snaps, path, **kw)
    raise ReportingError(f"unknown export format {fmt!r}")

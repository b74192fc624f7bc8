import json
import os
from dataclasses import replace

import numpy as np
import pytest

from aghnsim.config import ExperimentConfig
from aghnsim.data import PartitionSpec, SyntheticTaskSpec
from aghnsim.errors import ReportingError
from aghnsim.model import DenseNetSpec
from aghnsim.orchestrator import RoundSnapshot, run_experiment
from aghnsim.reporting import (
    CSV_HEADER,
    SNAPSHOT_SCHEMA,
    decompose_weights,
    export,
    export_graphs_dot,
    export_metrics_csv,
    export_snapshots_json,
    graph_dot,
    load_snapshots,
    metrics_csv,
    scope_layers,
    trend_report,
)


def small_config(**kw):
    base = ExperimentConfig(
        num_clients=4,
        rounds=6,
        strategy="fedaghn",
        model=DenseNetSpec(hidden_dims=(8, 8)),
        task=SyntheticTaskSpec(samples_per_client=60, seed=3),
        partition=PartitionSpec(scheme="grouped", num_groups=2),
    )
    return replace(base, **kw)


@pytest.fixture(scope="module")
def small_run():
    return run_experiment(small_config())


def uniform_snapshot(n, layers, round_index=1):
    graphs = [{"alpha": [[1.0 / n] * n for _ in range(layers)], "p": [0.0] * layers, "q": [0.0] * layers}
              for _ in range(n)]
    return RoundSnapshot(round_index, [], graphs=graphs)


class TestScopes:
    @pytest.mark.parametrize("r,shallow,deep", [(1, [0], []), (3, [0, 1], [2]), (4, [0, 1], [2, 3])])
    def test_split(self, r, shallow, deep):
        assert scope_layers("shallow", r) == shallow
        assert scope_layers("deep", r) == deep
        assert scope_layers("all_layers", r) == list(range(r))

    def test_single_layer_index(self):
        assert scope_layers(2, 4) == [2]

    def test_unknown(self):
        with pytest.raises(ReportingError):
            scope_layers("middle", 4)


class TestDecomposition:
    def test_uniform_weights(self):
        snaps = [uniform_snapshot(6, 3)]
        d = decompose_weights(snaps, [0, 0, 1, 1, 2, 2], "all_layers", "final")
        for v in (d.self_weight, d.similar_weight, d.other_weight):
            assert v == pytest.approx(1 / 6, abs=1e-15)

    def test_singleton_groups_have_no_similar(self):
        d = decompose_weights([uniform_snapshot(3, 2)], [0, 1, 2])
        assert d.similar_weight is None
        assert d.other_weight == pytest.approx(1 / 3)

    def test_single_group_has_no_other(self):
        d = decompose_weights([uniform_snapshot(3, 2)], [0, 0, 0])
        assert d.other_weight is None

    def test_hand_computed(self):
        alpha = [[0.1, 0.6, 0.2, 0.1], [0.5, 0.3, 0.1, 0.1], [0.0, 0.0, 0.7, 0.3], [0.25, 0.25, 0.25, 0.25]]
        snap = RoundSnapshot(1, [], graphs=[{"alpha": [a], "p": [0], "q": [0]} for a in alpha])
        d = decompose_weights([snap], [0, 0, 1, 1])
        assert d.self_weight == pytest.approx((0.1 + 0.3 + 0.7 + 0.25) / 4)
        assert d.similar_weight == pytest.approx((0.6 + 0.5 + 0.3 + 0.25) / 4)
        assert d.other_weight == pytest.approx((0.15 + 0.1 + 0.0 + 0.25) / 4)

    def test_mass_identity(self, small_run):
        # self + (g-1) similar + (N-g) other == 1 for equal group sizes g
        d = decompose_weights(small_run.snapshots, small_run.client_groups)
        assert d.self_weight + d.similar_weight + 2 * d.other_weight == pytest.approx(1.0, abs=1e-12)

    def test_ungrouped_rejected(self, small_run):
        with pytest.raises(ReportingError):
            decompose_weights(small_run.snapshots, [-1] * 4)

    def test_group_count_mismatch(self, small_run):
        with pytest.raises(ReportingError):
            decompose_weights(small_run.snapshots, [0, 1])

    def test_missing_stage(self, small_run):
        with pytest.raises(ReportingError):
            decompose_weights(small_run.snapshots, small_run.client_groups, stage=4)

    def test_stage_rounds(self, small_run):
        rounds = {s: decompose_weights(small_run.snapshots, small_run.client_groups, stage=s).round
                  for s in ("first", "prior", "middle", "final")}
        assert rounds == {"first": 1, "prior": 1, "middle": 3, "final": 6}


class TestTrendReport:
    def test_shape_and_first_round(self, small_run):
        rows = trend_report(small_run.snapshots, small_run.client_groups)
        assert len(rows) == 9
        assert {(r["scope"], r["category"]) for r in rows} == {
            (s, c) for s in ("all_layers", "shallow", "deep") for c in ("self", "similar", "other")
        }
        # every client starts from the same update, so all non-self edges are equal
        by = {(r["scope"], r["category"]): r for r in rows}
        for scope in ("all_layers", "shallow", "deep"):
            assert by[(scope, "similar")]["first"] == pytest.approx(by[(scope, "other")]["first"], abs=1e-15)


class TestExports:
    def test_json_round_trip(self, small_run, tmp_path):
        path = tmp_path / "snaps.json"
        export_snapshots_json(small_run, path)
        doc = json.loads(path.read_text())
        assert doc["schema"] == SNAPSHOT_SCHEMA
        meta, snaps = load_snapshots(path)
        assert meta["client_groups"] == list(small_run.client_groups)
        assert len(snaps) == len(small_run.snapshots)
        for a, b in zip(snaps, small_run.snapshots):
            assert a.round == b.round and a.graphs == b.graphs and a.pq == b.pq
            assert a.per_client == b.per_client
        assert decompose_weights(snaps, meta["client_groups"]) == decompose_weights(
            small_run.snapshots, small_run.client_groups)

    def test_wrong_schema(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text(json.dumps({"schema": "other/1"}))
        with pytest.raises(ReportingError):
            load_snapshots(path)

    def test_csv_rows(self, small_run):
        lines = metrics_csv(small_run.snapshots).splitlines()
        assert lines[0] == ",".join(CSV_HEADER)
        body = [l.split(",") for l in lines[1:]]
        assert len(body) == 6 * 4 * 3
        for split in ("train", "val", "test"):
            assert sum(1 for r in body if r[2] == split) == 6 * 4
        assert body[0][:3] == ["1", "0", "train"]

    def test_export_bytes_stable(self, small_run, tmp_path):
        export_metrics_csv(small_run.snapshots, tmp_path / "a.csv")
        export(small_run, "csv", tmp_path / "b.csv")
        again = run_experiment(small_config())
        export_metrics_csv(again.snapshots, tmp_path / "c.csv")
        a = (tmp_path / "a.csv").read_bytes()
        assert a == (tmp_path / "b.csv").read_bytes() == (tmp_path / "c.csv").read_bytes()

    def test_unknown_format(self, small_run, tmp_path):
        with pytest.raises(ReportingError):
            export(small_run, "xml", tmp_path / "x")

    def test_dot_three_clients(self):
        text = graph_dot([0.2, 0.5, 0.3], 1, 0, 7)
        assert text.startswith('digraph "graph_c1_l0_t7"')
        edges = [l for l in text.splitlines() if "->" in l]
        assert len(edges) == 3
        assert all(l.strip().split()[2] == '"c1"' for l in edges)
        assert '"c0" -> "c1" [label="0.2000"];' in text
        assert '"c1" -> "c1" [label="0.5000"];' in text

    def test_dot_files(self, small_run, tmp_path):
        paths = export_graphs_dot(small_run.snapshots, tmp_path, rounds={6}, clients={0, 3})
        names = sorted(os.path.basename(p) for p in paths)
        assert names == sorted(f"graph_c{i}_l{r}_t6.dot" for i in (0, 3) for r in range(3))

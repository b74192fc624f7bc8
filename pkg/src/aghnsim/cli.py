"""Command-line interface.

Subcommands::

    aghnsim run            run one configuration for --repeats seeds
    aghnsim ablate         ablation suite of the hypernetwork switches
    aghnsim sweep          grid over initial p and q
    aghnsim gen-data       write the federated dataset as JSON
    aghnsim report         Self/Similar/Other trend table from a snapshot file
    aghnsim export-graphs  Graphviz DOT files from a snapshot file

Exit codes: 0 success, 1 configuration error, 2 numerical divergence,
3 I/O or snapshot-file error.  The output directory defaults to
``$AGHNSIM_OUT_DIR`` or ``./aghnsim-out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from . import __version__
from .config import P_GRID, Q_GRID, load_config, to_text
from .data import generate, heterogeneity_report
from .errors import ConfigurationError, NumericalDivergenceError, ReportingError
from .files import atomic_write_text
from .orchestrator import run_ablation_suite, run_experiment, run_pq_sweep, summarize
from .reporting import (
    decompose_weights,
    export_ablation_csv,
    export_graphs_dot,
    export_metrics_csv,
    export_report_json,
    export_snapshots_json,
    export_sweep_csv,
    export_trend_csv,
    load_snapshots,
    trend_report,
)

log = logging.getLogger("aghnsim")

OUT_DIR_ENV = "AGHNSIM_OUT_DIR"
DEFAULT_OUT_DIR = "aghnsim-out"

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which is reserved for divergence here
    def error(self, message):
        raise ConfigurationError(f"{self.prog}: {message}")


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def _int_set(text: str) -> set:
    try:
        return {int(v) for v in text.replace(",", " ").split()}
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        v = 0
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be an integer >= 1, got {text!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", help=f"output directory (default: ${OUT_DIR_ENV} or ./{DEFAULT_OUT_DIR})")
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")

    configured = argparse.ArgumentParser(add_help=False)
    configured.add_argument("-c", "--config", help="flat key = value config file")
    configured.add_argument("-s", "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                            help="override one config key; repeatable, applied after --config")

    repeated = argparse.ArgumentParser(add_help=False)
    repeated.add_argument("-r", "--repeats", type=_positive, default=3,
                          help="seeds master_seed .. master_seed+repeats-1 (default: 3)")

    parser = _Parser(prog="aghnsim", description="Personalized FL simulator with attentive graph hypernetworks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("run", parents=[common, configured, repeated], help="run one configuration")
    sub.add_parser("ablate", parents=[common, configured, repeated], help="hypernetwork ablation suite")
    sw = sub.add_parser("sweep", parents=[common, configured, repeated], help="initial p/q grid sweep")
    sw.add_argument("--p-grid", type=_float_list, default=P_GRID, help="initial p values (default: %(default)s)")
    sw.add_argument("--q-grid", type=_float_list, default=Q_GRID, help="initial q values (default: %(default)s)")
    sub.add_parser("gen-data", parents=[common, configured], help="write the federated dataset")

    rp = sub.add_parser("report", parents=[common], help="collaboration-weight trends from snapshots")
    rp.add_argument("snapshots", help="snapshots.json written by `run`")
    eg = sub.add_parser("export-graphs", parents=[common], help="DOT files from snapshots")
    eg.add_argument("snapshots", help="snapshots.json written by `run`")
    eg.add_argument("--rounds", type=_int_set, help="only these rounds")
    eg.add_argument("--clients", type=_int_set, help="only these central clients")
    eg.add_argument("--layers", type=_int_set, help="only these layers")
    return parser


def _out_dir(args) -> str:
    path = args.out_dir or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR
    os.makedirs(path, exist_ok=True)
    return path


def _config(args):
    return load_config(args.config, args.overrides)


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def cmd_run(args) -> None:
    cfg = _config(args)
    out = _out_dir(args)
    dataset = generate(cfg.task, cfg.partition)
    atomic_write_text(os.path.join(out, "config.txt"), to_text(cfg))
    results = []
    for k in range(args.repeats):
        rcfg = replace(cfg, master_seed=cfg.master_seed + k)
        log.info("repeat %d/%d (seed %d, strategy %s)", k + 1, args.repeats, rcfg.master_seed, cfg.strategy)
        res = run_experiment(rcfg, dataset)
        results.append(res)
        rdir = os.path.join(out, f"repeat{k}")
        os.makedirs(rdir, exist_ok=True)
        export_metrics_csv(res.snapshots, os.path.join(rdir, "metrics.csv"))
        export_snapshots_json(res, os.path.join(rdir, "snapshots.json"))
        export_report_json(res.final_report, os.path.join(rdir, "report.json"))
        log.info("  mean test accuracy %.4f", res.final_report["mean_test_acc"])
    summary = summarize(results)
    export_report_json({"strategy": cfg.strategy, **summary}, os.path.join(out, "report.json"))
    print(f"{cfg.strategy}: mean test accuracy {summary['mean_test_acc']:.4f} "
          f"± {summary['std_test_acc']:.4f} over {args.repeats} repeat(s)")


def cmd_ablate(args) -> None:
    cfg = _config(args)
    out = _out_dir(args)
    table = run_ablation_suite(cfg, args.repeats)
    export_ablation_csv(table, os.path.join(out, "ablation.csv"))
    export_report_json({"ablation": table}, os.path.join(out, "ablation.json"))
    for name, v in table.items():
        print(f"{name:14s} {v['mean_test_acc']:.4f} ± {v['std_test_acc']:.4f}")


def cmd_sweep(args) -> None:
    cfg = _config(args)
    out = _out_dir(args)
    if not args.p_grid or not args.q_grid:
        raise ConfigurationError("--p-grid and --q-grid must be non-empty", "aghn.p_init")
    matrix = run_pq_sweep(cfg, args.p_grid, args.q_grid, args.repeats)
    export_sweep_csv(matrix, args.p_grid, args.q_grid, os.path.join(out, "sweep.csv"))
    spread = float(matrix.max() - matrix.min())
    export_report_json({"p_grid": list(args.p_grid), "q_grid": list(args.q_grid),
                        "mean_test_acc": matrix.tolist(), "spread": spread},
                       os.path.join(out, "sweep.json"))
    print(f"sweep: best {matrix.max():.4f}, worst {matrix.min():.4f}, spread {spread:.4f}")


def cmd_gen_data(args) -> None:
    cfg = _config(args)
    out = _out_dir(args)
    ds = generate(cfg.task, cfg.partition)
    ds.to_json(os.path.join(out, "dataset.json"))
    hist, sim = heterogeneity_report(ds)
    atomic_write_text(os.path.join(out, "heterogeneity.json"),
                      _dumps({"class_histograms": hist.tolist(), "label_cosine": sim.tolist()}))
    print(f"dataset: {ds.num_clients} clients, {sum(ds.train_sizes())} training samples")


def _load(path):
    try:
        return load_snapshots(path)
    except (KeyError, TypeError, ValueError) as exc:
        raise ReportingError(f"{path}: malformed snapshot file ({exc})") from exc


def cmd_report(args) -> None:
    meta, snaps = _load(args.snapshots)
    out = _out_dir(args)
    groups = meta.get("client_groups", [])
    rows = trend_report(snaps, groups)
    export_trend_csv(rows, os.path.join(out, "trend.csv"))
    final = decompose_weights(snaps, groups, "all_layers", "final")
    export_report_json({"final": final.__dict__, "trend": rows}, os.path.join(out, "trend.json"))
    print(f"{'scope':10s} {'category':8s} " + " ".join(f"{s:>8s}" for s in ("first", "prior", "middle", "final")))
    for r in rows:
        cells = " ".join("       -" if r[s] is None else f"{r[s]:8.4f}" for s in ("first", "prior", "middle", "final"))
        print(f"{r['scope']:10s} {r['category']:8s} {cells}")


def cmd_export_graphs(args) -> None:
    _, snaps = _load(args.snapshots)
    out = _out_dir(args)
    paths = export_graphs_dot(snaps, out, args.rounds, args.clients, args.layers)
    if not paths:
        raise ReportingError(f"{args.snapshots}: no collaboration graphs match the selection")
    print(f"wrote {len(paths)} DOT file(s) to {out}")


COMMANDS = {
    "run": cmd_run,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "gen-data": cmd_gen_data,
    "report": cmd_report,
    "export-graphs": cmd_export_graphs,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                            format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
        COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalDivergenceError as exc:
        print(f"numerical divergence: {exc} (client {exc.client}, round {exc.round_index}, "
              f"epoch {exc.epoch}, batch {exc.batch})", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, ReportingError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

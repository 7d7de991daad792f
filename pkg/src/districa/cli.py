"""Command-line front end: run experiments, make or inspect graphs, summarize traces.

Exit codes: 0 on success, 1 for configuration or usage problems, 2 when the
computation itself failed (for example every Monte-Carlo run aborted).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DistricaError, InvalidInputError
from .experiments import MODES, emit_trace, load_config, read_trace, run_experiment
from .network import er_graph, load_graph, save_graph


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="districa",
        description="Distributed blind source separation over simulated sensor networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a Monte-Carlo experiment from a JSON config")
    run_p.add_argument("config", help="path to a JSON config file")
    run_p.add_argument(
        "-o",
        "--output",
        default=None,
        help="output directory (default: $DISTRICA_OUTPUT_DIR or the current directory)",
    )
    run_p.add_argument("--nodes", type=int, default=None, help="override the node count")
    run_p.add_argument("--iters", type=int, default=None, help="override the iteration count")
    run_p.add_argument("--seed", type=int, default=None, help="override the experiment seed")
    run_p.add_argument("--mode", choices=MODES, default=None, help="override the mode")
    run_p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")

    graph_p = sub.add_parser("graph", help="generate or inspect a network graph file")
    action = graph_p.add_mutually_exclusive_group(required=True)
    action.add_argument("--export", metavar="PATH", help="draw a random graph and write it")
    action.add_argument(
        "--import", dest="import_path", metavar="PATH", help="load a graph file and summarize it"
    )
    graph_p.add_argument("--nodes", type=int, default=None, help="node count (export)")
    graph_p.add_argument("--prob", type=float, default=None, help="edge probability (export)")
    graph_p.add_argument(
        "--channels", type=int, default=None, help="channels per node (export)"
    )
    graph_p.add_argument("--seed", type=int, default=0, help="graph seed (export)")

    report_p = sub.add_parser("report", help="summarize the trace CSVs in a directory")
    report_p.add_argument("directory", help="directory holding trace CSV files")
    report_p.add_argument(
        "--threshold",
        type=float,
        default=1e-3,
        help="aligned-error level a trace must end below (default 1e-3)",
    )
    return parser


def _cmd_run(args) -> int:
    config = load_config(args.config)
    overrides = {}
    if args.nodes is not None:
        overrides["nodes"] = args.nodes
    if args.iters is not None:
        overrides["iterations"] = args.iters
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.mode is not None:
        overrides["mode"] = args.mode
    if overrides:
        config = replace(config, **overrides)
    if args.jobs < 1:
        raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")

    out_dir = args.output or os.environ.get("DISTRICA_OUTPUT_DIR") or "."

    def progress(result):
        print(
            f"run {result.run_index}: {result.status} "
            f"({result.iterations_completed}/{config.iterations} iterations, "
            f"{result.wall_time:.1f}s)"
        )

    result = run_experiment(config, jobs=args.jobs, progress=progress)
    csv_path, json_path = emit_trace(result, out_dir, name=Path(args.config).stem)
    aligned = result.trace.epsilon_aligned_median
    if aligned.size:
        print(f"final aligned error (median): {aligned[-1]:.6g}")
    print(f"wrote {csv_path} and {json_path}")
    return 0


def _cmd_graph(args) -> int:
    if args.import_path is not None:
        graph = load_graph(args.import_path)
        edges = int(graph.adjacency.sum()) // 2
        print(
            f"{args.import_path}: {graph.n_nodes} nodes, {edges} edges, "
            f"channels {list(graph.channels)}"
        )
        return 0
    missing = [
        name
        for name, value in (("--nodes", args.nodes), ("--prob", args.prob), ("--channels", args.channels))
        if value is None
    ]
    if missing:
        raise ConfigError(f"--export requires {', '.join(missing)}")
    graph = er_graph(
        args.nodes, args.prob, (args.channels,) * args.nodes, rng_seed=args.seed
    )
    save_graph(graph, args.export)
    note = f" (after {graph.resamples} disconnected draws)" if graph.resamples else ""
    print(f"wrote {args.export}: {args.nodes} nodes, p={args.prob}{note}")
    return 0


def _cmd_report(args) -> int:
    directory = Path(args.directory)
    if not directory.is_dir():
        raise ConfigError(f"{directory} is not a directory")
    csv_files = sorted(directory.glob("*.csv"))
    if not csv_files:
        raise ConfigError(f"no trace CSVs found in {directory}")
    for path in csv_files:
        columns = read_trace(path)
        if "epsilon_aligned_median" not in columns:
            print(f"{path.name}: not a trace file, skipping")
            continue
        aligned = columns["epsilon_aligned_median"]
        if aligned.size == 0:
            print(f"{path.name}: 0 iterations (metadata only)")
            continue
        final = aligned[-1]
        verdict = "below" if final < args.threshold else "ABOVE"
        hits = np.flatnonzero(aligned < args.threshold)
        reach = f"reaches it at iteration {hits[0]}" if hits.size else "never reaches it"
        print(
            f"{path.name}: {len(columns['iter'])} iterations, final aligned error "
            f"{final:.6g} ({verdict} threshold {args.threshold:g}, {reach})"
        )
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": _cmd_run, "graph": _cmd_graph, "report": _cmd_report}
    try:
        return handlers[args.command](args)
    except (ConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DistricaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""
Command-line driver: generate | infer | train | report.

    python eegnn.py generate --nodes 50 --kappa 20 --alpha 1 --seed 7 --out gen/
    python eegnn.py infer --graph gen/graph.txt --epochs 2000 --out chain/
    python eegnn.py train --dataset data/texas --edge-mode ee_sampled --snapshots chain/snapshots --out runs/
    python eegnn.py report runs/report.csv runs_ee/report.csv --out summary/

Configuration precedence: command-line flag > --config file (key=value) > default.
Exit codes: 0 ok, 2 usage, 3 IO/format, 4 numerical abort, 5 missing artifact.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from tabulate import tabulate

from combine_reports import COMBINED_FILE, ReportSchemaError, combine_reports, print_combined
from dmpgm_generate import GenParams, generate_multigraph, generate_multigraph_dense, sample_parameters
from dmpgm_mcmc import (
    HISTOGRAM_FILE,
    POSTERIOR_FILE,
    SNAPSHOT_DIR,
    TRACE_FILE,
    ChainAbortedError,
    ChainConfig,
    EmptyTraceError,
    LiveChain,
    SnapshotCycle,
    load_snapshots,
    multiplicity_histogram,
    posterior_mean_multiplicity,
    run_chain,
    run_chains,
    save_posterior_multiplicity,
    save_snapshots,
    save_trace,
)
from gnn_train import MissingPosteriorError, TrainConfig, report_table, run_benchmark
from graph_core import (
    EDGES_FILE,
    FEATURES_FILE,
    LABELS_FILE,
    MAPPING_FILE,
    SPLIT_FILE,
    GraphFormatError,
    GraphValidationError,
    NodeIndexError,
    collapse,
    graph_statistics,
    load_edge_list,
    save_multigraph,
    save_node_mapping,
    save_simple_graph,
)

# --- CONFIGURATION ---
VERSION = "0.1.0"
LOG_FILE = "progress.log"
MANIFEST_FILE = "manifest.json"
MULTIGRAPH_FILE = "multigraph.txt"
GRAPH_FILE = "graph.txt"
REPORT_FILE = "report.csv"
SEEDS_FILE = "seed_accuracies.csv"
EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC, EXIT_MISSING = 0, 2, 3, 4, 5
IO_ERRORS = (OSError, GraphFormatError, GraphValidationError, NodeIndexError)


# --- SETUP FUNCTIONS ---
def setup_logging(log_file=LOG_FILE):
    """INFO to `log_file` (append) and to the console; replaces earlier handlers."""
    logger = logging.getLogger()
    for handler in logger.handlers[:]:
        logger.removeHandler(handler)
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file, mode='a'),
            logging.StreamHandler()
        ]
    )


def load_config_file(path) -> dict:
    if path is None:
        return {}
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Config file not found: {path}")
    return {k.strip(): v for k, v in dotenv_values(path).items() if v is not None}


def _coerce(value: str, default):
    if isinstance(default, bool):
        lowered = value.strip().lower()
        if lowered not in ("1", "0", "true", "false", "yes", "no"):
            raise ValueError(f"expected a boolean, got {value!r}")
        return lowered in ("1", "true", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(int(v) for v in value.split(",") if v.strip())
    return value.strip()


def resolve_config(cls, file_values: dict, cli_values: dict):
    """Builds `cls` from CLI values, then file values, then the dataclass defaults."""
    defaults = cls()
    kwargs = {}
    for f in fields(cls):
        if not f.init:
            continue
        if cli_values.get(f.name) is not None:
            kwargs[f.name] = cli_values[f.name]
        elif f.name in file_values:
            try:
                kwargs[f.name] = _coerce(file_values[f.name], getattr(defaults, f.name))
            except ValueError as e:
                raise ValueError(f"config key {f.name}: {e}") from e
    return cls(**kwargs)


def file_digest(path) -> str:
    sha = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            sha.update(chunk)
    return sha.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    version: str = VERSION
    input_digests: dict = field(default_factory=dict)
    wall_time_s: float = 0.0

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / MANIFEST_FILE
        with open(path, mode="w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True, default=_json_default)
        return path


def _json_default(value):
    if isinstance(value, (np.integer, np.floating)):
        return value.item()
    if isinstance(value, tuple):
        return list(value)
    return str(value)


def _digests(paths) -> dict:
    return {str(p): file_digest(p) for p in paths if p is not None and os.path.isfile(p)}


# --- ARGUMENT PARSING ---
# flag names per config field, used to name the flag in validation errors
FLAG_NAMES = {
    "num_nodes": "--nodes", "kappa_mass": "--kappa", "alpha_dp": "--alpha", "k_gen": "--clusters",
    "epochs": "--epochs", "burn_in_frac": "--burn-in", "thin": "--thin", "k_init": "--k-init",
    "hmc_step": "--hmc-step", "hmc_leapfrog": "--leapfrog", "mh_scale": "--mh-scale",
    "lr": "--lr", "weight_decay": "--weight-decay", "max_epochs": "--max-epochs", "patience": "--patience",
    "backbone": "--backbone", "edge_mode": "--edge-mode", "layers": "--layers",
    "teleport_alpha": "--teleport-alpha", "train_fraction": "--train-fraction", "threads": "--threads",
    "seed": "--seed", "seeds": "--runs",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master random seed")
    common.add_argument("--threads", type=int, default=None, help="worker cap for chains and seeds")
    common.add_argument("--config", default=None, help="key=value configuration file")
    common.add_argument("--out", default=".", help="output directory")

    parser = argparse.ArgumentParser(prog="eegnn", description="Edge-enhanced GNNs via DMPGM virtual multigraphs.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", parents=[common], help="sample a DMPGM multigraph and its simple graph")
    gen.add_argument("--nodes", type=int, dest="num_nodes")
    gen.add_argument("--kappa", type=float, dest="kappa_mass")
    gen.add_argument("--alpha", type=float, dest="alpha_dp")
    gen.add_argument("--clusters", type=int, dest="k_gen")
    gen.add_argument("--dense", action="store_true", help="pairwise Poisson scan (small graphs)")

    inf = sub.add_parser("infer", parents=[common], help="run the MCMC sampler on an observed graph")
    inf.add_argument("--graph", required=True, help="edge-list file")
    inf.add_argument("--epochs", type=int)
    inf.add_argument("--burn-in", type=float, dest="burn_in_frac")
    inf.add_argument("--thin", type=int)
    inf.add_argument("--k-init", type=int, dest="k_init")
    inf.add_argument("--alpha", type=float, dest="alpha_dp")
    inf.add_argument("--kappa", type=float, dest="kappa_mass")
    inf.add_argument("--hmc-step", type=float, dest="hmc_step")
    inf.add_argument("--leapfrog", type=int, dest="hmc_leapfrog")
    inf.add_argument("--mh-scale", type=float, dest="mh_scale")
    inf.add_argument("--fixed-k", action="store_false", default=None, dest="grow_clusters",
                     help="keep the k-init clusters: no births, no pruning")
    inf.add_argument("--chains", type=int, default=1)
    inf.add_argument("--bins", type=int, default=20, help="histogram bins for expected multiplicities")

    tr = sub.add_parser("train", parents=[common], help="train SGC/APPNP with or without edge enhancement")
    tr.add_argument("--dataset", required=True, help="dataset directory")
    tr.add_argument("--backbone", choices=["sgc", "appnp"])
    tr.add_argument("--layers", type=int)
    tr.add_argument("--edge-mode", choices=["baseline", "ee_sampled", "ee_mean"], dest="edge_mode")
    tr.add_argument("--snapshots", default=None, help="snapshot archive written by 'infer'")
    tr.add_argument("--runs", type=int, default=None, help="number of seeds")
    tr.add_argument("--lr", type=float)
    tr.add_argument("--weight-decay", type=float, dest="weight_decay")
    tr.add_argument("--max-epochs", type=int, dest="max_epochs")
    tr.add_argument("--patience", type=int)
    tr.add_argument("--teleport-alpha", type=float, dest="teleport_alpha")
    tr.add_argument("--train-fraction", type=float, dest="train_fraction")
    tr.add_argument("--live-chain", action="store_true", help="run the sampler alongside training (small graphs)")
    tr.add_argument("--log-epochs", action="store_true", default=None, dest="log_epochs")

    rep = sub.add_parser("report", parents=[common], help="merge report CSVs with EE-minus-baseline deltas")
    rep.add_argument("reports", nargs="+")
    return parser


def _usage_error(parser, error: ValueError):
    message = str(error)
    flag = next((flag for name, flag in FLAG_NAMES.items() if message.startswith(name)), None)
    parser.error(f"argument {flag}: {message}" if flag else message)


def _config_or_usage(parser, cls, file_values, cli_values):
    try:
        return resolve_config(cls, file_values, cli_values)
    except ValueError as e:
        _usage_error(parser, e)


# --- COMMANDS ---
def cmd_generate(args, parser, file_values) -> tuple:
    params = _config_or_usage(parser, GenParams, file_values, vars(args))
    out_dir = Path(args.out)
    rng = np.random.default_rng(params.seed)
    if args.dense:
        pi, weights = sample_parameters(params, rng)
        try:
            mg = generate_multigraph_dense(pi, weights, rng)
        except ValueError as e:
            _usage_error(parser, e)
    else:
        mg = generate_multigraph(params, rng).multigraph
    graph = collapse(mg)
    save_multigraph(mg, out_dir / MULTIGRAPH_FILE)
    save_simple_graph(graph, out_dir / GRAPH_FILE)
    stats = graph_statistics(graph)
    print(tabulate([list(stats.values())], headers=list(stats.keys()), tablefmt="simple"))
    logging.info(f"Wrote {MULTIGRAPH_FILE} ({len(mg.counts)} pairs) and {GRAPH_FILE} to {out_dir}")
    return EXIT_OK, asdict(params), params.seed, []


def _write_chain_outputs(trace, out_dir: Path, bins: int) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    save_trace(trace, out_dir / TRACE_FILE)
    mean_mg = posterior_mean_multiplicity(trace)
    save_posterior_multiplicity(mean_mg, out_dir / POSTERIOR_FILE)
    multiplicity_histogram(mean_mg, bins).to_csv(out_dir / HISTOGRAM_FILE, index=False)
    save_snapshots(trace, out_dir / SNAPSHOT_DIR)
    off = mean_mg.pairs[:, 0] != mean_mg.pairs[:, 1]
    share = float(np.mean(mean_mg.counts[off] > 1)) if off.any() else 0.0
    logging.info(f"Share of observed edges with mean multiplicity > 1: {share:.3f}")


def cmd_infer(args, parser, file_values) -> tuple:
    config = _config_or_usage(parser, ChainConfig, file_values, vars(args))
    if args.chains < 1:
        parser.error("argument --chains: must be at least 1")
    out_dir = Path(args.out)
    graph, mapping = load_edge_list(args.graph)
    if mapping is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_node_mapping(mapping, out_dir / MAPPING_FILE)
    try:
        if args.chains == 1:
            traces = [run_chain(graph, config)]
        else:
            traces = run_chains(graph, config, args.chains, max_workers=args.threads)
    except ChainAbortedError as e:
        save_trace(e.trace, out_dir / TRACE_FILE)
        logging.error(f"Chain aborted: {e}. Last good epoch {e.last_good_epoch}; partial trace saved.")
        return EXIT_NUMERIC, asdict(config), config.seed, [args.graph]

    if len(traces) == 1:
        _write_chain_outputs(traces[0], out_dir, args.bins)
    else:
        for c, trace in enumerate(traces):
            _write_chain_outputs(trace, out_dir / f"chain_{c}", args.bins)
    summary = [[c, len(t), t.records[-1][2], f"{t.records[-1][1]:.2f}"] for c, t in enumerate(traces)]
    print(tabulate(summary, headers=["Chain", "Epochs", "Final K", "Final log joint"], tablefmt="simple"))
    return EXIT_OK, {**asdict(config), "chains": args.chains}, config.seed, [args.graph]


def cmd_train(args, parser, file_values) -> tuple:
    cli = dict(vars(args))
    base_seed = args.seed if args.seed is not None else int(file_values.get("seed", 0))
    if args.runs is not None:
        if args.runs < 1:
            parser.error("argument --runs: must be at least 1")
        cli["seeds"] = tuple(range(base_seed, base_seed + args.runs))
    elif args.seed is not None:
        cli["seeds"] = (args.seed,)
    config = _config_or_usage(parser, TrainConfig, file_values, cli)
    out_dir = Path(args.out)
    dataset_dir = Path(args.dataset)
    inputs = [dataset_dir / name for name in (EDGES_FILE, FEATURES_FILE, LABELS_FILE, SPLIT_FILE)]

    sources = {}
    if config.edge_mode != "baseline":
        if args.live_chain and config.edge_mode == "ee_mean":
            parser.error("argument --live-chain: only valid with --edge-mode ee_sampled")
        if args.live_chain:
            graph, _ = load_edge_list(dataset_dir / EDGES_FILE)
            chain_config = _config_or_usage(parser, ChainConfig, file_values, {"seed": base_seed})
            sources[config.edge_mode] = LiveChain(graph, chain_config)
        elif args.snapshots is None:
            logging.error(f"edge_mode {config.edge_mode} needs --snapshots (or --live-chain)")
            return EXIT_MISSING, asdict(config), base_seed, inputs
        else:
            try:
                snapshots = load_snapshots(args.snapshots)
                sources[config.edge_mode] = SnapshotCycle(snapshots)
            except (FileNotFoundError, EmptyTraceError) as e:
                logging.error(f"Snapshot archive unusable: {e}")
                return EXIT_MISSING, asdict(config), base_seed, inputs
            inputs.append(Path(args.snapshots) / "index.csv")

    try:
        report = run_benchmark(dataset_dir, [config], sources)
    except MissingPosteriorError as e:
        logging.error(str(e))
        return EXIT_MISSING, asdict(config), base_seed, inputs

    report.table.to_csv(out_dir / REPORT_FILE, index=False)
    seed_rows = []
    for result in report.results:
        for r in result.results:
            seed_rows.append({"seed": r.seed, "accuracy": r.accuracy, "epochs": r.epochs, "final_loss": r.final_loss})
            if config.log_epochs:
                pd.DataFrame({"epoch": range(len(r.loss_history)), "loss": r.loss_history}).to_csv(
                    out_dir / f"seed_{r.seed}_loss.csv", index=False
                )
    pd.DataFrame(seed_rows, columns=["seed", "accuracy", "epochs", "final_loss"]).to_csv(out_dir / SEEDS_FILE, index=False)
    print(tabulate(report_table(report.table), headers="keys", tablefmt="simple", showindex=False))
    if report.metadata["aborted_seeds"]:
        logging.warning(f"Aborted seeds: {report.metadata['aborted_seeds']}")
    return EXIT_OK, {**asdict(config), "report_metadata": report.metadata}, base_seed, inputs


def cmd_report(args, parser, file_values) -> tuple:
    missing = [p for p in args.reports if not os.path.isfile(p)]
    if missing:
        logging.error(f"Report file(s) not found: {missing}")
        return EXIT_IO, {"reports": args.reports}, args.seed, []
    try:
        combined = combine_reports(args.reports)
    except ReportSchemaError as e:
        logging.error(f"Report schema mismatch: {e}")
        return EXIT_USAGE, {"reports": args.reports}, args.seed, args.reports
    combined.to_csv(Path(args.out) / COMBINED_FILE, index=False)
    print_combined(combined)
    return EXIT_OK, {"reports": args.reports}, args.seed, args.reports


COMMANDS = {"generate": cmd_generate, "infer": cmd_infer, "train": cmd_train, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        parser.error("argument --threads: must be at least 1")

    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        file_values = load_config_file(args.config)
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_IO
    setup_logging(out_dir / LOG_FILE)
    logging.info(f"--- eegnn {args.command} (version {VERSION}) ---")

    start = time.perf_counter()
    try:
        code, config, seed, inputs = COMMANDS[args.command](args, parser, file_values)
    except IO_ERRORS as e:
        logging.error(f"Input/output failure: {e}")
        return EXIT_IO
    except FloatingPointError as e:
        logging.error(f"Numerical abort: {e}")
        return EXIT_NUMERIC

    if args.config:
        inputs = list(inputs) + [args.config]
    manifest = RunManifest(args.command, config, seed, VERSION, _digests(inputs), round(time.perf_counter() - start, 3))
    manifest.write(out_dir)
    logging.info(f"Finished {args.command} with exit code {code}; manifest at {out_dir / MANIFEST_FILE}")
    return code


if __name__ == "__main__":
    sys.exit(main())

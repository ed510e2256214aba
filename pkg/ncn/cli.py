"""
Command-line entry point: python -m ncn <command> ...

Commands:
    synth           sample a stochastic block model dataset
    validate        check a dataset directory and print a report
    homophily       print the homophily ratio of a dataset
    preprocess      build and save a grid tensor file
    train           multi-run training from a JSON config (metrics.json + checkpoint/)
    eval            accuracy of a checkpoint on a dataset split
    export-weights  per-node fusion weights of a checkpoint as CSV
    sweep-k         accuracy for every K in the config's k_values
    grid-search     hyper-parameter grid search
    benchmark       preprocessing and epoch time for growing edge counts

Logs go to stderr, summaries to stdout, data to files. Exit codes: 0 success,
1 usage/config error, 2 data error, 3 numeric failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from . import __version__
from .config import SEARCH_GRID, RunSpec, TrainConfig, load_run_spec
from .dataset_io import SbmSpec, SplitSpec, generate_sbm, load_graph, load_splits, make_split, save_graph
from .errors import ConfigError, DataError, NCNError
from .gna_preprocess import GridTensor, PropagationSpec, build_grid, load_grid, read_grid_header, save_grid
from .graph_core import Graph, homophily_ratio
from .ncn_model import NcnParams, export_fusion_weights, write_fusion_weights_csv
from .trainer import benchmark_epoch_time, evaluate, grid_search, run_experiment, sweep_k, write_metrics
from .utils.csv_manager import locked_write, write_rows
from .utils.validate_dataset import DatasetValidator

logger = logging.getLogger("ncn")

GRID_FILE = "grid.ncnt"
CHECKPOINT_DIR = "checkpoint"
METRICS_FILE = "metrics.json"


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors become ConfigError (exit code 1)"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


# ========== HELPERS ==========

def _load_dataset(spec: RunSpec) -> Tuple[Graph, str]:
    if spec.dataset is not None:
        return load_graph(spec.dataset), spec.dataset.name
    return generate_sbm(spec.synthetic), "sbm"


def _fixed_split(spec: RunSpec, graph: Graph) -> Optional[SplitSpec]:
    if not spec.split.from_file:
        return None
    split = load_splits(spec.dataset, graph.n)
    if split is None:
        raise DataError(f"split.from_file is set but {spec.dataset} has no splits.json")
    return split


def _grid_for(graph: Graph, prop: PropagationSpec, path: Path) -> GridTensor:
    """Reuse an existing grid file when its header matches, else build and save one"""
    if path.exists():
        header = read_grid_header(path)
        if (header["K"] == prop.K and header["scheme"] == prop.scheme
                and header["gamma"] == prop.gamma and header["graph_checksum"] == graph.checksum()):
            logger.info("Reusing grid tensor %s", path)
            return load_grid(path, expected_k=prop.K, expected_checksum=graph.checksum())
    save_grid(build_grid(graph, prop), path)
    # fresh and reused grids train on the same stored values
    return load_grid(path, expected_k=prop.K, expected_checksum=graph.checksum())


def _propagation_from_checkpoint(params: NcnParams) -> PropagationSpec:
    config = params.metadata.get("config", {})
    return PropagationSpec(scheme=config.get("scheme", "ppr"), K=params.dims.K, gamma=config.get("gamma", 0.1))


def _checkpoint_grid(args, params: NcnParams, graph: Graph) -> GridTensor:
    if args.grid:
        return load_grid(args.grid, expected_k=params.dims.K, expected_checksum=graph.checksum())
    return build_grid(graph, _propagation_from_checkpoint(params))


def _node_set(graph: Graph, split: Optional[SplitSpec], part: str) -> np.ndarray:
    if part == "all":
        return np.arange(graph.n, dtype=np.int64)
    if split is None:
        raise DataError(f"no split available to select the '{part}' nodes (pass --split)")
    return {"train": split.train_ids, "val": split.val_ids, "test": split.test_ids}[part]


def _split_arg(args, graph: Graph, params: Optional[NcnParams] = None) -> Optional[SplitSpec]:
    """--split file, else the split the checkpoint was trained on, else the dataset's splits.json"""
    if args.split:
        path = Path(args.split)
        if not path.exists():
            raise DataError(f"Split file not found: {path}")
        try:
            return SplitSpec.from_dict(json.loads(path.read_text(encoding='utf-8')), graph.n)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: {e}")
    if params is not None and "split" in params.metadata:
        # only valid on the graph it was drawn for
        if params.metadata.get("graph_checksum") == str(graph.checksum()):
            return SplitSpec.from_dict(params.metadata["split"], graph.n)
        logger.warning("Checkpoint was trained on another graph; using the dataset's own split")
    return load_splits(args.dataset, graph.n)


# ========== COMMANDS ==========

def cmd_synth(args) -> int:
    spec = SbmSpec(n=args.n, c=args.c, p_in=args.p_in, p_out=args.p_out, feat_dim=args.feat_dim,
                   mu=args.mu, sigma=args.sigma, seed=args.seed)
    graph = generate_sbm(spec)
    split = None
    if args.split_seed is not None:
        split = make_split(graph.n, seed=args.split_seed, stratify_labels=graph.y if args.stratify else None)
    save_graph(graph, args.out, split=split, name="sbm")
    print(f"n={graph.n} m={graph.num_edges} d={graph.d} c={graph.c} -> {args.out}")
    return 0


def cmd_validate(args) -> int:
    success = DatasetValidator(Path(args.dataset)).validate_all()
    return 0 if success else DataError.exit_code


def cmd_homophily(args) -> int:
    graph = load_graph(args.dataset)
    print(f"{homophily_ratio(graph, method=args.method):.6f}")
    return 0


def cmd_preprocess(args) -> int:
    graph = load_graph(args.dataset)
    prop = PropagationSpec(scheme=args.scheme, K=args.K, gamma=args.gamma)
    grid = build_grid(graph, prop)
    size = save_grid(grid, args.out)
    print(f"n={grid.n} K={grid.K} d={grid.d} bytes={size} -> {args.out}")
    return 0


def cmd_train(args) -> int:
    spec = load_run_spec(args.config)
    graph, name = _load_dataset(spec)
    cfg = spec.train
    spec.output_dir.mkdir(parents=True, exist_ok=True)

    grid = _grid_for(graph, cfg.propagation(), spec.output_dir / GRID_FILE)
    result = run_experiment(graph, grid, cfg, split=_fixed_split(spec, graph), split_options=spec.split)
    write_metrics(result, graph, spec.output_dir / METRICS_FILE, dataset_name=name)
    result.params.to_checkpoint(
        spec.output_dir / CHECKPOINT_DIR,
        metadata={"config": cfg.to_dict(), "graph_checksum": str(graph.checksum()),
                  "split": result.split.to_dict()},
    )
    print(f"test accuracy {result.mean_test_acc:.4f} +- {result.std_test_acc:.4f} "
          f"over {len(result.runs)} runs -> {spec.output_dir}")
    return 0


def cmd_eval(args) -> int:
    params = NcnParams.from_checkpoint(args.checkpoint)
    graph = load_graph(args.dataset)
    grid = _checkpoint_grid(args, params, graph)
    ids = _node_set(graph, _split_arg(args, graph, params), args.part)
    acc = evaluate(params, grid, graph, ids)
    print(f"{args.part} accuracy {acc:.4f} ({ids.size} nodes)")
    return 0


def cmd_export_weights(args) -> int:
    params = NcnParams.from_checkpoint(args.checkpoint)
    graph = load_graph(args.dataset)
    grid = _checkpoint_grid(args, params, graph)
    ids = _node_set(graph, _split_arg(args, graph, params), args.part)
    rows = export_fusion_weights(params, grid, graph.x, ids)
    write_fusion_weights_csv(rows, args.out)
    a = np.array([(a0, a1) for _, a0, a1 in rows]).reshape(-1, 2)
    print(f"{len(rows)} rows, mean a0={a[:, 0].mean():.4f} a1={a[:, 1].mean():.4f} -> {args.out}")
    return 0


def cmd_sweep_k(args) -> int:
    spec = load_run_spec(args.config)
    graph, _ = _load_dataset(spec)
    rows = sweep_k(graph, spec.train, spec.k_values, split=_fixed_split(spec, graph), split_options=spec.split)
    out = spec.output_dir / "sweep_k.csv"
    write_rows("sweep_k", out, rows)
    for row in rows:
        print(f"K={row['K']:2d}  {row['mean_acc']:.4f} +- {row['std_acc']:.4f}")
    return 0


def cmd_grid_search(args) -> int:
    spec = load_run_spec(args.config)
    graph, _ = _load_dataset(spec)
    best, rows = grid_search(graph, spec.train, spec.grid or SEARCH_GRID,
                             split=_fixed_split(spec, graph), split_options=spec.split)
    write_rows("grid_search", spec.output_dir / "grid_search.csv", rows)
    with locked_write(spec.output_dir / "best_config.json") as f:
        json.dump(best.to_dict(), f, indent=2, sort_keys=True)
    print(f"best: d_prime={best.d_prime} beta={best.beta} K={best.K} lr={best.lr} weight_decay={best.weight_decay}")
    return 0


def cmd_benchmark(args) -> int:
    cfg = TrainConfig(d_prime=args.d_prime, K=args.K, batch_size=args.batch_size).validate()
    rows = benchmark_epoch_time(args.n, args.m, cfg, feat_dim=args.feat_dim, epochs=args.epochs, seed=args.seed)
    write_rows("epoch_benchmark", args.out, rows)
    for row in rows:
        print(f"n={row['n']} m={row['m']}: preprocess {row['preprocess_ms']:.1f} ms, epoch {row['epoch_ms']:.1f} ms")
    return 0


# ========== PARSER ==========

def _add_checkpoint_args(p):
    p.add_argument("--checkpoint", required=True, help="Checkpoint directory written by train")
    p.add_argument("--dataset", required=True, help="Dataset directory")
    p.add_argument("--grid", help="Prebuilt grid tensor file (rebuilt from the checkpoint config if omitted)")
    p.add_argument("--split", help="splits.json to use (defaults to the checkpoint's training split, then the dataset's own)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ncn", description="Neighborhood convolutional network toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("synth", help="Sample a stochastic block model dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--c", type=int, required=True)
    p.add_argument("--p-in", type=float, required=True)
    p.add_argument("--p-out", type=float, required=True)
    p.add_argument("--feat-dim", type=int, required=True)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--split-seed", type=int, help="Also write splits.json drawn with this seed")
    p.add_argument("--stratify", action="store_true", help="Stratify the written split by class")
    p.add_argument("--out", required=True, help="Output dataset directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="Check a dataset directory")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("homophily", help="Print the homophily ratio")
    p.add_argument("dataset")
    p.add_argument("--method", choices=["node", "edge"], default="node")
    p.set_defaults(func=cmd_homophily)

    p = sub.add_parser("preprocess", help="Build a grid tensor file")
    p.add_argument("dataset")
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--scheme", choices=["ppr", "rw"], default="ppr")
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--out", required=True, help="Grid tensor file to write")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="Train from a JSON config")
    p.add_argument("config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Accuracy of a checkpoint")
    _add_checkpoint_args(p)
    p.add_argument("--part", choices=["train", "val", "test", "all"], default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-weights", help="Per-node fusion weights as CSV")
    _add_checkpoint_args(p)
    p.add_argument("--part", choices=["train", "val", "test", "all"], default="all")
    p.add_argument("--out", required=True, help="CSV file to write")
    p.set_defaults(func=cmd_export_weights)

    p = sub.add_parser("sweep-k", help="Accuracy for every K in the config's k_values")
    p.add_argument("config")
    p.set_defaults(func=cmd_sweep_k)

    p = sub.add_parser("grid-search", help="Hyper-parameter grid search")
    p.add_argument("config")
    p.set_defaults(func=cmd_grid_search)

    p = sub.add_parser("benchmark", help="Preprocessing and epoch time as edges grow")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, nargs="+", required=True, help="Edge counts to measure")
    p.add_argument("--feat-dim", type=int, default=16)
    p.add_argument("--d-prime", type=int, default=64)
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--batch-size", type=int, default=1000)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV file to write")
    p.set_defaults(func=cmd_benchmark)

    return parser


def _configure_logging(args):
    level = logging.INFO
    if getattr(args, "verbose", False):
        level = logging.DEBUG
    elif getattr(args, "quiet", False):
        level = logging.WARNING
    logging.basicConfig(
        stream=sys.stderr,
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _configure_logging(args)
        return args.func(args)
    except NCNError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())

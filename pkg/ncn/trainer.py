"""
Training loop, evaluation, multi-run experiments and hyper-parameter sweeps.

Seeding: every run derives four independent streams (split, init, shuffle,
mask) from numpy.random.SeedSequence([master_seed, run_index]).spawn(4), so a
fixed master seed reproduces loss curves and accuracies exactly, whether runs
execute sequentially or on worker threads.
"""

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .config import SEARCH_GRID, SplitOptions, TrainConfig, grid_combinations
from .dataset_io import SplitSpec, generate_random_graph, make_rng, make_split
from .errors import DataError, GridMismatchError
from .gna_preprocess import GridTensor, build_grid, slice_batch
from .graph_core import Graph
from .ncn_model import ModelDims, NcnParams, forward_variant, predict, sample_mask_plan, MaskPlan
from .tensor_autodiff import AdamW, Tape, log_softmax, nll_loss
from .utils.csv_manager import RecordSchema, locked_write

logger = logging.getLogger(__name__)

METRICS_SCHEMA_NAME = "ncn-metrics"
METRICS_VERSION = 1


@dataclass(frozen=True)
class RunSeeds:
    split: int
    init: int
    shuffle: int
    mask: int


def derive_seeds(master_seed: int, run_index: int) -> RunSeeds:
    """Split one master seed into the four per-run random streams"""
    children = np.random.SeedSequence([int(master_seed), int(run_index)]).spawn(4)
    split, init, shuffle, mask = (int(c.generate_state(1, dtype=np.uint64)[0]) for c in children)
    return RunSeeds(split=split, init=init, shuffle=shuffle, mask=mask)


@dataclass
class RunMetrics:
    """Outcome of one training run"""
    run_index: int
    seed: int
    split_seed: Optional[int]
    epochs_run: int = 0
    best_epoch: int = 0
    best_val_acc: float = 0.0
    test_acc: float = 0.0
    wall_time_s: float = 0.0
    train_loss: List[float] = field(default_factory=list)
    val_acc: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class ExperimentResult:
    """All runs of one configuration plus the best run's parameters and split"""
    config: TrainConfig
    runs: List[RunMetrics]
    params: Optional[NcnParams] = None
    split: Optional[SplitSpec] = None

    @property
    def mean_test_acc(self) -> float:
        return float(np.mean([r.test_acc for r in self.runs]))

    @property
    def std_test_acc(self) -> float:
        return float(np.std([r.test_acc for r in self.runs]))

    @property
    def mean_val_acc(self) -> float:
        return float(np.mean([r.best_val_acc for r in self.runs]))

    @property
    def std_val_acc(self) -> float:
        return float(np.std([r.best_val_acc for r in self.runs]))

    def summary(self) -> Dict[str, Any]:
        return {
            "runs": len(self.runs),
            "mean_test_acc": self.mean_test_acc,
            "std_test_acc": self.std_test_acc,
            "mean_val_acc": self.mean_val_acc,
            "std_val_acc": self.std_val_acc,
        }


def accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    """Fraction of predictions equal to their label"""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0:
        raise DataError("accuracy over an empty node set")
    if predictions.shape != labels.shape:
        raise DataError(f"{predictions.shape[0]} predictions for {labels.shape[0]} labels")
    return float(np.mean(predictions == labels))


def evaluate(params: NcnParams, grid: GridTensor, graph: Graph, node_ids: Sequence[int],
             batch_size: int = 1000) -> float:
    """Accuracy on node_ids with masking disabled"""
    ids = np.asarray(node_ids, dtype=np.int64)
    if ids.size == 0:
        raise DataError("cannot evaluate on an empty node set")
    logits = predict(params, grid, graph.x, ids, batch_size=batch_size)
    return accuracy(np.argmax(logits, axis=1), graph.y[ids])


def run_epoch(params: NcnParams, optimizer: AdamW, grid: Optional[GridTensor], graph: Graph,
              train_ids: np.ndarray, plan: Optional[MaskPlan], batch_size: int,
              rng: np.random.Generator) -> float:
    """One pass over shuffled training nodes; returns the mean training loss"""
    order = rng.permutation(train_ids)
    uses_grid = params.dims.variant != "mlp_baseline"
    total = 0.0
    for start in range(0, order.size, batch_size):
        batch = order[start:start + batch_size]
        roles = plan.roles_for(batch) if plan is not None else None
        grid_batch = slice_batch(grid, batch) if uses_grid else None
        with Tape() as tape:
            logits = forward_variant(params, grid_batch, graph.x[batch], roles)
            loss = nll_loss(log_softmax(logits), graph.y[batch])
        optimizer.zero_grad()
        tape.backward(loss)
        optimizer.step()
        total += loss.item() * batch.size
    return total / order.size


def _check_grid(graph: Graph, grid: GridTensor, cfg: TrainConfig):
    if grid.K != cfg.K:
        raise GridMismatchError(f"grid was built with K={grid.K} but the run is configured for K={cfg.K}")
    if grid.n != graph.n or grid.d != graph.d:
        raise GridMismatchError(
            f"grid shape {grid.n} x {grid.d} does not match graph {graph.n} x {graph.d}"
        )


def train(graph: Graph, grid: GridTensor, split: SplitSpec, cfg: TrainConfig,
          seeds: Optional[RunSeeds] = None, run_index: int = 0) -> Tuple[NcnParams, RunMetrics]:
    """
    Train one model with mask training and early stopping on validation accuracy

    Args:
        graph: Labelled graph
        grid: Grid tensor built from graph with cfg.K
        split: Train/val/test node ids
        cfg: Hyper-parameters
        seeds: Random streams; derived from cfg.seed and run_index when omitted
        run_index: Position of this run within an experiment

    Returns:
        (parameters restored to the best validation epoch, RunMetrics)
    """
    cfg.validate()
    _check_grid(graph, grid, cfg)
    split.validate(graph.n)
    train_ids = np.asarray(split.train_ids, dtype=np.int64)
    if train_ids.size == 0:
        raise DataError("training set is empty")
    seeds = seeds or derive_seeds(cfg.seed, run_index)

    start = time.perf_counter()
    dims = ModelDims(d=graph.d, d_prime=cfg.d_prime, K=cfg.K, c=graph.c,
                     hidden_channels=cfg.hidden_channels, variant=cfg.variant)
    params = NcnParams.initialize(dims, make_rng(seeds.init))
    optimizer = AdamW(params.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    shuffle_rng = make_rng(seeds.shuffle)
    mask_rng = make_rng(seeds.mask)
    beta = cfg.beta if cfg.variant == "full" else 0.0

    metrics = RunMetrics(run_index=run_index, seed=cfg.seed, split_seed=split.seed)
    best_snapshot = params.snapshot()
    best_val = -1.0
    stale = 0

    for epoch in range(1, cfg.max_epochs + 1):
        plan = sample_mask_plan(train_ids, beta, mask_rng)
        loss = run_epoch(params, optimizer, grid, graph, train_ids, plan, cfg.batch_size, shuffle_rng)
        val_acc = evaluate(params, grid, graph, split.val_ids, cfg.batch_size)
        metrics.train_loss.append(loss)
        metrics.val_acc.append(val_acc)
        metrics.epochs_run = epoch
        logger.debug("run %d epoch %d: loss=%.4f val_acc=%.4f", run_index, epoch, loss, val_acc)

        if val_acc > best_val:
            best_val = val_acc
            metrics.best_epoch = epoch
            best_snapshot = params.snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.info("run %d: early stop at epoch %d (best epoch %d, val_acc=%.4f)",
                            run_index, epoch, metrics.best_epoch, best_val)
                break

    params.restore(best_snapshot)
    metrics.best_val_acc = best_val
    metrics.test_acc = evaluate(params, grid, graph, split.test_ids, cfg.batch_size)
    metrics.wall_time_s = time.perf_counter() - start
    logger.info("run %d: best epoch %d, val_acc=%.4f, test_acc=%.4f (%.1fs)",
                run_index, metrics.best_epoch, metrics.best_val_acc, metrics.test_acc, metrics.wall_time_s)
    return params, metrics


def _progress_enabled() -> bool:
    return logger.isEnabledFor(logging.INFO)


def _run_split(graph: Graph, seeds: RunSeeds, options: SplitOptions) -> SplitSpec:
    seed = options.seed if options.seed is not None else seeds.split
    labels = graph.y if options.stratify else None
    return make_split(graph.n, options.ratios, seed=seed, stratify_labels=labels)


def run_experiment(graph: Graph, grid: GridTensor, cfg: TrainConfig, split: Optional[SplitSpec] = None,
                   split_options: SplitOptions = SplitOptions()) -> ExperimentResult:
    """
    cfg.runs independent training runs, each with its own seeds and (unless a
    fixed split is given) its own random split
    """
    cfg.validate()

    def one_run(run_index: int) -> Tuple[NcnParams, RunMetrics, SplitSpec]:
        seeds = derive_seeds(cfg.seed, run_index)
        run_split = split if split is not None else _run_split(graph, seeds, split_options)
        params, metrics = train(graph, grid, run_split, cfg, seeds=seeds, run_index=run_index)
        return params, metrics, run_split

    bar = tqdm(total=cfg.runs, desc=f"{cfg.variant} K={cfg.K}", unit="run",
               disable=not _progress_enabled(), leave=False)
    outcomes: List[Tuple[NcnParams, RunMetrics, SplitSpec]] = []
    with bar:
        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                futures = [pool.submit(one_run, r) for r in range(cfg.runs)]
                for future in futures:
                    outcomes.append(future.result())
                    bar.update(1)
        else:
            for r in range(cfg.runs):
                outcomes.append(one_run(r))
                bar.update(1)

    best_params, _, best_split = max(outcomes, key=lambda o: (o[1].best_val_acc, -o[1].run_index))
    result = ExperimentResult(config=cfg, runs=[m for _, m, _ in outcomes], params=best_params,
                              split=best_split)
    logger.info("%s: test accuracy %.4f +- %.4f over %d runs",
                cfg.variant, result.mean_test_acc, result.std_test_acc, len(result.runs))
    return result


def sweep_k(graph: Graph, cfg: TrainConfig, k_values: Sequence[int] = (2, 4, 6, 8, 10),
            split: Optional[SplitSpec] = None,
            split_options: SplitOptions = SplitOptions()) -> List[Dict[str, Any]]:
    """Re-run preprocessing and a full multi-run evaluation for every K"""
    rows = []
    for k in sorted(set(int(k) for k in k_values)):
        k_cfg = cfg.replace(K=k)
        grid = build_grid(graph, k_cfg.propagation())
        result = run_experiment(graph, grid, k_cfg, split=split, split_options=split_options)
        rows.append({"K": k, "mean_acc": result.mean_test_acc,
                     "std_acc": result.std_test_acc, "runs": len(result.runs)})
    return rows


def grid_search(graph: Graph, base_cfg: TrainConfig, grid: Optional[Dict[str, Sequence[Any]]] = None,
                split: Optional[SplitSpec] = None,
                split_options: SplitOptions = SplitOptions()) -> Tuple[TrainConfig, List[Dict[str, Any]]]:
    """
    Score every combination of the hyper-parameter grid by mean validation accuracy

    Returns:
        (best configuration, one row per combination in grid order)
    """
    grid = grid or SEARCH_GRID
    grids: Dict[int, GridTensor] = {}
    rows = []
    best_cfg, best_score = None, -1.0

    combos = grid_combinations(grid)
    for combo in tqdm(combos, desc="grid search", unit="config", disable=not _progress_enabled()):
        cfg = base_cfg.replace(**combo)
        if cfg.K not in grids:
            grids[cfg.K] = build_grid(graph, cfg.propagation())
        result = run_experiment(graph, grids[cfg.K], cfg, split=split, split_options=split_options)
        rows.append({
            "d_prime": cfg.d_prime, "beta": cfg.beta, "K": cfg.K, "lr": cfg.lr,
            "weight_decay": cfg.weight_decay,
            "mean_val_acc": result.mean_val_acc, "std_val_acc": result.std_val_acc,
            "mean_test_acc": result.mean_test_acc, "std_test_acc": result.std_test_acc,
        })
        if result.mean_val_acc > best_score:
            best_cfg, best_score = cfg, result.mean_val_acc

    logger.info("Best configuration: d'=%d beta=%g K=%d lr=%g wd=%g (val_acc=%.4f)",
                best_cfg.d_prime, best_cfg.beta, best_cfg.K, best_cfg.lr, best_cfg.weight_decay, best_score)
    return best_cfg, rows


def benchmark_epoch_time(n: int, m_values: Sequence[int], cfg: TrainConfig, feat_dim: int = 16,
                         num_classes: int = 4, epochs: int = 3, seed: int = 0) -> List[Dict[str, Any]]:
    """
    Time preprocessing and training epochs on random graphs with n nodes and m edges

    Grids are built before the training clock starts; epoch_ms is the median
    over `epochs` full passes with every node in the training set.
    """
    rows = []
    for m in m_values:
        graph = generate_random_graph(n, int(m), feat_dim, num_classes, seed=seed)
        start = time.perf_counter()
        grid = build_grid(graph, cfg.propagation())
        preprocess_ms = 1000 * (time.perf_counter() - start)

        dims = ModelDims(d=feat_dim, d_prime=cfg.d_prime, K=cfg.K, c=num_classes,
                         hidden_channels=cfg.hidden_channels, variant=cfg.variant)
        params = NcnParams.initialize(dims, make_rng(seed))
        optimizer = AdamW(params.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
        rng = make_rng(seed)
        ids = np.arange(n, dtype=np.int64)

        times = []
        for _ in range(epochs):
            plan = sample_mask_plan(ids, cfg.beta if cfg.variant == "full" else 0.0, rng)
            start = time.perf_counter()
            run_epoch(params, optimizer, grid, graph, ids, plan, cfg.batch_size, rng)
            times.append(1000 * (time.perf_counter() - start))

        rows.append({"n": n, "m": graph.num_edges, "preprocess_ms": preprocess_ms,
                     "epoch_ms": float(np.median(times))})
        logger.info("n=%d m=%d: preprocess %.1f ms, epoch %.1f ms", n, graph.num_edges, preprocess_ms, rows[-1]["epoch_ms"])
    return rows


def metrics_document(result: ExperimentResult, graph: Graph, dataset_name: Optional[str] = None) -> Dict[str, Any]:
    return {
        "schema": METRICS_SCHEMA_NAME,
        "version": METRICS_VERSION,
        "config": result.config.to_dict(),
        "dataset": {"name": dataset_name, "n": graph.n, "m": graph.num_edges,
                    "d": graph.d, "c": graph.c},
        "runs": [r.to_dict() for r in result.runs],
        "summary": result.summary(),
    }


def write_metrics(result: ExperimentResult, graph: Graph, path, dataset_name: Optional[str] = None) -> Dict[str, Any]:
    """Validate the metrics document against the shipped schema and write it as JSON"""
    document = metrics_document(result, graph, dataset_name)
    problems = RecordSchema.from_file().validate(document)
    if problems:
        raise DataError("metrics document violates its schema: " + "; ".join(problems))
    with locked_write(path) as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")
    return document

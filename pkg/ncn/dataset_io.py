"""
Dataset loading, synthetic graph generation and train/val/test splits.

Dataset directory format:
    edges.csv     one "src,dst" integer pair per line, 0-indexed
    features.csv  n lines of d comma-separated reals
    labels.csv    n lines, one integer each
    splits.json   optional {"train": [...], "val": [...], "test": [...]}
    meta.json     optional {"num_classes": c, "name": "..."}

Every randomized routine draws from numpy.random.Generator(PCG64(seed)) with
a 64-bit unsigned seed, so outputs reproduce across machines and builds.
"""

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DataError, DatasetFormatError
from .graph_core import Graph
from .utils.csv_manager import format_value, locked_write

logger = logging.getLogger(__name__)

EDGES_FILE = "edges.csv"
FEATURES_FILE = "features.csv"
LABELS_FILE = "labels.csv"
SPLITS_FILE = "splits.json"
META_FILE = "meta.json"

DEFAULT_RATIOS = (0.6, 0.2, 0.2)
SEED_MAX = 2 ** 64 - 1


def make_rng(seed: int) -> np.random.Generator:
    """The toolkit's fixed generator: PCG64 seeded with a 64-bit unsigned integer"""
    if not isinstance(seed, (int, np.integer)) or not 0 <= int(seed) <= SEED_MAX:
        raise ConfigError(f"seed must be an integer in [0, 2^64), got {seed!r}")
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True, eq=False)
class SplitSpec:
    """Disjoint train/val/test node index lists"""
    train_ids: np.ndarray
    val_ids: np.ndarray
    test_ids: np.ndarray
    seed: Optional[int] = None
    ratios: Tuple[float, float, float] = DEFAULT_RATIOS

    def validate(self, n: int):
        parts = {"train": self.train_ids, "val": self.val_ids, "test": self.test_ids}
        seen = set()
        for name, ids in parts.items():
            ids = np.asarray(ids)
            if ids.size and (ids.min() < 0 or ids.max() >= n):
                raise DatasetFormatError(f"{name} split holds node ids outside [0, {n})")
            overlap = seen.intersection(ids.tolist())
            if overlap:
                raise DatasetFormatError(f"{name} split overlaps another split at {sorted(overlap)[:5]}")
            if len(set(ids.tolist())) != ids.size:
                raise DatasetFormatError(f"{name} split contains repeated ids")
            seen.update(ids.tolist())

    def to_dict(self) -> dict:
        return {
            "train": [int(i) for i in self.train_ids],
            "val": [int(i) for i in self.val_ids],
            "test": [int(i) for i in self.test_ids],
        }

    @classmethod
    def from_dict(cls, payload: dict, n: int) -> "SplitSpec":
        try:
            split = cls(
                train_ids=np.asarray(payload["train"], dtype=np.int64),
                val_ids=np.asarray(payload["val"], dtype=np.int64),
                test_ids=np.asarray(payload["test"], dtype=np.int64),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetFormatError(f"malformed split description: {e}")
        split.validate(n)
        return split


@dataclass(frozen=True)
class SbmSpec:
    """Stochastic block model with Gaussian class-mean features"""
    n: int
    c: int
    p_in: float
    p_out: float
    feat_dim: int
    mu: float = 1.0
    sigma: float = 1.0
    seed: int = 0

    def validate(self):
        if self.n < 1 or self.c < 1 or self.feat_dim < 1:
            raise ConfigError("SBM node count, class count and feature dimension must be positive")
        if self.c > self.n:
            raise ConfigError("SBM needs at least one node per class")
        for name in ("p_in", "p_out"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {p}")
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")
        make_rng(self.seed)


# ========== LOADING ==========

def _read_csv_rows(path: Path) -> List[Tuple[int, List[str]]]:
    if not path.exists():
        raise DatasetFormatError(f"Missing dataset file: {path}")
    rows = []
    with open(path, 'r', newline='', encoding='utf-8') as f:
        for line_no, row in enumerate(csv.reader(f), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            rows.append((line_no, row))
    return rows


def _parse_int(cell: str, path: Path, line_no: int) -> int:
    try:
        return int(cell.strip())
    except ValueError:
        raise DatasetFormatError(f"{path}:{line_no}: non-numeric cell {cell!r}")


def _parse_real(cell: str, path: Path, line_no: int) -> float:
    try:
        value = float(cell.strip())
    except ValueError:
        raise DatasetFormatError(f"{path}:{line_no}: non-numeric cell {cell!r}")
    if not math.isfinite(value):
        raise DatasetFormatError(f"{path}:{line_no}: non-finite value {cell!r}")
    return value


def _read_features(path: Path) -> np.ndarray:
    rows = _read_csv_rows(path)
    width = None
    matrix = []
    for line_no, row in rows:
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DatasetFormatError(f"{path}:{line_no}: expected {width} features, got {len(row)}")
        matrix.append([_parse_real(cell, path, line_no) for cell in row])
    if not matrix:
        raise DatasetFormatError(f"{path}: no feature rows")
    return np.asarray(matrix, dtype=np.float64)


def _read_labels(path: Path, n: int) -> np.ndarray:
    rows = _read_csv_rows(path)
    labels = []
    for line_no, row in rows:
        if len(row) != 1:
            raise DatasetFormatError(f"{path}:{line_no}: expected one label per line")
        label = _parse_int(row[0], path, line_no)
        if label < 0:
            raise DatasetFormatError(f"{path}:{line_no}: label {label} out of range")
        labels.append(label)
    if len(labels) != n:
        raise DatasetFormatError(f"{path}: expected {n} labels (one per feature row), got {len(labels)}")
    return np.asarray(labels, dtype=np.int64)


def _read_edges(path: Path, n: int) -> np.ndarray:
    rows = _read_csv_rows(path)
    edges = np.empty((len(rows), 2), dtype=np.int64)
    for k, (line_no, row) in enumerate(rows):
        if len(row) != 2:
            raise DatasetFormatError(f"{path}:{line_no}: expected 'src,dst'")
        src = _parse_int(row[0], path, line_no)
        dst = _parse_int(row[1], path, line_no)
        if not (0 <= src < n and 0 <= dst < n):
            raise DatasetFormatError(f"{path}:{line_no}: node index outside [0, {n})")
        edges[k] = (src, dst)
    return edges


def _read_meta(dir_path: Path) -> dict:
    meta_path = dir_path / META_FILE
    if not meta_path.exists():
        return {}
    try:
        return json.loads(meta_path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{meta_path}: {e}")


def load_graph(dir_path) -> Graph:
    """
    Load a graph from a dataset directory

    Args:
        dir_path: Directory holding edges.csv, features.csv and labels.csv

    Returns:
        Graph with symmetrized, deduplicated edges and self-loops stripped
    """
    dir_path = Path(dir_path)
    if not dir_path.is_dir():
        raise DatasetFormatError(f"Dataset directory not found: {dir_path}")

    x = _read_features(dir_path / FEATURES_FILE)
    n = x.shape[0]
    y = _read_labels(dir_path / LABELS_FILE, n)
    edges = _read_edges(dir_path / EDGES_FILE, n)

    meta = _read_meta(dir_path)
    num_classes = meta.get("num_classes")
    if num_classes is not None and y.size and y.max() >= num_classes:
        raise DatasetFormatError(f"{dir_path / LABELS_FILE}: label {int(y.max())} out of range [0, {num_classes})")

    graph = Graph.from_edges(n, edges, x, y, num_classes=num_classes)
    duplicates = edges.shape[0] - int(np.sum(edges[:, 0] == edges[:, 1])) - graph.num_edges
    if duplicates > 0:
        logger.warning("Merged %d duplicate or reciprocal edge rows in %s", duplicates, dir_path)

    logger.info("Loaded %s: n=%d m=%d d=%d c=%d", dir_path, graph.n, graph.num_edges, graph.d, graph.c)
    return graph


def load_splits(dir_path, n: int) -> Optional[SplitSpec]:
    """Read splits.json if the dataset ships one"""
    path = Path(dir_path) / SPLITS_FILE
    if not path.exists():
        return None
    try:
        payload = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{path}: {e}")
    return SplitSpec.from_dict(payload, n)


def save_graph(g: Graph, dir_path, split: Optional[SplitSpec] = None, name: Optional[str] = None):
    """Write a graph in the dataset directory format (inverse of load_graph)"""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)

    with locked_write(dir_path / EDGES_FILE) as f:
        writer = csv.writer(f, lineterminator='\n')
        for i, j in g.undirected_edges():
            writer.writerow([int(i), int(j)])

    with locked_write(dir_path / FEATURES_FILE) as f:
        writer = csv.writer(f, lineterminator='\n')
        for row in g.x:
            writer.writerow([format_value(float(v)) for v in row])

    with locked_write(dir_path / LABELS_FILE) as f:
        writer = csv.writer(f, lineterminator='\n')
        for label in g.y:
            writer.writerow([int(label)])

    meta = {"num_classes": g.num_classes}
    if name:
        meta["name"] = name
    with locked_write(dir_path / META_FILE) as f:
        json.dump(meta, f, indent=2, sort_keys=True)

    if split is not None:
        with locked_write(dir_path / SPLITS_FILE) as f:
            json.dump(split.to_dict(), f)


# ========== SYNTHETIC GRAPHS ==========

def generate_sbm(spec: SbmSpec) -> Graph:
    """
    Sample a stochastic block model graph with Gaussian class-mean features.

    Classes occupy contiguous, equally sized (within one node) blocks of node
    ids. Node pairs are visited row by row and connected with probability p_in
    (same class) or p_out; afterwards a node of class k draws features from a
    spherical Gaussian with mean mu * e_(k mod d) and standard deviation sigma.
    """
    spec.validate()
    rng = make_rng(spec.seed)
    n = spec.n

    y = (np.arange(n, dtype=np.int64) * spec.c) // n

    sources = []
    targets = []
    for i in range(n - 1):
        j = np.arange(i + 1, n, dtype=np.int64)
        p = np.where(y[j] == y[i], spec.p_in, spec.p_out)
        hit = j[rng.random(j.size) < p]
        sources.append(np.full(hit.size, i, dtype=np.int64))
        targets.append(hit)
    if sources:
        edges = np.stack([np.concatenate(sources), np.concatenate(targets)], axis=1)
    else:
        edges = np.empty((0, 2), dtype=np.int64)

    x = spec.sigma * rng.standard_normal((n, spec.feat_dim))
    x[np.arange(n), y % spec.feat_dim] += spec.mu

    graph = Graph.from_edges(n, edges, x, y, num_classes=spec.c)
    logger.info("Generated SBM: n=%d m=%d c=%d p_in=%g p_out=%g", n, graph.num_edges, spec.c, spec.p_in, spec.p_out)
    return graph


def generate_random_graph(n: int, m: int, d: int, c: int, seed: int = 0, mu: float = 1.0) -> Graph:
    """
    Uniform random graph with exactly m distinct undirected edges.

    Labels are drawn uniformly from [0, c); features are unit Gaussian noise
    around mu * e_(label mod d).
    """
    max_edges = n * (n - 1) // 2
    if m > max_edges:
        raise ConfigError(f"cannot place {m} edges on {n} nodes (at most {max_edges})")
    rng = make_rng(seed)

    chosen = np.empty((0, 2), dtype=np.int64)
    while chosen.shape[0] < m:
        need = m - chosen.shape[0]
        pairs = rng.integers(0, n, size=(2 * need + 16, 2))
        pairs = pairs[pairs[:, 0] != pairs[:, 1]]
        pairs = np.sort(pairs, axis=1)
        merged = np.concatenate([chosen, pairs])
        # keep first occurrences so earlier draws win
        _, first = np.unique(merged, axis=0, return_index=True)
        chosen = merged[np.sort(first)][:m]

    y = rng.integers(0, c, size=n)
    x = rng.standard_normal((n, d))
    x[np.arange(n), y % d] += mu
    return Graph.from_edges(n, chosen, x, y, num_classes=c)


# ========== SPLITS ==========

def _part_sizes(n: int, ratios: Sequence[float]) -> Tuple[int, int, int]:
    """Half-up rounded part sizes; every part keeps at least one node"""
    n_train = int(math.floor(ratios[0] * n + 0.5))
    n_train = min(max(n_train, 1), n - 2)
    n_val = int(math.floor(ratios[1] * n + 0.5))
    n_val = min(max(n_val, 1), n - n_train - 1)
    return n_train, n_val, n - n_train - n_val


def _apportion(quotas: np.ndarray, total: int, lo: np.ndarray, hi: np.ndarray) -> Optional[np.ndarray]:
    """
    Largest-remainder rounding: integers in [lo, hi] summing to total, or None
    when the bounds cannot reach it. Ties go to the lower class index.
    """
    lo, hi = lo.astype(np.int64), hi.astype(np.int64)
    if lo.sum() > total or hi.sum() < total:
        return None
    counts = lo.copy()
    order = np.argsort(-(quotas - np.floor(quotas)), kind="stable")
    while counts.sum() < total:
        for k in order:
            if counts.sum() == total:
                break
            if counts[k] < hi[k]:
                counts[k] += 1
    return counts


def _stratified_counts(class_sizes: np.ndarray, sizes: Tuple[int, int, int]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-class train and val counts whose totals equal the global part sizes.

    Train is rounded first; then train+val is rounded per class so that val and
    test also stay within one node of their class quota whenever the totals allow.
    """
    n = int(class_sizes.sum())
    n_train, n_val, _ = sizes
    q_train = class_sizes * n_train / n
    q_cum = class_sizes * (n_train + n_val) / n
    q_val = q_cum - q_train

    train = _apportion(q_train, n_train, np.floor(q_train), np.ceil(q_train))
    cum = _apportion(q_cum, n_train + n_val,
                     np.maximum(np.floor(q_cum), train + np.floor(q_val)),
                     np.minimum(np.ceil(q_cum), train + np.ceil(q_val)))
    if cum is None:
        cum = _apportion(q_cum, n_train + n_val, train, class_sizes)
    return train, cum - train


def make_split(n: int, ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0,
               stratify_labels: Optional[Sequence[int]] = None) -> SplitSpec:
    """
    Randomly partition node ids into train/val/test

    Args:
        n: Node count (at least 3)
        ratios: Train/val/test fractions summing to 1
        seed: 64-bit unsigned seed
        stratify_labels: When given, the global part sizes are shared out over
            the classes in proportion to their size

    Returns:
        SplitSpec; identical for identical arguments
    """
    if n < 3:
        raise DataError(f"need at least 3 nodes to split, got {n}")
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    rng = make_rng(seed)
    sizes = _part_sizes(n, ratios)

    if stratify_labels is None:
        perm = rng.permutation(n)
        n_train, n_val, _ = sizes
        train, val, test = perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]
    else:
        labels = np.asarray(stratify_labels)
        if labels.shape != (n,):
            raise DataError(f"expected {n} labels for stratification, got {labels.shape[0]}")
        classes, class_sizes = np.unique(labels, return_counts=True)
        k_train, k_val = _stratified_counts(class_sizes, sizes)
        parts = ([], [], [])
        for i, k in enumerate(classes):
            members = rng.permutation(np.flatnonzero(labels == k))
            cut = k_train[i] + k_val[i]
            parts[0].append(members[:k_train[i]])
            parts[1].append(members[k_train[i]:cut])
            parts[2].append(members[cut:])
        train, val, test = (rng.permutation(np.concatenate(p)) for p in parts)

    return SplitSpec(
        train_ids=train.astype(np.int64),
        val_ids=val.astype(np.int64),
        test_ids=test.astype(np.int64),
        seed=int(seed),
        ratios=ratios,
    )

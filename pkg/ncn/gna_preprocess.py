"""
Grid-like neighborhood aggregation.

Before any training, every node v gets a (K+1) x d matrix whose row k is the
k-step aggregation B^(k)_v. Rows are ordered by ascending propagation step and
row 0 is the node's own features.

Grid tensor file layout (little-endian):
    magic "NCNT" | u32 version=1 | u64 n | u32 K | u32 d | u8 scheme | f64 gamma
    | u64 graph checksum | n*(K+1)*d f32 values, node-major, then hop, then feature
"""

import logging
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, GridFormatError, GridMismatchError, NumericError, ShapeError
from .graph_core import Graph, NormAdj, normalize_adjacency, sparse_matvec_rows
from .utils.csv_manager import locked_write

logger = logging.getLogger(__name__)

GRID_MAGIC = b"NCNT"
GRID_VERSION = 1
_HEADER = struct.Struct("<4sIQIIBdQ")

SCHEMES = {"ppr": 0, "rw": 1}
_SCHEME_NAMES = {tag: name for name, tag in SCHEMES.items()}


@dataclass(frozen=True)
class PropagationSpec:
    """
    How node features are spread over the graph.

    "ppr": B^(k) = (1 - gamma) * A_hat B^(k-1) + gamma * X (truncated personalized PageRank)
    "rw":  B^(k) = A_hat B^(k-1) (plain random walk, gamma ignored)
    """
    scheme: str = "ppr"
    K: int = 4
    gamma: float = 0.1

    def validate(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"Unknown propagation scheme: {self.scheme} (expected one of {sorted(SCHEMES)})")
        if not isinstance(self.K, (int, np.integer)) or self.K < 1:
            raise ConfigError(f"propagation step K must be a positive integer, got {self.K}")
        if self.scheme == "ppr" and not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"teleport probability gamma must lie in (0, 1], got {self.gamma}")


@dataclass(frozen=True, eq=False)
class GridTensor:
    """Stacked multi-hop aggregations, shape n x (K+1) x d"""
    data: np.ndarray
    K: int
    scheme: str
    gamma: float
    graph_checksum: int

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[2]

    def hop(self, k: int) -> np.ndarray:
        """The k-step aggregation B^(k), shape n x d"""
        return self.data[:, k, :]


def propagate(adj: NormAdj, x: np.ndarray, spec: PropagationSpec, graph_checksum: int = 0) -> GridTensor:
    """
    Compute B^(0..K) with the propagation recurrence.

    The recurrence telescopes to the closed form
    S^(k) = (1-gamma)^k A^k + gamma * sum_{i<k} (1-gamma)^i A^i, so no power of
    the adjacency is ever materialized: each step costs one sparse product.
    """
    spec.validate()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != adj.n:
        raise ShapeError(f"features must be {adj.n} x d, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("input features contain non-finite values")

    slices = [x.copy()]
    current = x
    for _ in range(spec.K):
        spread = sparse_matvec_rows(adj, current)
        if spec.scheme == "ppr":
            current = (1.0 - spec.gamma) * spread + spec.gamma * x
        else:
            current = spread
        slices.append(current)

    data = np.stack(slices, axis=1)
    data.flags.writeable = False
    return GridTensor(data=data, K=int(spec.K), scheme=spec.scheme,
                      gamma=float(spec.gamma), graph_checksum=int(graph_checksum))


def build_grid(graph: Graph, spec: PropagationSpec) -> GridTensor:
    """Normalize, propagate and stamp the graph checksum in one step"""
    start = time.perf_counter()
    grid = propagate(normalize_adjacency(graph), graph.x, spec, graph_checksum=graph.checksum())
    logger.info("Propagated %s K=%d over n=%d m=%d in %.1f ms",
                spec.scheme, spec.K, graph.n, graph.num_edges, 1000 * (time.perf_counter() - start))
    return grid


def save_grid(t: GridTensor, path) -> int:
    """Write a grid tensor file; returns the file size in bytes"""
    header = _HEADER.pack(GRID_MAGIC, GRID_VERSION, t.n, t.K, t.d,
                          SCHEMES[t.scheme], float(t.gamma), int(t.graph_checksum))
    payload = np.ascontiguousarray(t.data, dtype='<f4')
    with locked_write(path, binary=True) as f:
        f.write(header)
        f.write(payload.tobytes())
    return _HEADER.size + payload.nbytes


def read_grid_header(path) -> dict:
    """Parse and check the fixed-size header of a grid tensor file"""
    path = Path(path)
    if not path.exists():
        raise GridFormatError(f"Grid file not found: {path}")
    with open(path, 'rb') as f:
        raw = f.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise GridFormatError(f"{path}: truncated header")
    magic, version, n, k, d, scheme_tag, gamma, checksum = _HEADER.unpack(raw)
    if magic != GRID_MAGIC:
        raise GridFormatError(f"{path}: bad magic {magic!r}")
    if version != GRID_VERSION:
        raise GridFormatError(f"{path}: unsupported version {version}")
    if scheme_tag not in _SCHEME_NAMES:
        raise GridFormatError(f"{path}: unknown scheme tag {scheme_tag}")
    return {"n": n, "K": k, "d": d, "scheme": _SCHEME_NAMES[scheme_tag],
            "gamma": gamma, "graph_checksum": checksum}


def load_grid(path, expected_k: Optional[int] = None,
              expected_checksum: Optional[int] = None) -> GridTensor:
    """
    Read a grid tensor file

    Args:
        path: File written by save_grid
        expected_k: Propagation step the caller is configured for
        expected_checksum: Checksum of the graph the caller will train on

    Returns:
        GridTensor holding float32 data
    """
    path = Path(path)
    header = read_grid_header(path)
    n, k, d = header["n"], header["K"], header["d"]

    expected_bytes = _HEADER.size + 4 * n * (k + 1) * d
    actual_bytes = path.stat().st_size
    if actual_bytes != expected_bytes:
        raise GridFormatError(f"{path}: expected {expected_bytes} bytes, found {actual_bytes} (truncated or corrupt)")

    if expected_k is not None and k != expected_k:
        raise GridMismatchError(f"{path} was built with K={k} but the run is configured for K={expected_k}")
    if expected_checksum is not None and header["graph_checksum"] != expected_checksum:
        raise GridMismatchError(f"{path} was built from a different graph (checksum mismatch)")

    with open(path, 'rb') as f:
        f.seek(_HEADER.size)
        data = np.frombuffer(f.read(), dtype='<f4').astype(np.float32).reshape(n, k + 1, d)
    if not np.all(np.isfinite(data)):
        raise GridFormatError(f"{path}: non-finite values in grid data")
    data.flags.writeable = False
    return GridTensor(data=data, K=k, scheme=header["scheme"], gamma=header["gamma"],
                      graph_checksum=header["graph_checksum"])


def slice_batch(t: GridTensor, node_ids: Sequence[int]) -> np.ndarray:
    """Gather the grid rows of node_ids in the given order, shape |B| x (K+1) x d"""
    ids = np.asarray(node_ids, dtype=np.int64).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= t.n):
        raise DataError(f"node id outside [0, {t.n})")
    return t.data[ids]

"""
Sparse undirected attributed graphs, symmetric normalization and homophily.

All arithmetic here is float64. Graph and NormAdj are immutable: their arrays
are flagged read-only after construction.
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError, GraphValidationError, ShapeError

logger = logging.getLogger(__name__)


def _frozen(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class Graph:
    """
    Undirected attributed graph in CSR form.

    The neighbors of node i are indices[indptr[i]:indptr[i+1]], sorted ascending
    without repeats; adjacency is symmetric and carries no self-loops.
    """
    indptr: np.ndarray
    indices: np.ndarray
    x: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        indptr = np.array(self.indptr, dtype=np.int64)
        indices = np.array(self.indices, dtype=np.int64)
        x = np.array(self.x, dtype=np.float64)
        y = np.array(self.y, dtype=np.int64)
        object.__setattr__(self, "indptr", _frozen(indptr))
        object.__setattr__(self, "indices", _frozen(indices))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "y", _frozen(y))
        self._validate()

    def _validate(self):
        n = self.x.shape[0] if self.x.ndim == 2 else -1
        if self.x.ndim != 2:
            raise GraphValidationError(f"features must be a 2-D matrix, got shape {self.x.shape}")
        if self.indptr.shape != (n + 1,) or self.indptr[0] != 0:
            raise GraphValidationError("row offsets must have n+1 entries starting at 0")
        if np.any(np.diff(self.indptr) < 0) or self.indptr[-1] != self.indices.shape[0]:
            raise GraphValidationError("row offsets must be non-decreasing and end at the edge count")
        if self.y.shape != (n,):
            raise GraphValidationError(f"expected {n} labels, got {self.y.shape[0]}")
        if self.num_classes < 1:
            raise GraphValidationError("class count must be positive")
        if n and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise GraphValidationError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.x)):
            raise GraphValidationError("features contain non-finite values")
        if self.indices.size:
            if self.indices.min() < 0 or self.indices.max() >= n:
                raise GraphValidationError("neighbor index out of range")

            rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(self.indptr))
            if np.any(rows == self.indices):
                raise GraphValidationError("self-loops are not allowed")

            # sorted ascending, no repeats within each row
            same_row = rows[1:] == rows[:-1]
            if np.any(same_row & (self.indices[1:] <= self.indices[:-1])):
                raise GraphValidationError("neighbor lists must be sorted without repeats")

            adj = sp.csr_matrix(
                (np.ones(self.indices.size), self.indices, self.indptr), shape=(n, n)
            )
            if (adj != adj.T).nnz:
                raise GraphValidationError("adjacency is not symmetric")

    @classmethod
    def from_edges(cls, n: int, edges, x, y, num_classes: Optional[int] = None) -> "Graph":
        """
        Build a graph from an arbitrary edge list.

        Edges are symmetrized, duplicates merged and self-loops stripped.

        Args:
            n: Node count
            edges: Integer array of shape (m, 2)
            x: Feature matrix, n x d
            y: Label vector, length n
            num_classes: Class count; defaults to max(y) + 1

        Returns:
            Valid Graph
        """
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise GraphValidationError(f"edge endpoint outside [0, {n})")

        loops = edges[:, 0] == edges[:, 1]
        if np.any(loops):
            logger.warning("Stripped %d self-loop rows", int(loops.sum()))
        edges = edges[~loops]

        src = np.concatenate([edges[:, 0], edges[:, 1]])
        dst = np.concatenate([edges[:, 1], edges[:, 0]])
        adj = sp.csr_matrix((np.ones(src.size), (src, dst)), shape=(n, n))
        adj.sum_duplicates()
        adj.sort_indices()

        y = np.asarray(y, dtype=np.int64)
        if num_classes is None:
            num_classes = int(y.max()) + 1 if y.size else 1
        return cls(adj.indptr, adj.indices, x, y, int(num_classes))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def c(self) -> int:
        return self.num_classes

    @property
    def num_edges(self) -> int:
        """Undirected edge count"""
        return self.indices.shape[0] // 2

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def adjacency(self) -> sp.csr_matrix:
        """Unweighted adjacency matrix A"""
        return sp.csr_matrix(
            (np.ones(self.indices.size), self.indices, self.indptr), shape=(self.n, self.n)
        )

    def undirected_edges(self) -> np.ndarray:
        """Each undirected edge once as (i, j) with i < j, in CSR order"""
        rows = np.repeat(np.arange(self.n, dtype=np.int64), self.degrees())
        keep = rows < self.indices
        return np.stack([rows[keep], self.indices[keep]], axis=1)

    def checksum(self) -> int:
        """64-bit content fingerprint of structure, features and labels"""
        digest = hashlib.sha256()
        for array in (self.indptr, self.indices, self.x, self.y):
            digest.update(np.ascontiguousarray(array).astype(array.dtype.newbyteorder('<')).tobytes())
        digest.update(int(self.num_classes).to_bytes(8, 'little'))
        return int.from_bytes(digest.digest()[:8], 'little')


@dataclass(frozen=True, eq=False)
class NormAdj:
    """Symmetrically normalized adjacency D^{-1/2} A D^{-1/2} plus the degree vector"""
    matrix: sp.csr_matrix
    degrees: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def normalize_adjacency(g: Graph) -> NormAdj:
    """
    Compute the symmetric normalization of the adjacency matrix.

    Isolated nodes get all-zero rows and columns instead of a division by zero.
    Self-loops are not added.
    """
    deg = g.degrees().astype(np.float64)
    inv_sqrt = np.zeros_like(deg)
    nonzero = deg > 0
    inv_sqrt[nonzero] = 1.0 / np.sqrt(deg[nonzero])

    rows = np.repeat(np.arange(g.n, dtype=np.int64), g.degrees())
    values = inv_sqrt[rows] * inv_sqrt[g.indices]

    matrix = sp.csr_matrix((values, g.indices.copy(), g.indptr.copy()), shape=(g.n, g.n))
    _frozen(matrix.data)
    return NormAdj(matrix=matrix, degrees=_frozen(deg))


def sparse_matvec_rows(adj: NormAdj, m: np.ndarray) -> np.ndarray:
    """
    Multiply the normalized adjacency by a dense matrix.

    result[i] = sum over neighbors j of adj[i, j] * m[j]; per-row accumulation
    follows neighbor-list order.
    """
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != adj.n:
        raise ShapeError(f"expected a dense matrix with {adj.n} rows, got shape {m.shape}")
    return np.asarray(adj.matrix @ m)


def homophily_ratio(g: Graph, method: str = "node") -> float:
    """
    Homophily level of a labelled graph.

    "node": mean over nodes of the fraction of neighbors sharing the node's label.
    Zero-degree nodes are excluded from the mean.
    "edge": fraction of edges whose endpoints share a label.
    """
    deg = g.degrees()
    rows = np.repeat(np.arange(g.n, dtype=np.int64), deg)
    same = (g.y[rows] == g.y[g.indices]).astype(np.float64)

    if method == "edge":
        if same.size == 0:
            raise DataError("homophily is undefined for a graph without edges")
        return float(same.mean())
    if method != "node":
        raise ConfigError(f"Unknown homophily method: {method}")

    covered = deg > 0
    if not np.any(covered):
        raise DataError("homophily is undefined when every node is isolated")
    same_per_node = np.bincount(rows, weights=same, minlength=g.n)
    return float(np.mean(same_per_node[covered] / deg[covered]))


def class_homophily_report(g: Graph) -> Dict[int, float]:
    """Mean same-label neighbor fraction per class (non-isolated nodes only)"""
    deg = g.degrees()
    rows = np.repeat(np.arange(g.n, dtype=np.int64), deg)
    same = (g.y[rows] == g.y[g.indices]).astype(np.float64)
    same_per_node = np.bincount(rows, weights=same, minlength=g.n)

    report = {}
    for k in range(g.num_classes):
        members = (g.y == k) & (deg > 0)
        if np.any(members):
            report[k] = float(np.mean(same_per_node[members] / deg[members]))
    return report

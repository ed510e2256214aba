#!/usr/bin/env python3
"""
Dataset Validation Tool

Checks a dataset directory (edges.csv, features.csv, labels.csv and the
optional splits.json / meta.json) and reports every problem found instead of
stopping at the first one.

Usage:
    python3 -m ncn.utils.validate_dataset --data-dir data/cora
"""

import argparse
import csv
import json
import sys
from collections import Counter
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from ..dataset_io import EDGES_FILE, FEATURES_FILE, LABELS_FILE, META_FILE, SPLITS_FILE
from ..errors import NCNError
from ..graph_core import Graph, class_homophily_report, homophily_ratio

MAX_LISTED = 5


class ValidationReport:
    """Track validation results"""

    def __init__(self):
        self.errors = []
        self.warnings = []
        self.info = []
        self.file_stats = {}

    def add_error(self, message: str):
        self.errors.append(f"ERROR: {message}")

    def add_warning(self, message: str):
        self.warnings.append(f"WARNING: {message}")

    def add_info(self, message: str):
        self.info.append(f"INFO: {message}")

    def add_file_stats(self, file_name: str, row_count: int, file_size: int):
        self.file_stats[file_name] = {"rows": row_count, "size": file_size}

    def print_report(self):
        print("\n" + "=" * 70)
        print("DATASET VALIDATION REPORT")
        print("=" * 70)

        print("\nFILES:")
        print("-" * 70)
        for file_name, stats in sorted(self.file_stats.items()):
            size_kb = stats["size"] / 1024
            print(f"  {file_name:30s} {stats['rows']:8d} rows  {size_kb:10.2f} KB")

        for title, messages in (("INFORMATION", self.info), ("WARNINGS", self.warnings), ("ERRORS", self.errors)):
            if messages:
                print(f"\n{title}:")
                print("-" * 70)
                for msg in messages:
                    print(f"  {msg}")

        print("\nSUMMARY:")
        print("-" * 70)
        print(f"  Files checked: {len(self.file_stats)}")
        print(f"  Warnings:      {len(self.warnings)}")
        print(f"  Errors:        {len(self.errors)}")

        if self.errors:
            print("\nVALIDATION FAILED")
        elif self.warnings:
            print("\nVALIDATION PASSED WITH WARNINGS")
        else:
            print("\nVALIDATION PASSED")
        print("=" * 70 + "\n")

    def has_errors(self) -> bool:
        return len(self.errors) > 0


class DatasetValidator:
    """Validates the files of one dataset directory and their consistency"""

    def __init__(self, data_dir):
        self.data_dir = Path(data_dir)
        self.report = ValidationReport()
        self.features: Optional[np.ndarray] = None
        self.labels: Optional[np.ndarray] = None
        self.edges: Optional[np.ndarray] = None

    def _read_rows(self, file_name: str) -> Optional[List[Tuple[int, List[str]]]]:
        path = self.data_dir / file_name
        if not path.exists():
            self.report.add_error(f"Required file missing: {file_name}")
            return None
        rows = []
        with open(path, 'r', newline='', encoding='utf-8') as f:
            for line_no, row in enumerate(csv.reader(f), start=1):
                if row and any(cell.strip() for cell in row):
                    rows.append((line_no, row))
        self.report.add_file_stats(file_name, len(rows), path.stat().st_size)
        return rows

    def _numeric(self, file_name: str, rows, convert) -> Optional[List[list]]:
        parsed = []
        bad = 0
        for line_no, row in rows:
            try:
                parsed.append([convert(cell.strip()) for cell in row])
            except ValueError:
                bad += 1
                if bad <= MAX_LISTED:
                    self.report.add_error(f"{file_name}:{line_no}: non-numeric cell")
        if bad > MAX_LISTED:
            self.report.add_error(f"{file_name}: ... and {bad - MAX_LISTED} more non-numeric rows")
        return None if bad else parsed

    def validate_features(self):
        rows = self._read_rows(FEATURES_FILE)
        if rows is None:
            return
        parsed = self._numeric(FEATURES_FILE, rows, float)
        if parsed is None:
            return
        widths = Counter(len(r) for r in parsed)
        if len(widths) > 1:
            self.report.add_error(f"{FEATURES_FILE}: inconsistent row widths {dict(widths)}")
            return
        features = np.asarray(parsed, dtype=np.float64)
        if not np.all(np.isfinite(features)):
            self.report.add_error(f"{FEATURES_FILE}: non-finite values")
            return
        self.features = features
        self.report.add_info(f"{features.shape[0]} nodes with {features.shape[1] if features.ndim == 2 else 0} features")

    def validate_labels(self):
        rows = self._read_rows(LABELS_FILE)
        if rows is None:
            return
        parsed = self._numeric(LABELS_FILE, rows, int)
        if parsed is None:
            return
        if any(len(r) != 1 for r in parsed):
            self.report.add_error(f"{LABELS_FILE}: expected one label per line")
            return
        labels = np.asarray([r[0] for r in parsed], dtype=np.int64)
        if labels.size and labels.min() < 0:
            self.report.add_error(f"{LABELS_FILE}: negative labels")
            return
        if self.features is not None and labels.size != self.features.shape[0]:
            self.report.add_error(f"{LABELS_FILE}: {labels.size} labels for {self.features.shape[0]} feature rows")
            return
        self.labels = labels
        histogram = ", ".join(f"{k}: {v}" for k, v in sorted(Counter(labels.tolist()).items()))
        self.report.add_info(f"class histogram {{{histogram}}}")

    def validate_edges(self):
        rows = self._read_rows(EDGES_FILE)
        if rows is None:
            return
        parsed = self._numeric(EDGES_FILE, rows, int)
        if parsed is None:
            return
        if any(len(r) != 2 for r in parsed):
            self.report.add_error(f"{EDGES_FILE}: expected 'src,dst' pairs")
            return
        edges = np.asarray(parsed, dtype=np.int64).reshape(-1, 2)
        n = self.features.shape[0] if self.features is not None else None
        if edges.size and edges.min() < 0:
            self.report.add_error(f"{EDGES_FILE}: negative node index")
            return
        if n is not None and edges.size and edges.max() >= n:
            self.report.add_error(f"{EDGES_FILE}: node index {int(edges.max())} >= n={n}")
            return

        loops = int(np.sum(edges[:, 0] == edges[:, 1]))
        if loops:
            self.report.add_warning(f"{EDGES_FILE}: {loops} self-loop rows (stripped on load)")
        undirected = np.sort(edges[edges[:, 0] != edges[:, 1]], axis=1)
        distinct = np.unique(undirected, axis=0) if undirected.size else undirected
        repeats = undirected.shape[0] - distinct.shape[0]
        if repeats:
            self.report.add_warning(f"{EDGES_FILE}: {repeats} duplicate or reciprocal rows (merged on load)")
        self.edges = distinct
        self.report.add_info(f"{distinct.shape[0]} undirected edges")

    def validate_splits(self):
        path = self.data_dir / SPLITS_FILE
        if not path.exists():
            self.report.add_info(f"{SPLITS_FILE} not present (random splits will be drawn)")
            return
        try:
            payload = json.loads(path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            self.report.add_error(f"{SPLITS_FILE}: {e}")
            return
        n = self.features.shape[0] if self.features is not None else None
        seen = set()
        for part in ("train", "val", "test"):
            ids = payload.get(part) if isinstance(payload, dict) else None
            if not isinstance(ids, list):
                self.report.add_error(f"{SPLITS_FILE}: '{part}' must be a list of node ids")
                continue
            if n is not None and any(not isinstance(i, int) or i < 0 or i >= n for i in ids):
                self.report.add_error(f"{SPLITS_FILE}: '{part}' holds ids outside [0, {n})")
            repeated = len(ids) - len(set(ids))
            if repeated:
                self.report.add_error(f"{SPLITS_FILE}: '{part}' repeats {repeated} ids")
            overlap = seen.intersection(ids)
            if overlap:
                self.report.add_error(f"{SPLITS_FILE}: '{part}' overlaps another split ({len(overlap)} ids)")
            seen.update(ids)
            self.report.add_info(f"{SPLITS_FILE}: {part} has {len(ids)} nodes")

    def validate_graph(self):
        """Structure-level checks once all files parsed"""
        if self.features is None or self.labels is None or self.edges is None:
            return
        num_classes = None
        meta_path = self.data_dir / META_FILE
        if meta_path.exists():
            try:
                num_classes = json.loads(meta_path.read_text(encoding='utf-8')).get("num_classes")
            except json.JSONDecodeError as e:
                self.report.add_error(f"{META_FILE}: {e}")
                return
        try:
            graph = Graph.from_edges(self.features.shape[0], self.edges, self.features, self.labels, num_classes)
        except NCNError as e:
            self.report.add_error(f"graph: {e}")
            return

        isolated = int(np.sum(graph.degrees() == 0))
        if isolated:
            self.report.add_warning(f"{isolated} isolated nodes")
        if graph.num_edges:
            self.report.add_info(f"homophily (node) {homophily_ratio(graph):.4f}, "
                                 f"(edge) {homophily_ratio(graph, method='edge'):.4f}")
            for k, value in class_homophily_report(graph).items():
                self.report.add_info(f"class {k} homophily {value:.4f}")

    def validate_all(self, quiet: bool = False) -> bool:
        """Run all validations"""
        if not self.data_dir.is_dir():
            self.report.add_error(f"Dataset directory not found: {self.data_dir}")
        else:
            self.validate_features()
            self.validate_labels()
            self.validate_edges()
            self.validate_splits()
            self.validate_graph()

        if not quiet:
            self.report.print_report()
        return not self.report.has_errors()


def main(argv=None):
    parser = argparse.ArgumentParser(description="Validate a dataset directory")
    parser.add_argument(
        "--data-dir",
        type=str,
        required=True,
        help="Dataset directory to validate (e.g., data/cora)"
    )
    args = parser.parse_args(argv)

    validator = DatasetValidator(Path(args.data_dir))
    success = validator.validate_all()
    sys.exit(0 if success else 2)


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""
Conversion script: LINQS citation dump (<name>.content / <name>.cites) to the
toolkit's dataset directory format.

    <name>.content  one paper per line: <paper_id> <binary word attributes...> <class label>
    <name>.cites    one citation per line: <cited paper_id> <citing paper_id>

Papers are numbered in file order, class labels are numbered in sorted order.
Citations that reference papers missing from the content file are skipped.

Usage: python convert_planetoid.py --content cora/cora.content --cites cora/cora.cites --out data/cora
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from ncn.dataset_io import save_graph
from ncn.errors import DatasetFormatError, NCNError
from ncn.graph_core import Graph, homophily_ratio

logger = logging.getLogger("convert_planetoid")


class ConversionStats:
    """Track what the conversion kept and skipped"""

    def __init__(self):
        self.papers = 0
        self.citations = 0
        self.dangling = 0
        self.self_citations = 0
        self.classes: Dict[str, int] = {}

    def report(self, graph: Graph, out_dir: Path):
        print("\n" + "=" * 70)
        print("  CONVERSION COMPLETE")
        print("=" * 70)
        print(f"  Papers:              {self.papers}")
        print(f"  Citation rows:       {self.citations}")
        print(f"  Dangling citations:  {self.dangling} (skipped)")
        print(f"  Self citations:      {self.self_citations} (skipped)")
        print(f"  Undirected edges:    {graph.num_edges}")
        print(f"  Features:            {graph.d}")
        print(f"  Classes:             {len(self.classes)}")
        for name, index in sorted(self.classes.items(), key=lambda kv: kv[1]):
            print(f"    {index}: {name}")
        print(f"  Homophily:           {homophily_ratio(graph):.4f}")
        print(f"\n  Output: {out_dir}")
        print("=" * 70 + "\n")


def read_content(path: Path, stats: ConversionStats) -> Tuple[Dict[str, int], np.ndarray, List[str]]:
    """Parse the content file into (paper id -> node index, features, class names)"""
    if not path.exists():
        raise DatasetFormatError(f"Content file not found: {path}")

    index: Dict[str, int] = {}
    rows: List[List[float]] = []
    names: List[str] = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 3:
                raise DatasetFormatError(f"{path}:{line_no}: expected id, attributes and label")
            paper_id, attributes, label = parts[0], parts[1:-1], parts[-1]
            if paper_id in index:
                raise DatasetFormatError(f"{path}:{line_no}: duplicate paper id {paper_id}")
            if rows and len(attributes) != len(rows[0]):
                raise DatasetFormatError(f"{path}:{line_no}: expected {len(rows[0])} attributes, got {len(attributes)}")
            try:
                rows.append([float(a) for a in attributes])
            except ValueError:
                raise DatasetFormatError(f"{path}:{line_no}: non-numeric attribute")
            index[paper_id] = len(names)
            names.append(label)

    stats.papers = len(names)
    return index, np.asarray(rows, dtype=np.float64), names


def read_cites(path: Path, index: Dict[str, int], stats: ConversionStats) -> np.ndarray:
    """Parse the citation file into node-index pairs, skipping unknown papers"""
    if not path.exists():
        raise DatasetFormatError(f"Citation file not found: {path}")

    edges = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise DatasetFormatError(f"{path}:{line_no}: expected two paper ids")
            stats.citations += 1
            cited, citing = parts
            if cited not in index or citing not in index:
                stats.dangling += 1
                continue
            if cited == citing:
                stats.self_citations += 1
                continue
            edges.append((index[citing], index[cited]))

    if stats.dangling:
        logger.warning("Skipped %d citations to papers without content rows", stats.dangling)
    return np.asarray(edges, dtype=np.int64).reshape(-1, 2)


def convert(content: Path, cites: Path, out_dir: Path, name: str) -> Graph:
    stats = ConversionStats()
    index, features, label_names = read_content(content, stats)
    edges = read_cites(cites, index, stats)

    stats.classes = {label: i for i, label in enumerate(sorted(set(label_names)))}
    labels = np.asarray([stats.classes[label] for label in label_names], dtype=np.int64)

    graph = Graph.from_edges(len(label_names), edges, features, labels, num_classes=len(stats.classes))
    save_graph(graph, out_dir, name=name)
    stats.report(graph, out_dir)
    return graph


def main(argv=None):
    parser = argparse.ArgumentParser(description="Convert a LINQS citation dataset to the NCN CSV format")
    parser.add_argument("--content", required=True, help="Path to <name>.content")
    parser.add_argument("--cites", required=True, help="Path to <name>.cites")
    parser.add_argument("--out", required=True, help="Output dataset directory")
    parser.add_argument("--name", help="Dataset name stored in meta.json (default: content file stem)")
    args = parser.parse_args(argv)

    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    content = Path(args.content)
    try:
        convert(content, Path(args.cites), Path(args.out), args.name or content.stem)
    except NCNError as e:
        print(f"error: {e}", file=sys.stderr)
        sys.exit(e.exit_code)


if __name__ == "__main__":
    main()

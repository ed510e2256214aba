import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from ncn.dataset_io import (
    SbmSpec, SplitSpec, generate_random_graph, generate_sbm, load_graph, load_splits, make_rng,
    make_split, save_graph,
)
from ncn.errors import ConfigError, DataError, DatasetFormatError
from ncn.graph_core import homophily_ratio


def write_dataset(path, edges, features, labels):
    path.mkdir(parents=True, exist_ok=True)
    (path / "edges.csv").write_text(edges)
    (path / "features.csv").write_text(features)
    (path / "labels.csv").write_text(labels)
    return path


def test_load_triangle(tmp_path):
    d = write_dataset(tmp_path / "tri", "0,1\n1,2\n2,0\n", "1.0,0.0\n0.0,1.0\n0.5,0.5\n", "0\n1\n0\n")
    g = load_graph(d)
    assert (g.n, g.num_edges, g.d, g.c) == (3, 3, 2, 2)


def test_load_merges_duplicates_and_self_loops(tmp_path, caplog):
    d = write_dataset(tmp_path / "dup", "0,1\n1,0\n0,1\n2,2\n", "1\n2\n3\n", "0\n0\n1\n")
    g = load_graph(d)
    assert g.num_edges == 1
    assert g.degrees()[2] == 0
    assert "Merged 2 duplicate" in caplog.text


def test_load_skips_blank_lines(tmp_path):
    d = write_dataset(tmp_path / "blank", "0,1\n\n", "1\n\n2\n", "0\n1\n\n")
    assert load_graph(d).n == 2


def test_missing_dataset_directory(tmp_path):
    with pytest.raises(DatasetFormatError):
        load_graph(tmp_path / "nope")


def test_missing_file(tmp_path):
    d = tmp_path / "partial"
    d.mkdir()
    (d / "features.csv").write_text("1\n")
    with pytest.raises(DatasetFormatError, match="labels.csv"):
        load_graph(d)


def test_non_numeric_cell_names_line(tmp_path):
    d = write_dataset(tmp_path / "bad", "0,1\n", "1.0\nabc\n", "0\n1\n")
    with pytest.raises(DatasetFormatError, match=r"features\.csv:2"):
        load_graph(d)


def test_edge_out_of_range(tmp_path):
    d = write_dataset(tmp_path / "oob", "0,5\n", "1\n2\n", "0\n1\n")
    with pytest.raises(DatasetFormatError, match="outside"):
        load_graph(d)


def test_label_count_mismatch(tmp_path):
    d = write_dataset(tmp_path / "labels", "0,1\n", "1\n2\n", "0\n")
    with pytest.raises(DatasetFormatError):
        load_graph(d)


def test_inconsistent_feature_width(tmp_path):
    d = write_dataset(tmp_path / "width", "0,1\n", "1,2\n3\n", "0\n1\n")
    with pytest.raises(DatasetFormatError):
        load_graph(d)


def test_save_load_round_trip(tmp_path, small_sbm, small_split):
    save_graph(small_sbm, tmp_path / "sbm", split=small_split, name="sbm")
    loaded = load_graph(tmp_path / "sbm")
    assert loaded.checksum() == small_sbm.checksum()

    split = load_splits(tmp_path / "sbm", loaded.n)
    assert_array_equal(split.train_ids, small_split.train_ids)
    assert json.loads((tmp_path / "sbm" / "meta.json").read_text())["name"] == "sbm"


def test_splits_file_overlap_rejected(tmp_path, triangle):
    save_graph(triangle, tmp_path / "tri")
    (tmp_path / "tri" / "splits.json").write_text(json.dumps({"train": [0, 1], "val": [1], "test": [2]}))
    with pytest.raises(DatasetFormatError, match="overlaps"):
        load_splits(tmp_path / "tri", 3)


def test_sbm_is_deterministic():
    spec = SbmSpec(n=100, c=2, p_in=0.1, p_out=0.01, feat_dim=4, seed=11)
    assert generate_sbm(spec).checksum() == generate_sbm(spec).checksum()
    other = SbmSpec(n=100, c=2, p_in=0.1, p_out=0.01, feat_dim=4, seed=12)
    assert generate_sbm(other).checksum() != generate_sbm(spec).checksum()


def test_sbm_blocks_and_homophily(homophilic_sbm, heterophilic_sbm):
    assert np.bincount(homophilic_sbm.y).tolist() == [200, 200]
    assert homophily_ratio(homophilic_sbm) > 0.75
    assert homophily_ratio(heterophilic_sbm) < 0.25


def test_sbm_class_means():
    spec = SbmSpec(n=400, c=2, p_in=0.0, p_out=0.0, feat_dim=4, mu=3.0, sigma=0.5, seed=0)
    g = generate_sbm(spec)
    assert g.num_edges == 0
    assert g.x[g.y == 0, 0].mean() == pytest.approx(3.0, abs=0.15)
    assert g.x[g.y == 1, 1].mean() == pytest.approx(3.0, abs=0.15)
    assert g.x[g.y == 0, 1].mean() == pytest.approx(0.0, abs=0.15)


def test_sbm_spec_validation():
    with pytest.raises(ConfigError):
        generate_sbm(SbmSpec(n=10, c=2, p_in=1.5, p_out=0.0, feat_dim=2))
    with pytest.raises(ConfigError):
        generate_sbm(SbmSpec(n=1, c=2, p_in=0.5, p_out=0.0, feat_dim=2))


def test_random_graph_has_exact_edge_count():
    g = generate_random_graph(50, 200, 4, 3, seed=5)
    assert g.num_edges == 200
    with pytest.raises(ConfigError):
        generate_random_graph(4, 7, 2, 2)


def test_make_split_sizes_and_disjointness():
    split = make_split(10, seed=3)
    assert (split.train_ids.size, split.val_ids.size, split.test_ids.size) == (6, 2, 2)
    all_ids = np.concatenate([split.train_ids, split.val_ids, split.test_ids])
    assert sorted(all_ids.tolist()) == list(range(10))


def test_make_split_is_reproducible():
    a = make_split(50, seed=9)
    b = make_split(50, seed=9)
    assert_array_equal(a.train_ids, b.train_ids)
    assert_array_equal(a.test_ids, b.test_ids)
    assert not np.array_equal(a.train_ids, make_split(50, seed=10).train_ids)


def test_make_split_too_small():
    with pytest.raises(DataError):
        make_split(2)


def test_make_split_bad_ratios():
    with pytest.raises(ConfigError):
        make_split(10, ratios=(0.5, 0.5, 0.5))


def test_stratified_split_keeps_class_balance(homophilic_sbm):
    split = make_split(homophilic_sbm.n, seed=0, stratify_labels=homophilic_sbm.y)
    counts = np.bincount(homophilic_sbm.y[split.train_ids])
    assert counts.tolist() == [120, 120]


def test_split_spec_from_dict_validates():
    with pytest.raises(DatasetFormatError):
        SplitSpec.from_dict({"train": [0, 9], "val": [], "test": []}, n=3)
    with pytest.raises(DatasetFormatError):
        SplitSpec.from_dict({"train": [0]}, n=3)


def test_seed_range():
    make_rng(2 ** 64 - 1)
    with pytest.raises(ConfigError):
        make_rng(-1)
    with pytest.raises(ConfigError):
        make_rng(2 ** 64)


def test_sbm_extreme_block_probabilities():
    cliques = generate_sbm(SbmSpec(n=20, c=2, p_in=1.0, p_out=0.0, feat_dim=2, seed=0))
    assert cliques.num_edges == 2 * (10 * 9 // 2)
    assert homophily_ratio(cliques) == 1.0
    bipartite = generate_sbm(SbmSpec(n=20, c=2, p_in=0.0, p_out=1.0, feat_dim=2, seed=0))
    assert bipartite.num_edges == 10 * 10
    assert homophily_ratio(bipartite) == 0.0


def test_homophilic_sbm_ratio_band(homophilic_sbm):
    assert 0.85 < homophily_ratio(homophilic_sbm) < 0.95


def test_make_split_sixty_twenty_twenty():
    split = make_split(100, ratios=(0.6, 0.2, 0.2), seed=0)
    assert (split.train_ids.size, split.val_ids.size, split.test_ids.size) == (60, 20, 20)


def test_stratified_parts_are_balanced():
    labels = np.array([0] * 50 + [1] * 50)
    split = make_split(100, seed=2, stratify_labels=labels)
    for part in (split.train_ids, split.val_ids, split.test_ids):
        counts = np.bincount(labels[part], minlength=2)
        assert abs(int(counts[0]) - int(counts[1])) <= 1


@pytest.mark.parametrize("n, sizes", [(3, (1, 1, 1)), (4, (2, 1, 1)), (5, (3, 1, 1))])
def test_small_splits_keep_every_part(n, sizes):
    split = make_split(n, seed=0)
    assert (split.train_ids.size, split.val_ids.size, split.test_ids.size) == sizes


def test_zero_validation_ratio_still_gets_one_node():
    split = make_split(10, ratios=(0.8, 0.0, 0.2), seed=0)
    assert (split.train_ids.size, split.val_ids.size, split.test_ids.size) == (8, 1, 1)


def test_stratified_totals_match_unstratified():
    # 7 classes of 3: per-class rounding alone would drift far from 13/4/4
    labels = np.repeat(np.arange(7), 3)
    split = make_split(21, seed=4, stratify_labels=labels)
    plain = make_split(21, seed=4)
    parts = (split.train_ids, split.val_ids, split.test_ids)
    assert [p.size for p in parts] == [p.size for p in (plain.train_ids, plain.val_ids, plain.test_ids)]
    assert [p.size for p in parts] == [13, 4, 4]
    for part, total in zip(parts, (13, 4, 4)):
        counts = np.bincount(labels[part], minlength=7)
        assert np.all(np.abs(counts - 3 * total / 21) < 1.0)


def test_stratified_uneven_classes():
    labels = np.array([0] * 13 + [1] * 5 + [2] * 2)
    split = make_split(20, seed=1, stratify_labels=labels)
    assert (split.train_ids.size, split.val_ids.size, split.test_ids.size) == (12, 4, 4)
    for part, total in zip((split.train_ids, split.val_ids, split.test_ids), (12, 4, 4)):
        counts = np.bincount(labels[part], minlength=3)
        assert np.all(np.abs(counts - np.array([13, 5, 2]) * total / 20) < 1.0)


@pytest.mark.parametrize("seed", range(20))
def test_sbm_with_denser_blocks_is_homophilic(seed):
    graph = generate_sbm(SbmSpec(n=200, c=2, p_in=0.05, p_out=0.01, feat_dim=2, seed=seed))
    assert homophily_ratio(graph) > 0.5

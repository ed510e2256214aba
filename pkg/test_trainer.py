import json
import math
import os

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from ncn.config import TrainConfig
from ncn.dataset_io import SbmSpec, SplitSpec, generate_sbm, load_graph, make_rng, make_split
from ncn.errors import DataError, GridMismatchError
from ncn.gna_preprocess import PropagationSpec, build_grid
from ncn.ncn_model import ModelDims, NcnParams, export_fusion_weights, forward_variant
from ncn.tensor_autodiff import log_softmax, nll_loss
from ncn.trainer import (
    ExperimentResult, RunMetrics, accuracy, benchmark_epoch_time, derive_seeds, evaluate, grid_search,
    metrics_document, run_experiment, sweep_k, train, write_metrics,
)
from ncn.utils.csv_manager import RecordSchema

FAST = dict(d_prime=8, K=2, batch_size=16, patience=5, max_epochs=15, runs=2, lr=0.01)


@pytest.fixture
def fast_cfg():
    return TrainConfig(**FAST).validate()


@pytest.fixture
def small_grid(small_sbm):
    return build_grid(small_sbm, PropagationSpec(K=2))


def test_accuracy():
    assert accuracy([1, 0, 1], [1, 0, 1]) == 1.0
    assert accuracy([0, 0, 0, 0], [0, 1, 0, 1]) == 0.5
    with pytest.raises(DataError):
        accuracy([], [])


def test_evaluate_empty_set(small_sbm, small_grid):
    params = NcnParams.initialize(ModelDims(d=small_sbm.d, d_prime=4, K=2, c=3), np.random.default_rng(0))
    with pytest.raises(DataError):
        evaluate(params, small_grid, small_sbm, [])


def test_derive_seeds_are_independent_and_stable():
    a = derive_seeds(7, 0)
    assert a == derive_seeds(7, 0)
    assert len({a.split, a.init, a.shuffle, a.mask}) == 4
    assert derive_seeds(7, 1) != a
    assert derive_seeds(8, 0) != a


def test_train_runs_and_records(small_sbm, small_grid, small_split, fast_cfg):
    params, metrics = train(small_sbm, small_grid, small_split, fast_cfg)
    assert 1 <= metrics.best_epoch <= metrics.epochs_run <= fast_cfg.max_epochs
    assert len(metrics.train_loss) == len(metrics.val_acc) == metrics.epochs_run
    assert 0.0 <= metrics.test_acc <= 1.0
    assert metrics.best_val_acc == max(metrics.val_acc)


def test_restored_params_reproduce_best_val(small_sbm, small_grid, small_split, fast_cfg):
    params, metrics = train(small_sbm, small_grid, small_split, fast_cfg)
    assert evaluate(params, small_grid, small_sbm, small_split.val_ids) == metrics.best_val_acc


def test_training_is_deterministic(small_sbm, small_grid, small_split, fast_cfg):
    _, first = train(small_sbm, small_grid, small_split, fast_cfg)
    _, second = train(small_sbm, small_grid, small_split, fast_cfg)
    assert first.train_loss == second.train_loss
    assert first.test_acc == second.test_acc


def test_zero_learning_rate_freezes_params(small_sbm, small_grid, small_split, fast_cfg):
    cfg = fast_cfg.replace(lr=0.0, max_epochs=4, patience=10)
    seeds = derive_seeds(cfg.seed, 0)
    initial = NcnParams.initialize(
        ModelDims(d=small_sbm.d, d_prime=cfg.d_prime, K=cfg.K, c=small_sbm.c),
        make_rng(seeds.init),
    )
    params, metrics = train(small_sbm, small_grid, small_split, cfg, seeds=seeds)
    for name, tensor in params.tensors.items():
        assert_array_equal(tensor.data, initial[name].data)
    assert len(set(metrics.val_acc)) == 1


def test_patience_stops_early(small_sbm, small_grid, small_split, fast_cfg):
    cfg = fast_cfg.replace(lr=0.0, max_epochs=50, patience=3)
    _, metrics = train(small_sbm, small_grid, small_split, cfg)
    # constant val accuracy: epoch 1 is best and ties never reset patience
    assert metrics.best_epoch == 1
    assert metrics.epochs_run == 4


def test_grid_k_mismatch(small_sbm, small_grid, small_split, fast_cfg):
    with pytest.raises(GridMismatchError):
        train(small_sbm, small_grid, small_split, fast_cfg.replace(K=4))


def test_empty_train_set(small_sbm, small_grid, fast_cfg):
    split = SplitSpec(train_ids=np.array([], dtype=np.int64), val_ids=np.arange(10), test_ids=np.arange(10, 20))
    with pytest.raises(DataError):
        train(small_sbm, small_grid, split, fast_cfg)


def test_no_mask_equals_zero_beta(small_sbm, small_grid, small_split, fast_cfg):
    _, masked_off = train(small_sbm, small_grid, small_split, fast_cfg.replace(variant="no_mask", beta=0.3))
    _, zero_beta = train(small_sbm, small_grid, small_split, fast_cfg.replace(variant="full", beta=0.0))
    assert masked_off.train_loss == zero_beta.train_loss
    assert masked_off.test_acc == zero_beta.test_acc


def test_initial_loss_near_log_c(homophilic_sbm):
    grid = build_grid(homophilic_sbm, PropagationSpec(K=4))
    params = NcnParams.initialize(ModelDims(d=homophilic_sbm.d, d_prime=128, K=4, c=2), np.random.default_rng(0))
    ids = np.arange(homophilic_sbm.n)
    logits = forward_variant(params, grid.data[ids], homophilic_sbm.x[ids])
    loss = nll_loss(log_softmax(logits), homophilic_sbm.y[ids]).item()
    assert abs(loss - math.log(2)) < 0.15 * math.log(2)


@pytest.mark.parametrize("variant", ["no_ra", "mlp_baseline"])
def test_variants_train(variant, small_sbm, small_grid, small_split, fast_cfg):
    _, metrics = train(small_sbm, small_grid, small_split, fast_cfg.replace(variant=variant))
    assert 0.0 <= metrics.test_acc <= 1.0


def test_run_experiment_aggregates(small_sbm, small_grid, fast_cfg):
    result = run_experiment(small_sbm, small_grid, fast_cfg)
    assert len(result.runs) == 2
    accs = [r.test_acc for r in result.runs]
    assert result.mean_test_acc == pytest.approx(np.mean(accs))
    assert result.std_test_acc == pytest.approx(np.std(accs))
    assert result.params is not None
    # each run draws its own split
    assert result.runs[0].split_seed != result.runs[1].split_seed


def test_run_experiment_keeps_best_split(small_sbm, small_grid, fast_cfg):
    result = run_experiment(small_sbm, small_grid, fast_cfg)
    best = max(result.runs, key=lambda r: (r.best_val_acc, -r.run_index))
    expected = make_split(small_sbm.n, seed=best.split_seed)
    assert_array_equal(result.split.train_ids, expected.train_ids)
    assert_array_equal(result.split.test_ids, expected.test_ids)
    assert not set(result.split.train_ids.tolist()) & set(result.split.test_ids.tolist())


def test_run_experiment_threads_match_sequential(small_sbm, small_grid, fast_cfg):
    sequential = run_experiment(small_sbm, small_grid, fast_cfg)
    threaded = run_experiment(small_sbm, small_grid, fast_cfg.replace(workers=2))
    assert [r.train_loss for r in sequential.runs] == [r.train_loss for r in threaded.runs]


def test_fixed_split_is_shared(small_sbm, small_grid, small_split, fast_cfg):
    result = run_experiment(small_sbm, small_grid, fast_cfg, split=small_split)
    assert {r.split_seed for r in result.runs} == {small_split.seed}


def test_sweep_k_rows(small_sbm, fast_cfg):
    rows = sweep_k(small_sbm, fast_cfg.replace(runs=1), k_values=[4, 2])
    assert [r["K"] for r in rows] == [2, 4]
    assert all(r["runs"] == 1 for r in rows)
    assert len(sweep_k(small_sbm, fast_cfg.replace(runs=1), k_values=[2])) == 1


def test_grid_search_picks_best_val(small_sbm, fast_cfg):
    best, rows = grid_search(small_sbm, fast_cfg.replace(runs=1), {"lr": [0.0, 0.01], "beta": [0.0, 0.2]})
    assert len(rows) == 4
    top = max(rows, key=lambda r: r["mean_val_acc"])
    assert best.lr == top["lr"] and best.beta == top["beta"]


def test_write_metrics_validates(tmp_path, small_sbm, small_grid, fast_cfg):
    result = run_experiment(small_sbm, small_grid, fast_cfg)
    document = write_metrics(result, small_sbm, tmp_path / "metrics.json", dataset_name="sbm")
    on_disk = json.loads((tmp_path / "metrics.json").read_text())
    assert on_disk == json.loads(json.dumps(document))
    assert RecordSchema.from_file().validate(on_disk) == []
    assert len(on_disk["runs"]) == 2
    assert on_disk["summary"]["runs"] == 2


def test_metrics_schema_flags_problems(small_sbm, fast_cfg):
    schema = RecordSchema.from_file()
    result = ExperimentResult(config=fast_cfg, runs=[RunMetrics(run_index=0, seed=0, split_seed=None,
                                                                epochs_run=1, best_epoch=1, best_val_acc=1.5)])
    document = metrics_document(result, small_sbm)
    problems = schema.validate(document)
    assert any("best_val_acc" in p for p in problems)
    document["extra"] = 1
    assert any("extra" in p for p in schema.validate(document))


def test_benchmark_rows(fast_cfg):
    rows = benchmark_epoch_time(200, [400, 800], fast_cfg, feat_dim=4, num_classes=2, epochs=1)
    assert [r["m"] for r in rows] == [400, 800]
    assert all(r["epoch_ms"] > 0 and r["preprocess_ms"] > 0 for r in rows)


# ========== DESK-SCALE RUNS ==========

SLOW = dict(d_prime=128, K=4, lr=1e-3, weight_decay=1e-5, beta=0.2, batch_size=1000,
            patience=50, max_epochs=300, seed=0)


@pytest.mark.slow
def test_homophilic_sbm_accuracy(homophilic_sbm):
    cfg = TrainConfig(runs=5, **SLOW).validate()
    grid = build_grid(homophilic_sbm, cfg.propagation())
    result = run_experiment(homophilic_sbm, grid, cfg)
    assert result.mean_test_acc >= 0.90


@pytest.mark.slow
def test_mlp_baseline_separable_features():
    g = generate_sbm(SbmSpec(n=400, c=2, p_in=0.01, p_out=0.01, feat_dim=8, mu=3.0, sigma=0.5, seed=1))
    cfg = TrainConfig(runs=1, variant="mlp_baseline", **dict(SLOW, lr=0.01)).validate()
    grid = build_grid(g, cfg.propagation())
    split = make_split(g.n, seed=0)
    params, _ = train(g, grid, split, cfg)
    assert evaluate(params, grid, g, split.train_ids) > 0.95


@pytest.mark.slow
def test_heterophilic_fusion_prefers_neighborhood(heterophilic_sbm):
    cfg = TrainConfig(runs=5, **SLOW).validate()
    grid = build_grid(heterophilic_sbm, cfg.propagation())
    ncn = run_experiment(heterophilic_sbm, grid, cfg)
    mlp = run_experiment(heterophilic_sbm, grid, cfg.replace(variant="mlp_baseline"))
    assert ncn.mean_test_acc >= mlp.mean_test_acc + 0.10

    split = make_split(heterophilic_sbm.n, seed=derive_seeds(cfg.seed, 0).split)
    params, _ = train(heterophilic_sbm, grid, split, cfg)
    rows = export_fusion_weights(params, grid, heterophilic_sbm.x, split.test_ids)
    a = np.array([(a0, a1) for _, a0, a1 in rows])
    assert a[:, 1].mean() > a[:, 0].mean()


@pytest.mark.slow
def test_ablation_ordering(homophilic_sbm):
    cfg = TrainConfig(runs=10, **SLOW).validate()
    grid = build_grid(homophilic_sbm, cfg.propagation())
    full = run_experiment(homophilic_sbm, grid, cfg).mean_test_acc
    no_mask = run_experiment(homophilic_sbm, grid, cfg.replace(variant="no_mask")).mean_test_acc
    no_ra = run_experiment(homophilic_sbm, grid, cfg.replace(variant="no_ra")).mean_test_acc
    assert full >= no_mask - 0.01
    assert no_mask >= no_ra - 0.01


@pytest.mark.slow
def test_training_loss_trends_down(homophilic_sbm):
    cfg = TrainConfig(runs=1, **dict(SLOW, max_epochs=20, patience=20)).validate()
    grid = build_grid(homophilic_sbm, cfg.propagation())
    _, metrics = train(homophilic_sbm, grid, make_split(homophilic_sbm.n, seed=0), cfg)
    slope = np.polyfit(np.arange(len(metrics.train_loss)), metrics.train_loss, 1)[0]
    assert slope <= 0


@pytest.mark.slow
def test_homophilic_sweep_prefers_small_k(homophilic_sbm):
    rows = sweep_k(homophilic_sbm, TrainConfig(runs=2, **SLOW).validate())
    best = max(rows, key=lambda r: r["mean_acc"])
    assert best["K"] <= 6


@pytest.mark.timing
def test_epoch_time_depends_on_nodes_not_edges():
    cfg = TrainConfig(d_prime=64, K=4, batch_size=1000).validate()
    rows = benchmark_epoch_time(4000, [20_000, 40_000], cfg, epochs=5)
    ratio = rows[1]["epoch_ms"] / rows[0]["epoch_ms"]
    assert 0.8 <= ratio <= 1.25
    assert rows[1]["preprocess_ms"] > rows[0]["preprocess_ms"]

    doubled = benchmark_epoch_time(8000, [20_000], cfg, epochs=5)
    assert 1.6 <= doubled[0]["epoch_ms"] / rows[0]["epoch_ms"] <= 2.6


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get("NCN_CORA_DIR"), reason="NCN_CORA_DIR not set")
def test_cora_accuracy():
    g = load_graph(os.environ["NCN_CORA_DIR"])
    cfg = TrainConfig(d_prime=256, beta=0.3, K=4, lr=5e-4, weight_decay=1e-4, runs=10, seed=0).validate()
    grid = build_grid(g, cfg.propagation())
    assert run_experiment(g, grid, cfg).mean_test_acc >= 0.85

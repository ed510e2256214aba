"""Shared pytest fixtures: toy graphs, synthetic datasets and float64 engine mode"""

import os

import numpy as np
import pytest

from ncn.dataset_io import SbmSpec, generate_sbm, make_split
from ncn.graph_core import Graph
from ncn.tensor_autodiff import precision

collect_ignore_glob = ["examples/*", "demo_run/*"]

CORA_DIR = os.environ.get("NCN_CORA_DIR")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale training runs (seconds to minutes)")
    config.addinivalue_line("markers", "timing: wall-clock complexity assertions")


@pytest.fixture
def f64():
    """Run the autodiff engine in float64"""
    with precision(np.float64):
        yield


def features(n, d, seed=0):
    return np.random.default_rng(seed).standard_normal((n, d))


@pytest.fixture
def triangle():
    return Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)], features(3, 2), [0, 0, 1])


@pytest.fixture
def two_cliques():
    """Two 4-cliques with no edges between them; labels follow the cliques"""
    edges = [(i, j) for block in (range(0, 4), range(4, 8)) for i in block for j in block if i < j]
    return Graph.from_edges(8, edges, features(8, 3), [0] * 4 + [1] * 4)


@pytest.fixture
def path_graph():
    """0 - 1 - 2 - 3 plus isolated node 4"""
    return Graph.from_edges(5, [(0, 1), (1, 2), (2, 3)], features(5, 2), [0, 1, 0, 1, 0])


def random_graph(n, p=0.3, d=3, c=2, seed=0):
    rng = np.random.default_rng(seed)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return Graph.from_edges(n, pairs, rng.standard_normal((n, d)), rng.integers(0, c, size=n), num_classes=c)


HOMOPHILIC = dict(n=400, c=2, p_in=0.05, p_out=0.005, feat_dim=16, mu=1.5, sigma=1.0)
HETEROPHILIC = dict(n=400, c=2, p_in=0.005, p_out=0.05, feat_dim=16, mu=0.2, sigma=1.0)


@pytest.fixture(scope="session")
def homophilic_sbm():
    return generate_sbm(SbmSpec(seed=0, **HOMOPHILIC))


@pytest.fixture(scope="session")
def heterophilic_sbm():
    return generate_sbm(SbmSpec(seed=0, **HETEROPHILIC))


@pytest.fixture
def small_sbm():
    return generate_sbm(SbmSpec(n=60, c=3, p_in=0.2, p_out=0.02, feat_dim=6, mu=2.0, sigma=1.0, seed=3))


@pytest.fixture
def small_split(small_sbm):
    return make_split(small_sbm.n, seed=1)

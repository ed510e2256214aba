"""
NCN: node classification with grid-like neighborhood aggregation and
convolutional feature extraction.

Pipeline:
    dataset_io      load / generate graphs, draw splits
    gna_preprocess  multi-hop aggregation into an n x (K+1) x d grid tensor
    ncn_model       convolution blocks, adaptive fusion, mask training
    trainer         AdamW training with early stopping, multi-run experiments
    cli             `python -m ncn <command>`
"""

__version__ = "1.0.0"

from .config import SEARCH_GRID, RunSpec, TrainConfig, load_run_spec
from .dataset_io import SbmSpec, SplitSpec, generate_sbm, load_graph, make_split, save_graph
from .errors import (
    ConfigError,
    DataError,
    GridMismatchError,
    NCNError,
    NumericError,
    ShapeError,
)
from .gna_preprocess import GridTensor, PropagationSpec, build_grid, load_grid, save_grid
from .graph_core import Graph, homophily_ratio, normalize_adjacency
from .ncn_model import ModelDims, NcnParams, forward, forward_variant, sample_mask_plan
from .trainer import evaluate, run_experiment, sweep_k, train

__all__ = [
    'SEARCH_GRID',
    'RunSpec',
    'TrainConfig',
    'load_run_spec',
    'SbmSpec',
    'SplitSpec',
    'generate_sbm',
    'load_graph',
    'make_split',
    'save_graph',
    'ConfigError',
    'DataError',
    'GridMismatchError',
    'NCNError',
    'NumericError',
    'ShapeError',
    'GridTensor',
    'PropagationSpec',
    'build_grid',
    'load_grid',
    'save_grid',
    'Graph',
    'homophily_ratio',
    'normalize_adjacency',
    'ModelDims',
    'NcnParams',
    'forward',
    'forward_variant',
    'sample_mask_plan',
    'evaluate',
    'run_experiment',
    'sweep_k',
    'train',
]

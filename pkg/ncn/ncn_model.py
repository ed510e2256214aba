"""
Neighborhood Convolutional Network.

Forward pipeline for a batch of B nodes:

    grid (B, K+1, d) --linear d->d'--> (B, K+1, d') --as d' channels--> (B, d', K+1, 1)
      -> block1 -> ReLU -> block2 -> H^N (B, d')
    raw (B, d) --linear d->d'--> H^R (B, d')
    a = softmax(W_a [H^R || H^N])                    per-node fusion gates (B, 2)
    H^F = [a0 * H^R || a1 * H^N]  -> MLP head 2d' -> d' -> c

Each block is a (floor(K/2)+1, 1) convolution, ReLU, then a (1, 1) convolution.
With even K the grid height K+1 collapses to exactly 1 after both blocks.

Mask training: every epoch a fraction beta of the training nodes has its
raw-branch gate zeroed (roles ZERO_A0, effective gates (0, 1)) and another
fraction beta its neighborhood gate zeroed (ZERO_A1, effective gates (1, 0)).
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import VARIANTS
from .errors import CheckpointError, ConfigError, NumericError, ShapeError
from .gna_preprocess import GridTensor, slice_batch
from .tensor_autodiff import (
    Tensor, add, add_bias, concat_last_dim, constant, conv2d_hx1, elementwise_mul,
    expand_column, load_checkpoint, matmul, parameter, permute, relu, reshape,
    save_checkpoint, softmax_last_dim,
)
from .utils.csv_manager import write_rows

logger = logging.getLogger(__name__)

# Per-node mask roles
KEEP = 0
ZERO_A0 = 1
ZERO_A1 = 2


@dataclass(frozen=True)
class ModelDims:
    """Layer sizes of one model instance"""
    d: int
    d_prime: int
    K: int
    c: int
    hidden_channels: Optional[int] = None
    variant: str = "full"

    def __post_init__(self):
        for name in ("d", "d_prime", "c"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.hidden_channels is not None and self.hidden_channels < 1:
            raise ConfigError(f"hidden_channels must be positive, got {self.hidden_channels}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"Unknown variant: {self.variant}")
        if self.K < 2 or self.K % 2:
            raise ConfigError(
                f"K={self.K} is not supported: the two convolution blocks need an even K >= 2 "
                f"to reduce the grid height K+1 to exactly 1"
            )
        if self.block_heights()[-1] != 1:
            raise ConfigError(f"grid height does not collapse to 1 for K={self.K}")

    @property
    def channels(self) -> int:
        """Channel width between the two convolutions of a block"""
        return self.hidden_channels or self.d_prime

    @property
    def kernel_height(self) -> int:
        return self.K // 2 + 1

    def block_heights(self) -> Tuple[int, int, int]:
        """Grid height at the input, after block1 and after block2"""
        h0 = self.K + 1
        h1 = h0 - self.kernel_height + 1
        return h0, h1, h1 - self.kernel_height + 1

    @property
    def has_fusion(self) -> bool:
        return self.variant in ("full", "no_mask")

    def layout(self) -> List[Tuple[str, Tuple[int, ...], int]]:
        """(parameter name, shape, fan-in) for every parameter, in a fixed order"""
        d, dp, c, dc, h = self.d, self.d_prime, self.c, self.channels, self.kernel_height
        if self.variant == "mlp_baseline":
            return [
                ("head.0.weight", (d, dp), d), ("head.0.bias", (dp,), d),
                ("head.1.weight", (dp, c), dp), ("head.1.bias", (c,), dp),
            ]

        entries = [("reduce.weight", (d, dp), d), ("reduce.bias", (dp,), d)]
        for block in ("block1", "block2"):
            entries += [
                (f"{block}.conv_a.weight", (dc, dp, h, 1), dp * h),
                (f"{block}.conv_a.bias", (dc,), dp * h),
                (f"{block}.conv_b.weight", (dp, dc, 1, 1), dc),
                (f"{block}.conv_b.bias", (dp,), dc),
            ]
        head_in = dp
        if self.has_fusion:
            entries += [
                ("raw.weight", (d, dp), d), ("raw.bias", (dp,), d),
                ("fusion.weight", (2 * dp, 2), 2 * dp), ("fusion.bias", (2,), 2 * dp),
            ]
            head_in = 2 * dp
        entries += [
            ("head.0.weight", (head_in, dp), head_in), ("head.0.bias", (dp,), head_in),
            ("head.1.weight", (dp, c), dp), ("head.1.bias", (c,), dp),
        ]
        return entries


class NcnParams:
    """Named trainable tensors of one model"""

    def __init__(self, dims: ModelDims, tensors: Dict[str, Tensor], metadata: Optional[dict] = None):
        expected = {name: shape for name, shape, _ in dims.layout()}
        if set(tensors) != set(expected):
            raise ShapeError(f"parameter names {sorted(tensors)} do not match layout {sorted(expected)}")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {tensors[name].shape}")
        self.dims = dims
        self.tensors = tensors
        self.metadata = metadata or {}

    @classmethod
    def initialize(cls, dims: ModelDims, rng: np.random.Generator,
                   symmetric_fusion: bool = False) -> "NcnParams":
        """
        Fresh parameters: weights uniform in +-sqrt(1/fan_in), zero biases

        Args:
            dims: Layer sizes
            rng: Generator for the init stream
            symmetric_fusion: Copy the first fusion column into the second so
                that every node starts with gates (0.5, 0.5)
        """
        tensors = {}
        for name, shape, fan_in in dims.layout():
            if name.endswith(".bias"):
                values = np.zeros(shape)
            else:
                bound = np.sqrt(1.0 / fan_in)
                values = rng.uniform(-bound, bound, size=shape)
            tensors[name] = values
        if symmetric_fusion and dims.has_fusion:
            tensors["fusion.weight"][:, 1] = tensors["fusion.weight"][:, 0]
        return cls(dims, {name: parameter(v, name=name) for name, v in tensors.items()})

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def parameters(self) -> List[Tensor]:
        return [self.tensors[name] for name, _, _ in self.dims.layout()]

    def param_count(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def restore(self, snapshot: Dict[str, np.ndarray]):
        for name, values in snapshot.items():
            self.tensors[name].data[...] = values

    def to_checkpoint(self, dir_path, metadata: Optional[dict] = None):
        meta = dict(self.metadata)
        meta.update(metadata or {})
        meta["dims"] = asdict(self.dims)
        save_checkpoint(dir_path, {name: t.data for name, t in self.tensors.items()}, meta)
        logger.info("Saved %d parameters (%d values) to %s", len(self.tensors), self.param_count(), dir_path)

    @classmethod
    def from_checkpoint(cls, dir_path) -> "NcnParams":
        arrays, metadata = load_checkpoint(dir_path)
        try:
            dims = ModelDims(**metadata["dims"])
        except (KeyError, TypeError) as e:
            raise CheckpointError(f"{dir_path}: checkpoint does not describe model dimensions ({e})")
        try:
            return cls(dims, {name: parameter(v, name=name) for name, v in arrays.items()}, metadata)
        except ShapeError as e:
            raise CheckpointError(f"{dir_path}: {e}")


@dataclass(frozen=True, eq=False)
class MaskPlan:
    """One epoch's partition of the training nodes into N0, N1 and N2"""
    n0: np.ndarray
    n1: np.ndarray
    n2: np.ndarray
    beta: float

    def roles_for(self, node_ids: Sequence[int]) -> np.ndarray:
        ids = np.asarray(node_ids)
        roles = np.full(ids.shape, KEEP, dtype=np.int8)
        roles[np.isin(ids, self.n0)] = ZERO_A0
        roles[np.isin(ids, self.n1)] = ZERO_A1
        return roles


def sample_mask_plan(train_ids: Sequence[int], beta: float, rng: np.random.Generator) -> MaskPlan:
    """Uniformly partition train_ids into N0, N1 (floor(beta*|train|) each) and N2"""
    if not 0.0 <= beta < 0.5:
        raise ConfigError(f"beta must lie in [0, 0.5), got {beta}")
    perm = rng.permutation(np.asarray(train_ids, dtype=np.int64))
    size = int(np.floor(beta * perm.size + 1e-9))
    return MaskPlan(n0=perm[:size], n1=perm[size:2 * size], n2=perm[2 * size:], beta=float(beta))


def _linear(params: NcnParams, prefix: str, x: Tensor) -> Tensor:
    return add_bias(matmul(x, params[f"{prefix}.weight"]), params[f"{prefix}.bias"])


def _block(params: NcnParams, prefix: str, x: Tensor) -> Tensor:
    h = conv2d_hx1(x, params[f"{prefix}.conv_a.weight"], params[f"{prefix}.conv_a.bias"])
    h = relu(h)
    return conv2d_hx1(h, params[f"{prefix}.conv_b.weight"], params[f"{prefix}.conv_b.bias"])


def _head(params: NcnParams, x: Tensor) -> Tensor:
    return _linear(params, "head.1", relu(_linear(params, "head.0", x)))


def _check_inputs(dims: ModelDims, grid_batch: np.ndarray, raw_batch: np.ndarray):
    batch = raw_batch.shape[0]
    if raw_batch.shape != (batch, dims.d):
        raise ShapeError(f"raw features must be B x {dims.d}, got {raw_batch.shape}")
    if dims.variant != "mlp_baseline" and grid_batch.shape != (batch, dims.K + 1, dims.d):
        raise ShapeError(
            f"grid batch must be {batch} x {dims.K + 1} x {dims.d}, got {grid_batch.shape}"
        )


def _neighborhood(params: NcnParams, grid_batch: np.ndarray) -> Tensor:
    dims = params.dims
    batch = grid_batch.shape[0]
    h = _linear(params, "reduce", constant(grid_batch))           # B, K+1, d'
    h = reshape(permute(h, (0, 2, 1)), (batch, dims.d_prime, dims.K + 1, 1))
    h = relu(_block(params, "block1", h))
    h = _block(params, "block2", h)                                # B, d', 1, 1
    return reshape(h, (batch, dims.d_prime))


def _gates(a: Tensor, roles: Optional[np.ndarray]) -> Tensor:
    if roles is None or not np.any(roles != KEEP):
        return a
    keep = np.zeros(a.shape, dtype=a.data.dtype)
    keep[roles == KEEP] = 1.0
    fixed = np.zeros(a.shape, dtype=a.data.dtype)
    fixed[roles == ZERO_A0, 1] = 1.0
    fixed[roles == ZERO_A1, 0] = 1.0
    return add(elementwise_mul(a, constant(keep)), constant(fixed))


def forward(params: NcnParams, grid_batch: np.ndarray, raw_batch: np.ndarray,
            mask_roles: Optional[np.ndarray] = None) -> Tuple[Tensor, Tensor]:
    """
    Full NCN forward pass

    Args:
        params: Model with a fusion layer (variant full or no_mask)
        grid_batch: B x (K+1) x d grid rows
        raw_batch: B x d raw features of the same nodes
        mask_roles: Per-node KEEP / ZERO_A0 / ZERO_A1, or None for no masking

    Returns:
        (logits B x c, pre-mask fusion weights B x 2)
    """
    dims = params.dims
    if not dims.has_fusion:
        raise ConfigError(f"variant {dims.variant} has no fusion layer")
    raw_batch = np.asarray(raw_batch)
    grid_batch = np.asarray(grid_batch)
    _check_inputs(dims, grid_batch, raw_batch)
    if mask_roles is not None:
        mask_roles = np.asarray(mask_roles)
        if mask_roles.shape != (raw_batch.shape[0],):
            raise ShapeError(f"expected {raw_batch.shape[0]} mask roles, got {mask_roles.shape}")

    h_n = _neighborhood(params, grid_batch)
    h_r = _linear(params, "raw", constant(raw_batch))
    a = softmax_last_dim(_linear(params, "fusion", concat_last_dim([h_r, h_n])))

    gates = _gates(a, mask_roles)
    width = dims.d_prime
    fused = concat_last_dim([
        elementwise_mul(expand_column(gates, 0, width), h_r),
        elementwise_mul(expand_column(gates, 1, width), h_n),
    ])
    logits = _head(params, fused)
    _check_finite(logits)
    return logits, a


def forward_variant(params: NcnParams, grid_batch: np.ndarray, raw_batch: np.ndarray,
                    mask_roles: Optional[np.ndarray] = None) -> Tensor:
    """Logits of whichever variant params were built for"""
    variant = params.dims.variant
    raw_batch = np.asarray(raw_batch)
    grid_batch = np.asarray(grid_batch)
    if variant == "full":
        return forward(params, grid_batch, raw_batch, mask_roles)[0]
    if variant == "no_mask":
        return forward(params, grid_batch, raw_batch, None)[0]

    _check_inputs(params.dims, grid_batch, raw_batch)
    if variant == "no_ra":
        logits = _head(params, _neighborhood(params, grid_batch))
    else:
        logits = _head(params, constant(raw_batch))
    _check_finite(logits)
    return logits


def _check_finite(logits: Tensor):
    if not np.all(np.isfinite(logits.data)):
        raise NumericError("model produced non-finite activations")


def _batches(node_ids: np.ndarray, batch_size: int):
    for start in range(0, node_ids.size, batch_size):
        yield node_ids[start:start + batch_size]


def predict(params: NcnParams, grid: GridTensor, raw: np.ndarray, node_ids: Sequence[int],
            batch_size: int = 1000) -> np.ndarray:
    """Logits for node_ids with masking disabled, shape |node_ids| x c"""
    ids = np.asarray(node_ids, dtype=np.int64)
    out = np.empty((ids.size, params.dims.c), dtype=np.float64)
    for start, batch in zip(range(0, ids.size, batch_size), _batches(ids, batch_size)):
        grid_batch = slice_batch(grid, batch) if params.dims.variant != "mlp_baseline" else None
        logits = forward_variant(params, grid_batch, raw[batch])
        out[start:start + batch.size] = logits.data
    return out


def export_fusion_weights(params: NcnParams, grid: GridTensor, raw: np.ndarray,
                          node_ids: Sequence[int], batch_size: int = 1000) -> List[Tuple[int, float, float]]:
    """Unmasked fusion gates (node_id, a0, a1) for every requested node"""
    ids = np.asarray(node_ids, dtype=np.int64)
    rows = []
    for batch in _batches(ids, batch_size):
        _, a = forward(params, slice_batch(grid, batch), raw[batch])
        rows.extend((int(v), float(a0), float(a1)) for v, (a0, a1) in zip(batch, a.data))
    return rows


def write_fusion_weights_csv(rows: Sequence[Tuple[int, float, float]], path) -> int:
    return write_rows("fusion_weights", path,
                      ({"node_id": v, "a0": a0, "a1": a1} for v, a0, a1 in rows))

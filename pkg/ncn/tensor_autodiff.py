"""
Dense tensors with tape-based reverse-mode differentiation.

Only the operations the NCN forward pass needs are provided. Ops executed
inside a `with Tape() as tape:` block are recorded in order; `tape.backward(loss)`
replays their backward rules in exact reverse order and accumulates gradients
additively into every input that requires them.

Training runs in float32; `precision(np.float64)` switches the engine to
float64 for gradient checks. Set NCN_CHECK_FINITE=1 to assert that every op
produces finite values.
"""

import hashlib
import json
import logging
import os
import threading
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CheckpointError, ConfigError, NumericError, ShapeError
from .utils.csv_manager import locked_write

logger = logging.getLogger(__name__)

CHECK_FINITE = os.environ.get("NCN_CHECK_FINITE", "0") == "1"

_default_dtype = np.float32
_local = threading.local()


def get_default_dtype():
    return _default_dtype


def set_default_dtype(dtype):
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ConfigError(f"engine dtype must be float32 or float64, got {dtype}")
    _default_dtype = dtype


@contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the engine's floating point type"""
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


class Tensor:
    """Dense array plus an optional gradient accumulator of the same shape"""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _default_dtype)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0)

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(data, name: Optional[str] = None) -> Tensor:
    """A trainable leaf tensor owning a copy of data"""
    return Tensor(np.array(data, dtype=_default_dtype), requires_grad=True, name=name)


def constant(data) -> Tensor:
    """A leaf tensor that never receives gradients"""
    return Tensor(data, requires_grad=False)


class Tape:
    """Ordered record of executed ops with their backward rules"""

    def __init__(self):
        self.records: List[Tuple[Tensor, Tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _local.tapes.pop()
        return False

    def record(self, output: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self.records.append((output, tuple(inputs), backward))

    def backward(self, loss: Tensor):
        """Propagate d(loss)/d(.) to every recorded input that requires a gradient"""
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ShapeError("loss does not depend on any trainable tensor recorded on this tape")
        loss.grad = np.ones_like(loss.data)

        for output, inputs, rule in reversed(self.records):
            grads = rule(output.grad)
            for tensor, grad in zip(inputs, grads):
                if grad is None or not tensor.requires_grad:
                    continue
                tensor.grad += grad


def _active_tape() -> Optional[Tape]:
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


def _result(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced non-finite values")
    tape = _active_tape()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=tracked, dtype=data.dtype)
    if tracked:
        tape.record(out, inputs, backward)
    return out


# ========== OPS ==========

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(..., p, q) @ (q, r) -> (..., p, r)"""
    if b.data.ndim != 2 or a.data.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    q, r = b.shape

    def backward(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, q).T @ g.reshape(-1, r)
        return ga, gb

    return _result(a.data @ b.data, (a, b), backward, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a length-r vector to the last dimension of x"""
    if bias.data.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"add_bias: bias {bias.shape} does not match {x.shape}")
    r = bias.shape[0]
    return _result(x.data + bias.data, (x, bias),
                   lambda g: (g, g.reshape(-1, r).sum(axis=0)), "add_bias")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0).astype(x.data.dtype), (x,),
                   lambda g: (g * mask,), "relu")


def concat_last_dim(tensors: Sequence[Tensor]) -> Tensor:
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(f"concat_last_dim: leading shapes {lead} and {t.shape[:-1]} differ")
    bounds = np.cumsum([t.shape[-1] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=-1))

    return _result(np.concatenate([t.data for t in tensors], axis=-1), tuple(tensors),
                   backward, "concat_last_dim")


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"elementwise_mul: shapes {a.shape} and {b.shape} differ")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "elementwise_mul")


def softmax_last_dim(x: Tensor) -> Tensor:
    if x.data.ndim == 0 or x.shape[-1] == 0:
        raise ShapeError("softmax over an empty dimension")
    shifted = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    s = shifted / shifted.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _result(s, (x,), backward, "softmax_last_dim")


def log_softmax(x: Tensor) -> Tensor:
    if x.data.ndim == 0 or x.shape[-1] == 0:
        raise ShapeError("log_softmax over an empty dimension")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return _result(out, (x,), backward, "log_softmax")


def nll_loss(log_probs: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer targets under (B, c) log-probabilities"""
    targets = np.asarray(targets, dtype=np.int64)
    if log_probs.data.ndim != 2 or targets.shape != (log_probs.shape[0],):
        raise ShapeError(f"nll_loss: predictions {log_probs.shape} do not match targets {targets.shape}")
    batch, classes = log_probs.shape
    if batch == 0:
        raise ShapeError("nll_loss over an empty batch")
    if targets.min() < 0 or targets.max() >= classes:
        raise ShapeError(f"nll_loss: target outside [0, {classes})")
    rows = np.arange(batch)
    value = -log_probs.data[rows, targets].mean()

    def backward(g):
        grad = np.zeros_like(log_probs.data)
        grad[rows, targets] = -g / batch
        return (grad,)

    return _result(np.asarray(value, dtype=log_probs.data.dtype), (log_probs,), backward, "nll_loss")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(original),), "reshape")


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    inverse = np.argsort(axes)
    return _result(np.ascontiguousarray(np.transpose(x.data, axes)), (x,),
                   lambda g: (np.transpose(g, inverse),), "permute")


def expand_column(a: Tensor, column: int, width: int) -> Tensor:
    """Repeat column `column` of a (B, k) tensor `width` times -> (B, width)"""
    if a.data.ndim != 2 or not 0 <= column < a.shape[1]:
        raise ShapeError(f"expand_column: column {column} not in tensor of shape {a.shape}")

    def backward(g):
        grad = np.zeros_like(a.data)
        grad[:, column] = g.sum(axis=1)
        return (grad,)

    data = np.repeat(a.data[:, column:column + 1], width, axis=1)
    return _result(data, (a,), backward, "expand_column")


def conv2d_hx1(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """
    Valid, stride-1 convolution with an (h, 1) kernel.

    x: (B, C_in, H, 1), kernel: (C_out, C_in, h, 1), bias: (C_out,)
    out[b, o, i, 0] = bias[o] + sum_{c, t} kernel[o, c, t, 0] * x[b, c, i + t, 0]
    """
    if x.data.ndim != 4 or x.shape[3] != 1 or kernel.data.ndim != 4 or kernel.shape[3] != 1:
        raise ShapeError(f"conv2d_hx1 expects (B, C, H, 1) input and (O, C, h, 1) kernel, got {x.shape} and {kernel.shape}")
    batch, c_in, height, _ = x.shape
    c_out, k_in, h, _ = kernel.shape
    if k_in != c_in:
        raise ShapeError(f"conv2d_hx1: kernel expects {k_in} input channels, input has {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv2d_hx1: bias shape {bias.shape} does not match {c_out} output channels")
    if h > height:
        raise ShapeError(f"conv2d_hx1: kernel height {h} exceeds input height {height}")
    out_h = height - h + 1

    # im2col: (B, out_h, C_in * h) with (channel, tap) ordering matching the kernel
    windows = sliding_window_view(x.data[..., 0], h, axis=2)
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(batch, out_h, c_in * h)
    kmat = kernel.data.reshape(c_out, c_in * h)
    out = (cols @ kmat.T + bias.data).transpose(0, 2, 1)[..., None]

    def backward(g):
        g2 = g[..., 0].transpose(0, 2, 1)  # (B, out_h, C_out)
        gk = (g2.reshape(-1, c_out).T @ cols.reshape(-1, c_in * h)).reshape(kernel.shape)
        gb = g2.sum(axis=(0, 1))
        gcols = (g2 @ kmat).reshape(batch, out_h, c_in, h)
        gx = np.zeros((batch, c_in, height), dtype=x.data.dtype)
        for t in range(h):
            gx[:, :, t:t + out_h] += gcols[:, :, :, t].transpose(0, 2, 1)
        return gx[..., None], gk, gb

    return _result(np.ascontiguousarray(out), (x, kernel, bias), backward, "conv2d_hx1")


# ========== OPTIMIZATION ==========

def adamw_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: Dict[str, list],
               lr: float, weight_decay: float, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8, t: int = 1):
    """
    One AdamW update, in place.

    Weight decay is decoupled: theta <- theta - lr * wd * theta is applied
    before the bias-corrected adaptive step. `state` holds the first and second
    moment estimates ("m", "v") and is created on first use.
    """
    if t < 1:
        raise ConfigError(f"AdamW step counter must be >= 1, got {t}")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; AdamW step rejected")
    if "m" not in state:
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]

    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if weight_decay:
            p -= lr * weight_decay * p
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


class AdamW:
    """AdamW optimizer over trainable tensors"""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, weight_decay: float = 1e-5,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.state: Dict[str, list] = {}

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        adamw_step([p.data for p in self.params], [p.grad for p in self.params], self.state,
                   lr=self.lr, weight_decay=self.weight_decay,
                   beta1=self.betas[0], beta2=self.betas[1], eps=self.eps, t=self.t)


def numerical_gradient(f: Callable[[], float], array: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central finite differences of a scalar function with respect to array (perturbed in place)"""
    grad = np.zeros(array.shape, dtype=np.float64)
    flat = array.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        upper = f()
        flat[i] = original - h
        lower = f()
        flat[i] = original
        grad.reshape(-1)[i] = (upper - lower) / (2.0 * h)
    return grad


# ========== CHECKPOINTS ==========

CHECKPOINT_FORMAT = "ncn-checkpoint"
CHECKPOINT_VERSION = 1
MANIFEST_FILE = "manifest.json"


def save_checkpoint(dir_path, tensors: Dict[str, np.ndarray], metadata: Optional[dict] = None):
    """
    Write parameters as a JSON manifest plus one raw little-endian f32 blob each

    Args:
        dir_path: Checkpoint directory (created if needed)
        tensors: Parameter name -> array
        metadata: JSON-serializable description of the model (dims, config)
    """
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)

    entries = []
    for name in sorted(tensors):
        blob = np.ascontiguousarray(tensors[name], dtype='<f4').tobytes()
        file_name = f"{name}.f32"
        with locked_write(dir_path / file_name, binary=True) as f:
            f.write(blob)
        entries.append({
            "name": name,
            "shape": list(np.shape(tensors[name])),
            "file": file_name,
            "sha256": hashlib.sha256(blob).hexdigest(),
        })

    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "params": entries,
        "metadata": metadata or {},
    }
    with locked_write(dir_path / MANIFEST_FILE) as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def load_checkpoint(dir_path) -> Tuple[Dict[str, np.ndarray], dict]:
    """Read a checkpoint directory; verifies format, shapes and blob hashes"""
    dir_path = Path(dir_path)
    manifest_path = dir_path / MANIFEST_FILE
    if not manifest_path.exists():
        raise CheckpointError(f"Checkpoint manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{manifest_path}: {e}")
    if manifest.get("format") != CHECKPOINT_FORMAT or manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{manifest_path}: unsupported checkpoint format")

    tensors = {}
    for entry in manifest.get("params", []):
        blob_path = dir_path / entry["file"]
        if not blob_path.exists():
            raise CheckpointError(f"Missing parameter blob: {blob_path}")
        blob = blob_path.read_bytes()
        if hashlib.sha256(blob).hexdigest() != entry["sha256"]:
            raise CheckpointError(f"{blob_path}: hash mismatch")
        shape = tuple(entry["shape"])
        if len(blob) != 4 * int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"{blob_path}: size does not match shape {shape}")
        tensors[entry["name"]] = np.frombuffer(blob, dtype='<f4').astype(np.float32).reshape(shape)
    return tensors, manifest.get("metadata", {})

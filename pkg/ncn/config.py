"""
Training configuration and JSON run specifications.

A run specification is one JSON file describing the dataset (a directory or a
synthetic SBM), the training configuration, optional propagation settings and
where artifacts go. Unknown keys are rejected at every level and relative paths
are resolved against the directory holding the file.

Example:
    {
      "dataset": "data/cora",
      "train": {"d_prime": 128, "beta": 0.2, "K": 4, "runs": 10, "seed": 7},
      "output_dir": "runs/cora"
    }
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace as dc_replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .dataset_io import DEFAULT_RATIOS, SEED_MAX, SbmSpec
from .errors import ConfigError
from .gna_preprocess import SCHEMES, PropagationSpec

logger = logging.getLogger(__name__)

VARIANTS = ("full", "no_ra", "no_mask", "mlp_baseline")

# Hyper-parameter grid searched for every dataset
SEARCH_GRID: Dict[str, List[Any]] = {
    "d_prime": [128, 256, 512],
    "beta": [0.1, 0.2, 0.3, 0.4],
    "K": [2, 4, 6, 8, 10],
    "lr": [1e-3, 5e-4, 1e-4],
    "weight_decay": [1e-4, 1e-5],
}

DEFAULT_K_VALUES = [2, 4, 6, 8, 10]


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters of one training experiment"""
    d_prime: int = 128
    beta: float = 0.2
    K: int = 4
    lr: float = 1e-3
    weight_decay: float = 1e-5
    gamma: float = 0.1
    scheme: str = "ppr"
    batch_size: int = 1000
    patience: int = 50
    max_epochs: int = 1000
    runs: int = 10
    workers: int = 1
    variant: str = "full"
    seed: int = 0
    hidden_channels: Optional[int] = None

    def validate(self) -> "TrainConfig":
        positive = ("d_prime", "batch_size", "patience", "max_epochs", "runs", "workers")
        for name in positive:
            value = getattr(self, name)
            if not _is_int(value) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.hidden_channels is not None and (not _is_int(self.hidden_channels) or self.hidden_channels < 1):
            raise ConfigError(f"hidden_channels must be a positive integer or null, got {self.hidden_channels!r}")
        if not _is_int(self.K) or self.K < 2 or self.K % 2:
            raise ConfigError(f"K must be an even integer >= 2, got {self.K!r}")
        if not _is_number(self.beta) or not 0.0 <= self.beta < 0.5:
            raise ConfigError(f"beta must lie in [0, 0.5), got {self.beta!r}")
        for name in ("lr", "weight_decay"):
            value = getattr(self, name)
            if not _is_number(value) or value < 0:
                raise ConfigError(f"{name} must be a non-negative number, got {value!r}")
        if not _is_number(self.gamma) or not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma!r}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {sorted(SCHEMES)}, got {self.scheme!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {list(VARIANTS)}, got {self.variant!r}")
        if not _is_int(self.seed) or not 0 <= self.seed <= SEED_MAX:
            raise ConfigError(f"seed must be an integer in [0, 2^64), got {self.seed!r}")
        return self

    def replace(self, **changes) -> "TrainConfig":
        """Validated copy with some fields changed"""
        return dc_replace(self, **changes).validate()

    def propagation(self) -> PropagationSpec:
        return PropagationSpec(scheme=self.scheme, K=self.K, gamma=self.gamma)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "TrainConfig":
        _reject_unknown(payload, {f.name for f in fields(cls)}, "train")
        return cls(**payload).validate()


@dataclass(frozen=True)
class SplitOptions:
    """How train/val/test splits are drawn for each run"""
    ratios: Tuple[float, float, float] = DEFAULT_RATIOS
    stratify: bool = False
    seed: Optional[int] = None      # fixed split for every run when set
    from_file: bool = False         # use the dataset's splits.json

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "SplitOptions":
        _reject_unknown(payload, {f.name for f in fields(cls)}, "split")
        options = cls(**payload)
        ratios = options.ratios
        if (not isinstance(ratios, (list, tuple)) or len(ratios) != 3
                or not all(_is_number(r) and r >= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9):
            raise ConfigError(f"split.ratios must be three non-negative numbers summing to 1, got {ratios!r}")
        if options.seed is not None and (not _is_int(options.seed) or not 0 <= options.seed <= SEED_MAX):
            raise ConfigError(f"split.seed must be an integer in [0, 2^64), got {options.seed!r}")
        return dc_replace(options, ratios=tuple(float(r) for r in ratios))


@dataclass(frozen=True)
class RunSpec:
    """A fully resolved run specification"""
    train: TrainConfig
    output_dir: Path
    dataset: Optional[Path] = None
    synthetic: Optional[SbmSpec] = None
    split: SplitOptions = field(default_factory=SplitOptions)
    k_values: Tuple[int, ...] = tuple(DEFAULT_K_VALUES)
    grid: Optional[Dict[str, List[Any]]] = None
    source: Optional[Path] = None


_RUN_SPEC_KEYS = {"dataset", "synthetic", "train", "propagation", "output_dir", "split", "k_values", "grid"}


def _reject_unknown(payload: Any, allowed: set, where: str):
    if not isinstance(payload, dict):
        raise ConfigError(f"{where}: expected a JSON object, got {type(payload).__name__}")
    unknown = sorted(set(payload) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")


def _resolve(base: Path, value: Any, key: str) -> Path:
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{key} must be a non-empty path string")
    path = Path(value).expanduser()
    return path if path.is_absolute() else (base / path).resolve()


def _parse_grid(payload: Any) -> Dict[str, List[Any]]:
    _reject_unknown(payload, set(SEARCH_GRID), "grid")
    grid = {}
    for key, values in payload.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid.{key} must be a non-empty list")
        grid[key] = values
    return grid


def parse_run_spec(payload: Dict[str, Any], base_dir: Path, source: Optional[Path] = None) -> RunSpec:
    """Validate a decoded run specification and resolve its paths against base_dir"""
    _reject_unknown(payload, _RUN_SPEC_KEYS, "config")

    has_dataset = "dataset" in payload
    has_synthetic = "synthetic" in payload
    if has_dataset == has_synthetic:
        raise ConfigError("config must name exactly one of 'dataset' or 'synthetic'")
    if "output_dir" not in payload:
        raise ConfigError("config is missing 'output_dir'")

    train = TrainConfig.from_dict(payload.get("train", {}))

    if "propagation" in payload:
        prop = payload["propagation"]
        _reject_unknown(prop, {"scheme", "K", "gamma"}, "propagation")
        for key in ("scheme", "K", "gamma"):
            if key in prop and prop[key] != getattr(train, key):
                raise ConfigError(
                    f"propagation.{key}={prop[key]!r} disagrees with train.{key}={getattr(train, key)!r}"
                )

    dataset = _resolve(base_dir, payload["dataset"], "dataset") if has_dataset else None
    synthetic = None
    if has_synthetic:
        sbm = payload["synthetic"]
        _reject_unknown(sbm, {f.name for f in fields(SbmSpec)}, "synthetic")
        try:
            synthetic = SbmSpec(**sbm)
        except TypeError as e:
            raise ConfigError(f"synthetic: {e}")
        synthetic.validate()

    split = SplitOptions.from_dict(payload.get("split", {}))
    if split.from_file and not has_dataset:
        raise ConfigError("split.from_file needs a dataset directory")

    k_values = payload.get("k_values", DEFAULT_K_VALUES)
    if not isinstance(k_values, list) or not k_values:
        raise ConfigError("k_values must be a non-empty list")
    for k in k_values:
        train.replace(K=k)

    grid = _parse_grid(payload["grid"]) if "grid" in payload else None

    return RunSpec(
        train=train,
        output_dir=_resolve(base_dir, payload["output_dir"], "output_dir"),
        dataset=dataset,
        synthetic=synthetic,
        split=split,
        k_values=tuple(sorted(int(k) for k in k_values)),
        grid=grid,
        source=source,
    )


def load_run_spec(path) -> RunSpec:
    """Read a JSON run specification from disk"""
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"Config file not found: {config_path}")
    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            payload = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{config_path}: invalid JSON ({e})")
    spec = parse_run_spec(payload, config_path.resolve().parent, source=config_path)
    logger.debug("Loaded run spec from %s: %s", config_path, spec)
    return spec


def grid_combinations(grid: Dict[str, Sequence[Any]]) -> List[Dict[str, Any]]:
    """Cartesian product of a hyper-parameter grid, in key order of SEARCH_GRID"""
    keys = [k for k in SEARCH_GRID if k in grid]
    combos: List[Dict[str, Any]] = [{}]
    for key in keys:
        combos = [dict(c, **{key: v}) for c in combos for v in grid[key]]
    return combos

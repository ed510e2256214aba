"""
CSV and artifact management utilities.

Provides schema validation for every table the toolkit writes, locked atomic
writes for output artifacts (grid files, checkpoints, metrics), and the loader
for the published metrics schema.
Cross-platform compatible (Linux, macOS, Windows).
"""

import csv
import json
import logging
import os
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional

from ..errors import ArtifactLockError, DatasetFormatError

# Platform-specific imports for file locking
if sys.platform == 'win32':
    import msvcrt  # Windows file locking
    LOCK_AVAILABLE = True
else:
    try:
        import fcntl  # Unix/Linux/macOS file locking
        LOCK_AVAILABLE = True
    except ImportError:
        LOCK_AVAILABLE = False

logger = logging.getLogger(__name__)

METRICS_SCHEMA_PATH = Path(__file__).resolve().parent.parent / "schemas" / "metrics.schema.json"


def _is_int(value: str) -> bool:
    try:
        int(value)
        return True
    except (TypeError, ValueError):
        return False


def _is_real(value: str) -> bool:
    try:
        float(value)
        return True
    except (TypeError, ValueError):
        return False


def _is_unit_interval(value: str) -> bool:
    return _is_real(value) and 0.0 <= float(value) <= 1.0


def _is_non_negative(value: str) -> bool:
    return _is_real(value) and float(value) >= 0.0


class CSVSchema:
    """Schema definition for CSV tables with validation rules"""

    def __init__(self, name: str, columns: List[str],
                 validators: Optional[Dict[str, Callable[[str], bool]]] = None):
        self.name = name
        self.columns = columns
        self.validators = validators or {}

    def validate_row(self, row: Dict[str, Any]) -> tuple[bool, Optional[str]]:
        """Validate a single row against schema. Returns (is_valid, error_message)"""
        for col in self.columns:
            if col not in row or row[col] is None or str(row[col]) == "":
                return False, f"Missing required column: {col}"

        for col in row.keys():
            if col not in self.columns:
                return False, f"Unknown column: {col}"

        for col, validator in self.validators.items():
            if not validator(str(row[col])):
                return False, f"Validation failed for {col}: {row[col]}"

        return True, None


# Every table the toolkit emits
SCHEMAS = {
    "sweep_k": CSVSchema(
        name="sweep_k",
        columns=["K", "mean_acc", "std_acc", "runs"],
        validators={
            "K": lambda x: _is_int(x) and int(x) >= 1,
            "mean_acc": _is_unit_interval,
            "std_acc": _is_non_negative,
            "runs": lambda x: _is_int(x) and int(x) >= 1,
        }
    ),
    "grid_search": CSVSchema(
        name="grid_search",
        columns=["d_prime", "beta", "K", "lr", "weight_decay",
                 "mean_val_acc", "std_val_acc", "mean_test_acc", "std_test_acc"],
        validators={
            "d_prime": lambda x: _is_int(x) and int(x) >= 1,
            "beta": lambda x: _is_real(x) and 0.0 <= float(x) < 0.5,
            "K": lambda x: _is_int(x) and int(x) >= 2,
            "lr": _is_non_negative,
            "weight_decay": _is_non_negative,
            "mean_val_acc": _is_unit_interval,
            "std_val_acc": _is_non_negative,
            "mean_test_acc": _is_unit_interval,
            "std_test_acc": _is_non_negative,
        }
    ),
    "fusion_weights": CSVSchema(
        name="fusion_weights",
        columns=["node_id", "a0", "a1"],
        validators={
            "node_id": lambda x: _is_int(x) and int(x) >= 0,
            "a0": _is_unit_interval,
            "a1": _is_unit_interval,
        }
    ),
    "epoch_benchmark": CSVSchema(
        name="epoch_benchmark",
        columns=["n", "m", "preprocess_ms", "epoch_ms"],
        validators={
            "n": lambda x: _is_int(x) and int(x) >= 1,
            "m": lambda x: _is_int(x) and int(x) >= 0,
            "preprocess_ms": _is_non_negative,
            "epoch_ms": _is_non_negative,
        }
    ),
}


@contextmanager
def _lock_file(file_path: Path):
    """
    Context manager for file locking (cross-platform)
    Works on Linux, macOS, and Windows
    """
    if not LOCK_AVAILABLE:
        yield
        return

    lock_file = file_path.parent / f".{file_path.name}.lock"
    lock_file.touch(exist_ok=True)

    with open(lock_file, 'w') as lock_handle:
        try:
            if sys.platform == 'win32':
                msvcrt.locking(lock_handle.fileno(), msvcrt.LK_NBLCK, 1)
            else:
                fcntl.flock(lock_handle.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
        except (IOError, OSError) as e:
            raise ArtifactLockError(f"Could not acquire lock for {file_path}: {e}")

        try:
            yield
        finally:
            try:
                if sys.platform == 'win32':
                    msvcrt.locking(lock_handle.fileno(), msvcrt.LK_UNLCK, 1)
                else:
                    fcntl.flock(lock_handle.fileno(), fcntl.LOCK_UN)
            except OSError:
                pass  # Ignore unlock errors


@contextmanager
def locked_write(path, binary: bool = False) -> Iterator[Any]:
    """
    Write an artifact atomically under a lock.

    Content goes to a temporary file next to the target and is moved into place
    only when the block completes, so readers never see a partial artifact.

    Args:
        path: Destination file
        binary: Open the temporary file in binary mode

    Yields:
        Writable file handle
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)

    with _lock_file(target):
        fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
        try:
            if binary:
                handle = os.fdopen(fd, 'wb')
            else:
                handle = os.fdopen(fd, 'w', newline='', encoding='utf-8')
            with handle:
                yield handle
            os.replace(tmp_name, target)
        except BaseException:
            try:
                os.unlink(tmp_name)
            except OSError:
                pass
            raise
    logger.info("Wrote %s", target)


def format_value(value: Any) -> str:
    """Format a cell so that reals survive a write/read round trip exactly"""
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def write_rows(schema_name: str, path, rows: Iterable[Dict[str, Any]]) -> int:
    """
    Validate and write rows to a CSV table

    Args:
        schema_name: Name of the schema (e.g., 'sweep_k', 'fusion_weights')
        path: Destination CSV path
        rows: Dictionaries keyed by the schema columns

    Returns:
        Number of rows written
    """
    schema = SCHEMAS.get(schema_name)
    if not schema:
        raise ValueError(f"Unknown schema: {schema_name}")

    formatted = []
    for i, row in enumerate(rows):
        cells = {k: format_value(v) for k, v in row.items()}
        is_valid, error = schema.validate_row(cells)
        if not is_valid:
            raise DatasetFormatError(f"{schema_name} row {i}: {error}")
        formatted.append(cells)

    with locked_write(path) as f:
        writer = csv.DictWriter(f, fieldnames=schema.columns, lineterminator='\n')
        writer.writeheader()
        writer.writerows(formatted)

    return len(formatted)


def read_rows(schema_name: str, path) -> List[Dict[str, str]]:
    """Read a CSV table written by write_rows, validating every row"""
    schema = SCHEMAS.get(schema_name)
    if not schema:
        raise ValueError(f"Unknown schema: {schema_name}")

    file_path = Path(path)
    if not file_path.exists():
        raise DatasetFormatError(f"File not found: {file_path}")

    rows = []
    with open(file_path, 'r', newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != schema.columns:
            raise DatasetFormatError(
                f"{file_path}: Column mismatch. Expected {schema.columns}, got {reader.fieldnames}"
            )
        for line_no, row in enumerate(reader, start=2):
            is_valid, error = schema.validate_row(row)
            if not is_valid:
                raise DatasetFormatError(f"{file_path}:{line_no}: {error}")
            rows.append(row)
    return rows


_JSON_TYPES = {
    "number": (int, float),
    "integer": (int,),
    "string": (str,),
    "boolean": (bool,),
    "array": (list,),
    "object": (dict,),
}


class RecordSchema:
    """Validates JSON documents against a field specification file"""

    def __init__(self, spec: Dict[str, Any]):
        self.name = spec["name"]
        self.version = spec["version"]
        self.spec = spec

    @classmethod
    def from_file(cls, path=METRICS_SCHEMA_PATH) -> "RecordSchema":
        with open(path, 'r', encoding='utf-8') as f:
            return cls(json.load(f))

    def validate(self, document: Dict[str, Any]) -> List[str]:
        """Return a list of violations (empty when the document is valid)"""
        errors: List[str] = []
        if document.get("schema") != self.name:
            errors.append(f"schema tag is {document.get('schema')!r}, expected {self.name!r}")
        if document.get("version") != self.version:
            errors.append(f"version is {document.get('version')!r}, expected {self.version!r}")
        self._check_object(document, self.spec["fields"], "", errors)
        return errors

    def _check_object(self, obj: Dict[str, Any], fields: Dict[str, Any],
                      where: str, errors: List[str]):
        for key in obj:
            if key not in fields:
                errors.append(f"{where}{key}: unknown field")
        for key, rule in fields.items():
            if key not in obj:
                if rule.get("required", True):
                    errors.append(f"{where}{key}: missing")
                continue
            self._check_value(obj[key], rule, f"{where}{key}", errors)

    def _check_value(self, value: Any, rule: Dict[str, Any], where: str, errors: List[str]):
        if value is None:
            if not rule.get("nullable", False):
                errors.append(f"{where}: null not allowed")
            return
        kind = rule["type"]
        # bool is an int subclass in Python
        if isinstance(value, bool) and kind in ("number", "integer"):
            errors.append(f"{where}: expected {kind}, got boolean")
            return
        if not isinstance(value, _JSON_TYPES[kind]):
            errors.append(f"{where}: expected {kind}, got {type(value).__name__}")
            return
        if kind in ("number", "integer"):
            if "min" in rule and value < rule["min"]:
                errors.append(f"{where}: {value} below minimum {rule['min']}")
            if "max" in rule and value > rule["max"]:
                errors.append(f"{where}: {value} above maximum {rule['max']}")
        elif kind == "string" and "enum" in rule and value not in rule["enum"]:
            errors.append(f"{where}: {value!r} not in {rule['enum']}")
        elif kind == "array" and "items" in rule:
            for i, item in enumerate(value):
                self._check_value(item, rule["items"], f"{where}[{i}]", errors)
        elif kind == "object" and "fields" in rule:
            self._check_object(value, rule["fields"], f"{where}.", errors)

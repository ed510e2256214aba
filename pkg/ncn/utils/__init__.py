"""
File-format utilities

Schema-checked CSV tables, locked atomic artifact writes and the dataset
validation report.
"""

from .csv_manager import (
    CSVSchema,
    RecordSchema,
    SCHEMAS,
    locked_write,
    read_rows,
    write_rows,
)

__all__ = [
    'CSVSchema',
    'RecordSchema',
    'SCHEMAS',
    'locked_write',
    'read_rows',
    'write_rows',
]

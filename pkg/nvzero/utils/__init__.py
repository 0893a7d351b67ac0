"""Utility modules for nvzero."""

from .csv_io import CSV_SCHEMAS, SCHEMA_VERSION, read_csv, read_spectrum_csv, write_csv
from .seeding import derive_seeds, make_rng

__all__ = [
    "CSV_SCHEMAS",
    "SCHEMA_VERSION",
    "read_csv",
    "read_spectrum_csv",
    "write_csv",
    "derive_seeds",
    "make_rng",
]

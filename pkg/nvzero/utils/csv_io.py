"""CSV export and import with a versioned column schema.

Every file starts with a ``schema_version`` column so readers can reject files
written by an incompatible release. Columns are validated on write and on read.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import pandas as pd

from ..exceptions import ValidationError
from ..models import Spectrum

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# kind -> (required columns, allowed column prefix for variable columns)
CSV_SCHEMAS: Dict[str, Tuple[List[str], Optional[str]]] = {
    "transitions": (
        ["label", "spin", "branch", "freq_offset_MHz", "amp_L", "amp_R", "amp_H", "amp_V"],
        None,
    ),
    "spectrum": (["freq_offset_MHz", "counts"], None),
    "trajectory": (["t_ns", "fluorescence_cps"], "pop_"),
    "pump_trace": (["t_ns", "fluorescence_cps"], None),
    "pump_probe": (["t_delay_ns", "ratio"], None),
    "saturation": (["power_nW", "fluorescence_cps"], None),
    "recharge": (["t_s", "nv_minus"], None),
    "rate_curve": (["t_s", "N", "D", "U"], None),
    "histogram": (["counts", "occurrences"], None),
    "sweep": (["angle_deg", "amp_down", "amp_up"], None),
}


def _validate_columns(df: pd.DataFrame, kind: str) -> None:
    if kind not in CSV_SCHEMAS:
        raise ValidationError(f"Unknown CSV kind '{kind}'. Available: {', '.join(CSV_SCHEMAS)}")
    required, prefix = CSV_SCHEMAS[kind]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise ValidationError(f"CSV '{kind}' missing columns: {missing}")
    extra = [c for c in df.columns if c not in required and c != "schema_version"]
    if extra and (prefix is None or not all(c.startswith(prefix) for c in extra)):
        raise ValidationError(f"CSV '{kind}' has unexpected columns: {extra}")


def write_csv(df: pd.DataFrame, path: Union[str, Path], kind: str) -> Path:
    """Validate ``df`` against the ``kind`` schema and write it with a version column."""
    _validate_columns(df, kind)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = df.copy()
    out.insert(0, "schema_version", SCHEMA_VERSION)
    out.to_csv(path, index=False)
    logger.debug(f"Wrote {len(out)} rows of '{kind}' to {path}")
    return path


def read_csv(path: Union[str, Path], kind: str) -> pd.DataFrame:
    """Read a file written by :func:`write_csv`; the version column is dropped.

    Raises:
        ValidationError: Missing file, wrong schema version or wrong columns.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"CSV file not found: {path}")
    df = pd.read_csv(path)
    if "schema_version" not in df.columns:
        raise ValidationError(f"{path} has no schema_version column")
    versions = set(df["schema_version"].unique())
    if versions and versions != {SCHEMA_VERSION}:
        raise ValidationError(f"{path} has schema version(s) {sorted(versions)}, "
                              f"expected {SCHEMA_VERSION}")
    df = df.drop(columns=["schema_version"])
    _validate_columns(df, kind)
    return df


def read_spectrum_csv(path: Union[str, Path]) -> Spectrum:
    df = read_csv(path, "spectrum")
    return Spectrum(df["freq_offset_MHz"].to_numpy(), df["counts"].to_numpy())

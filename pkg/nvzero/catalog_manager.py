"""Preset catalog manager for loading and caching named parameter sets.

This module loads the preset catalog from catalog/presets.json. The catalog has one
mapping per configuration section (``nv``, ``lindblad``, ``protocol``,
``spectrum``, ``rates``); each maps preset names to plain key/value dictionaries
that the configuration models validate.
"""

import copy
import json
import logging
import threading
from pathlib import Path
from typing import Any, Dict, List, Optional

from .exceptions import ConfigurationError

logger = logging.getLogger(__name__)

# Global catalog cache with thread safety
_catalog_lock = threading.Lock()
_CATALOG_CACHE: Optional[Dict[str, Any]] = None
_CATALOG_PATH: Optional[Path] = None

CATALOG_SECTIONS = ("nv", "lindblad", "protocol", "spectrum", "rates")


def get_catalog_path() -> Path:
    """Get path to catalog/presets.json file."""
    global _CATALOG_PATH
    if _CATALOG_PATH is None:
        _CATALOG_PATH = Path(__file__).parent.parent / "catalog" / "presets.json"
    return _CATALOG_PATH


def set_catalog_path(path: Optional[Path]) -> None:
    """Point the manager at another catalog file and drop the cache."""
    global _CATALOG_PATH, _CATALOG_CACHE
    with _catalog_lock:
        _CATALOG_PATH = Path(path) if path is not None else None
        _CATALOG_CACHE = None


def load_catalog(force_reload: bool = False) -> Dict[str, Any]:
    """Load the preset catalog from JSON.

    Args:
        force_reload: If True, reload from disk even if cached

    Returns:
        Catalog dictionary with structure:
        {
            "version": "1.0.0",
            "presets": {
                "nv": {"nv_a_method1": {...}, ...},
                "lindblad": {...},
                ...
            }
        }

    Raises:
        ConfigurationError: Catalog file missing or malformed.
    """
    global _CATALOG_CACHE

    # Double-checked locking for thread safety
    if _CATALOG_CACHE is not None and not force_reload:
        return _CATALOG_CACHE

    with _catalog_lock:
        if _CATALOG_CACHE is not None and not force_reload:
            return _CATALOG_CACHE

        catalog_path = get_catalog_path()
        if not catalog_path.exists():
            logger.error(f"Preset catalog not found: {catalog_path}")
            raise ConfigurationError(f"Preset catalog not found at {catalog_path}", key="catalog")

        try:
            with open(catalog_path, "r", encoding="utf-8") as f:
                catalog = json.load(f)
        except json.JSONDecodeError as e:
            logger.error(f"Invalid JSON in preset catalog: {e}")
            raise ConfigurationError(f"Failed to parse preset catalog: {e}", key="catalog")

        if not isinstance(catalog, dict) or "presets" not in catalog:
            raise ConfigurationError("Catalog missing 'presets' key", key="catalog")
        unknown = set(catalog["presets"]) - set(CATALOG_SECTIONS)
        if unknown:
            raise ConfigurationError(f"Unknown catalog sections: {sorted(unknown)}", key="catalog")

        _CATALOG_CACHE = catalog
        logger.info(f"Loaded preset catalog version {catalog.get('version', 'unknown')}")
        return catalog


def list_presets(section: Optional[str] = None) -> Dict[str, List[str]]:
    """Preset names per section (or for one section)."""
    presets = load_catalog().get("presets", {})
    sections = [section] if section else list(CATALOG_SECTIONS)
    return {name: sorted(presets.get(name, {})) for name in sections}


def get_preset(section: str, name: str) -> Dict[str, Any]:
    """Key/value dictionary of one preset.

    A copy is returned; callers may mutate it. Keys starting with an underscore are
    documentation only and are stripped.

    Raises:
        ConfigurationError: Unknown section or preset name.

    Example:
        >>> get_preset("nv", "nv_a_method1")["eps_perp"]
        1.9
    """
    presets = load_catalog().get("presets", {})
    if section not in presets:
        raise ConfigurationError(f"No presets for section '{section}'", key=section)
    if name not in presets[section]:
        available = ", ".join(sorted(presets[section]))
        raise ConfigurationError(
            f"Unknown preset '{name}'. Available: {available}", key=section
        )
    entry = copy.deepcopy(presets[section][name])
    return {k: v for k, v in entry.items() if not k.startswith("_")}


def get_preset_description(section: str, name: str) -> str:
    presets = load_catalog().get("presets", {})
    return presets.get(section, {}).get(name, {}).get("_description", "")


def get_catalog_version() -> str:
    """Get catalog version string."""
    return load_catalog().get("version", "unknown")

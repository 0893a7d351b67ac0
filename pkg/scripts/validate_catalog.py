#!/usr/bin/env python3
"""Validate catalog/presets.json.

This script checks:
- JSON syntax is valid
- Required top-level fields and semver version
- Every preset has a description
- Every preset builds a valid configuration model
- Rate presets carry positive timescales and valid initial populations

Usage:
    python scripts/validate_catalog.py
"""

import json
import sys
from pathlib import Path
from typing import Any, Dict, List

PROJECT_ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from nvzero.catalog_manager import CATALOG_SECTIONS, set_catalog_path  # noqa: E402
from nvzero.config import resolve_section  # noqa: E402
from nvzero.exceptions import NVSimError  # noqa: E402
from nvzero.rate_models import ThreeLevelRates  # noqa: E402


def load_json_file(path: Path) -> Dict[str, Any]:
    """Load and parse JSON file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        print(f"❌ Invalid JSON in {path}: {e}")
        sys.exit(1)
    except FileNotFoundError:
        print(f"❌ File not found: {path}")
        sys.exit(1)


def validate_header(catalog: Dict[str, Any]) -> List[str]:
    errors = []
    for field in ("version", "updated", "presets"):
        if field not in catalog:
            errors.append(f"Missing required field: {field}")
    version = catalog.get("version", "")
    parts = str(version).split(".")
    if len(parts) != 3 or not all(p.isdigit() for p in parts):
        errors.append(f"Invalid version format: {version} (expected semver like 1.0.0)")
    return errors


def validate_presets(presets: Dict[str, Dict[str, Any]]) -> List[str]:
    """Build every preset through the configuration layer."""
    errors = []
    for section, entries in presets.items():
        if section not in CATALOG_SECTIONS:
            errors.append(f"Unknown section: {section}")
            continue
        for name, data in entries.items():
            if not data.get("_description"):
                errors.append(f"{section}/{name}: Missing _description")
            try:
                if section == "rates":
                    _, c1, c2 = ThreeLevelRates.from_preset(name)
                    if c1 + c2 > 1.0:
                        errors.append(f"{section}/{name}: c1 + c2 exceeds 1")
                else:
                    resolve_section(section, {"preset": name})
            except NVSimError as e:
                errors.append(f"{section}/{name}: {e}")
    return errors


def main():
    """Main validation function."""
    catalog_path = PROJECT_ROOT / "catalog" / "presets.json"
    print("🔍 Validating preset catalog...")
    print(f"   Catalog: {catalog_path}")
    print()

    catalog = load_json_file(catalog_path)
    print("✓ JSON syntax valid")
    set_catalog_path(catalog_path)

    all_errors = validate_header(catalog)
    if "presets" in catalog:
        preset_errors = validate_presets(catalog["presets"])
        all_errors.extend(preset_errors)
        if not preset_errors:
            total = sum(len(entries) for entries in catalog["presets"].values())
            print(f"✓ {total} presets in {len(catalog['presets'])} sections build valid configurations")

    print()
    if all_errors:
        print(f"❌ Validation failed with {len(all_errors)} errors:")
        for error in all_errors:
            print(f"   - {error}")
        sys.exit(1)
    print("✅ Catalog validation passed!")
    print(f"   Version: {catalog.get('version', 'unknown')}")
    print(f"   Updated: {catalog.get('updated', 'unknown')}")


if __name__ == "__main__":
    main()

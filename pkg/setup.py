"""Setup script for the nvzero package.

For backwards compatibility. Modern installation uses pyproject.toml.
"""

from setuptools import setup

# Configuration is in pyproject.toml
setup()

"""nvzero CLI package."""

from .nvzero_cli import app, main

__all__ = ["app", "main"]

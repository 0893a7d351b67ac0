"""Test suite for nvzero."""

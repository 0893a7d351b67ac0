"""Shared fixtures for the nvzero tests."""

import pytest

from nvzero.caching import clear_cache
from nvzero.config import FineStructureParams, LindbladConfig, ProtocolConfig, load_params_preset


@pytest.fixture(autouse=True)
def _fresh_result_cache():
    """Start every test with an empty global result cache."""
    clear_cache()
    yield
    clear_cache()


@pytest.fixture
def nv_params() -> FineStructureParams:
    """Mean fitted parameters of NV A (l=0.039, λ=4.9 GHz, ε⊥=1.9 GHz)."""
    return load_params_preset("nv_a_mean")


@pytest.fixture
def trivial_params() -> FineStructureParams:
    """g=2, l=0, λ=1 GHz, no strain, no field."""
    return FineStructureParams(g=2.0, l=0.0, lambda_so=1.0, eps_perp=0.0, b_z=0.0)


@pytest.fixture
def fast_lindblad() -> LindbladConfig:
    """Master-equation settings with a small detuning ensemble."""
    return LindbladConfig(n_samples=3)


@pytest.fixture
def protocol_cfg() -> ProtocolConfig:
    return ProtocolConfig()

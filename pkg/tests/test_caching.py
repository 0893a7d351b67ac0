"""Tests for caching functionality."""

from unittest.mock import MagicMock

import numpy as np
import pytest

from nvzero.caching import (
    ResultCache,
    cached_result,
    clear_cache,
    generate_cache_key,
    get_cache_stats,
)
from nvzero.config import LindbladConfig
from nvzero.dynamics import steady_state


class TestCacheKey:
    """Tests for cache key generation."""

    def test_generate_cache_key_basic(self):
        """Test basic cache key generation."""
        key = generate_cache_key("steady_state", power_nw=5.0)
        assert isinstance(key, str)
        assert len(key) == 64  # SHA256 hash length

    def test_same_inputs_same_key(self):
        """Test that equal inputs generate the same key regardless of order."""
        cfg = LindbladConfig()
        key1 = generate_cache_key("steady_state", cfg=cfg, power_nw=5.0)
        key2 = generate_cache_key("steady_state", power_nw=5.0, cfg=LindbladConfig())
        assert key1 == key2

    def test_kind_changes_key(self):
        """Test that the result kind is part of the key."""
        assert generate_cache_key("a", x=1) != generate_cache_key("b", x=1)

    def test_config_values_change_key(self):
        """Test that configuration models are keyed by value."""
        key1 = generate_cache_key("k", cfg=LindbladConfig(tau_orbit_ns=430.0))
        key2 = generate_cache_key("k", cfg=LindbladConfig(tau_orbit_ns=50.0))
        assert key1 != key2

    def test_arrays_keyed_by_value(self):
        """Test that arrays, including complex ones, are keyed by content."""
        a = np.array([1.0, 2.0])
        assert generate_cache_key("k", x=a) == generate_cache_key("k", x=a.copy())
        assert generate_cache_key("k", x=a) != generate_cache_key("k", x=a + 1e-9)
        z = np.array([1 + 1j])
        assert generate_cache_key("k", x=z) != generate_cache_key("k", x=z.conj())

    def test_numpy_scalars_match_python(self):
        """Test that numpy scalars key like the equivalent Python numbers."""
        assert generate_cache_key("k", x=np.float64(0.5)) == generate_cache_key("k", x=0.5)


class TestResultCache:
    """Tests for the ResultCache class."""

    def test_set_and_get(self):
        """Test storing and retrieving a value."""
        cache = ResultCache()
        cache.set("key", np.eye(2), label="steady_state")
        np.testing.assert_array_equal(cache.get("key"), np.eye(2))

    def test_miss_returns_none(self):
        """Test that a missing key returns None and counts a miss."""
        cache = ResultCache()
        assert cache.get("missing") is None
        assert cache.get_stats()["total_misses"] == 1

    def test_lru_eviction(self):
        """Test that the least recently used entry is evicted."""
        cache = ResultCache(max_size=2)
        cache.set("a", 1)
        cache.set("b", 2)
        cache.get("a")
        cache.set("c", 3)
        assert cache.get("b") is None
        assert cache.get("a") == 1
        assert cache.get("c") == 3

    def test_overwrite_does_not_evict(self):
        """Test that replacing an existing key keeps the other entries."""
        cache = ResultCache(max_size=2)
        cache.set("a", 1)
        cache.set("b", 2)
        cache.set("a", 10)
        assert cache.get("a") == 10
        assert cache.get("b") == 2

    def test_stats(self):
        """Test hit and miss statistics."""
        cache = ResultCache(max_size=5)
        cache.set("a", 1)
        cache.get("a")
        cache.get("a")
        cache.get("x")
        stats = cache.get_stats()
        assert stats["size"] == 1
        assert stats["max_size"] == 5
        assert stats["total_hits"] == 2
        assert stats["total_misses"] == 1
        assert stats["hit_rate"] == pytest.approx(200.0 / 3.0)

    def test_entries_sorted_by_hits(self):
        """Test that entries are listed with the most used first."""
        cache = ResultCache()
        cache.set("a" * 20, 1, label="pump_state")
        cache.set("b" * 20, 2, label="steady_state")
        cache.get("b" * 20)
        entries = cache.get_entries()
        assert entries[0]["label"] == "steady_state"
        assert entries[0]["key"] == "b" * 16 + "..."

    def test_clear(self):
        """Test clearing entries and statistics."""
        cache = ResultCache()
        cache.set("a", 1)
        cache.get("x")
        cache.clear()
        assert cache.get_stats()["size"] == 0
        assert cache.get_stats()["total_misses"] == 0


class TestCachedResult:
    """Tests for the cached_result decorator."""

    def test_memoizes(self):
        """Test that repeated calls reuse the stored value."""
        cache = ResultCache()
        compute = MagicMock(return_value=np.ones(3))

        @cached_result("demo", cache)
        def f(x, scale=1.0):
            return compute(x, scale)

        f(1.0)
        f(1.0)
        f(x=1.0, scale=1.0)
        assert compute.call_count == 1
        f(2.0)
        assert compute.call_count == 2

    def test_defaults_normalized(self):
        """Test that explicit defaults share the key of omitted ones."""
        cache = ResultCache()

        @cached_result("demo", cache)
        def f(x, scale=1.0):
            return x * scale

        f(3.0)
        f(3.0, 1.0)
        assert cache.get_stats()["size"] == 1

    def test_global_cache_used_by_steady_state(self):
        """Test that steady states land in the global cache."""
        clear_cache()
        cfg = LindbladConfig(n_samples=1)
        first = steady_state(cfg, 5.0)
        second = steady_state(cfg, 5.0)
        assert first is second
        stats = get_cache_stats()
        assert stats["size"] >= 1
        assert stats["total_hits"] >= 1

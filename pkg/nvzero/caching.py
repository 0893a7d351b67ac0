"""Caching utilities for expensive simulation results."""

import hashlib
import json
import threading
import time
from dataclasses import dataclass
from functools import wraps
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from pydantic import BaseModel


@dataclass
class CacheEntry:
    """Entry in the result cache."""
    value: Any
    timestamp: float
    label: str = ""
    hits: int = 0


class ResultCache:
    """Thread-safe in-memory cache for steady states and pump states.

    Values are arrays or result objects that callers treat as read-only.
    """

    def __init__(self, max_size: int = 256):
        self.max_size = max_size
        self._cache: Dict[str, CacheEntry] = {}
        self._lock = threading.Lock()
        self._total_misses = 0

    def get(self, key: str) -> Optional[Any]:
        with self._lock:
            entry = self._cache.get(key)
            if entry is None:
                self._total_misses += 1
                return None
            entry.hits += 1
            entry.timestamp = time.time()
            self._cache[key] = self._cache.pop(key)  # most recently used last
            return entry.value

    def set(self, key: str, value: Any, label: str = "") -> None:
        with self._lock:
            if key not in self._cache and len(self._cache) >= self.max_size:
                # Evict least recently used
                del self._cache[next(iter(self._cache))]
            self._cache.pop(key, None)
            self._cache[key] = CacheEntry(value=value, timestamp=time.time(), label=label)

    def clear(self) -> None:
        with self._lock:
            self._cache.clear()
            self._total_misses = 0

    def get_stats(self) -> Dict[str, Any]:
        """Size, hit and miss counts of the cache."""
        with self._lock:
            total_hits = sum(entry.hits for entry in self._cache.values())
            total_requests = total_hits + self._total_misses
            hit_rate = (total_hits / total_requests * 100) if total_requests > 0 else 0.0
            return {
                "size": len(self._cache),
                "max_size": self.max_size,
                "total_hits": total_hits,
                "total_misses": self._total_misses,
                "total_requests": total_requests,
                "hit_rate": hit_rate,
            }

    def get_entries(self) -> List[Dict[str, Any]]:
        with self._lock:
            entries = [
                {"key": key[:16] + "...", "label": entry.label, "hits": entry.hits}
                for key, entry in self._cache.items()
            ]
        entries.sort(key=lambda x: x["hits"], reverse=True)
        return entries


# Global cache instance
_global_cache = ResultCache()


def _canonical(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    if isinstance(value, np.ndarray):
        if np.iscomplexobj(value):
            return {"re": value.real.tolist(), "im": value.imag.tolist()}
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _canonical(v) for k, v in value.items()}
    return value


def generate_cache_key(kind: str, **inputs: Any) -> str:
    """SHA-256 of the canonical JSON of ``kind`` and the inputs.

    Pydantic configuration models and numpy arrays are serialized by value.
    """
    cache_data = {"kind": kind}
    for key in sorted(inputs):
        cache_data[key] = _canonical(inputs[key])
    cache_str = json.dumps(cache_data, sort_keys=True, default=repr)
    return hashlib.sha256(cache_str.encode()).hexdigest()


def cached_result(kind: str, cache_instance: Optional[ResultCache] = None):
    """Decorator memoizing a pure function on its keyword-normalized arguments.

    Example:
        @cached_result("steady_state")
        def steady_state(cfg, power_nw, delta_mhz=0.0): ...
    """

    def decorator(func: Callable) -> Callable:
        import inspect

        signature = inspect.signature(func)

        @wraps(func)
        def wrapper(*args, **kwargs):
            cache = cache_instance or _global_cache
            bound = signature.bind(*args, **kwargs)
            bound.apply_defaults()
            key = generate_cache_key(kind, **bound.arguments)
            value = cache.get(key)
            if value is None:
                value = func(*args, **kwargs)
                cache.set(key, value, label=kind)
            return value

        return wrapper

    return decorator


def get_result_cache() -> ResultCache:
    return _global_cache


def get_cache_stats() -> Dict[str, Any]:
    """Statistics of the global cache."""
    return _global_cache.get_stats()


def clear_cache() -> None:
    """Clear the global cache."""
    _global_cache.clear()

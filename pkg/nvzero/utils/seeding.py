"""Explicit random-number plumbing.

Every stochastic routine takes a seed argument; independent streams (ensemble
samples, shots, scans) are derived with ``SeedSequence.spawn`` so results do not
depend on execution order.
"""

from typing import List, Optional, Union

import numpy as np

SeedLike = Union[None, int, np.random.SeedSequence]


def make_rng(seed: SeedLike = None) -> np.random.Generator:
    """Generator for an int seed, a SeedSequence, or fresh entropy for ``None``."""
    return np.random.default_rng(seed)


def derive_seeds(seed: SeedLike, n: int) -> List[np.random.SeedSequence]:
    """``n`` child seed sequences of ``seed``, identical for identical inputs."""
    if n < 0:
        raise ValueError("n must be >= 0")
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return root.spawn(n)


def entropy_of(seed: SeedLike) -> Optional[int]:
    """Integer entropy recorded in manifests (``None`` stays ``None``)."""
    if seed is None:
        return None
    if isinstance(seed, np.random.SeedSequence):
        entropy = seed.entropy
        return int(entropy) if isinstance(entropy, int) else None
    return int(seed)

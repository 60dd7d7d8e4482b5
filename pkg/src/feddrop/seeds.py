"""Derived random streams.

Every source of randomness is a fresh ``numpy`` generator keyed by a
(seed, purpose-tag, *indices) path, so results never depend on execution
order or interleaving: two call sites can never consume from the same
stream.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

# Purpose tags. Values are arbitrary but frozen: changing them changes
# every seeded result in the package.
INIT = 1
MAPPING = 2
CLIENT_SAMPLING = 3
CLIENT_LOCAL = 4
DATA_SHARED = 5
DATA_CLIENT = 6
DATA_EVAL = 7
CENTRAL = 8
SUBMODEL = 9


def check_seed(seed: int) -> int:
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    return int(seed)


def substream(*path: int) -> np.random.Generator:
    """Generator for the stream identified by ``path`` (non-negative ints)."""
    for part in path:
        check_seed(part)
    return np.random.default_rng(np.random.SeedSequence([int(p) for p in path]))

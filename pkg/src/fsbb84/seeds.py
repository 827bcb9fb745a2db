"""Deterministic RNG derivation.

Every stochastic stage owns an integer seed; independent streams (shards,
fading blocks, background generation, ...) are derived with stable spawn
keys so that runs are reproducible and shardable at the same time.
"""

import numpy as np

# Spawn-key stream tags, one per consumer. Values are part of the
# reproducibility contract: changing them changes every simulation output.
STREAM_SOURCE = 0
STREAM_CHANNEL = 1
STREAM_FADING = 2
STREAM_RECEIVER = 3
STREAM_BACKGROUND = 4
STREAM_PROTOCOL = 5
STREAM_EMIT_JITTER = 6


def spawn(seed: int, *key: int) -> np.random.Generator:
    """Return a Generator for stream ``key`` derived from ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(key)))

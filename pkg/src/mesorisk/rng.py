"""Deterministic random-stream derivation.

Every stochastic routine in the package draws from a generator derived
from ``(seed, label, index)`` where the label names the consumer. Streams
for different labels or indices are statistically independent, and the
derivation never depends on how work is scheduled, so results are
reproducible bit for bit regardless of worker count.
"""
from __future__ import annotations

import hashlib

import numpy as np

# Words of random output per simulation block; block size is a function of
# the problem shape only, never of the worker count.
BLOCK_WORDS = 1 << 22


def _label_entropy(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def seed_sequence(seed: int, label: str, index: int = 0) -> np.random.SeedSequence:
    """Build the seed sequence for stream ``index`` of consumer ``label``."""
    return np.random.SeedSequence(entropy=[int(seed), _label_entropy(label), int(index)])


def derive_seed(seed: int, label: str, index: int = 0) -> int:
    """Collapse a derived stream identity to a single 64-bit integer seed."""
    state = seed_sequence(seed, label, index).generate_state(1, dtype=np.uint64)
    return int(state[0])


def substream(seed: int, label: str, index: int = 0) -> np.random.Generator:
    """General-purpose generator for a derived stream (PCG64)."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, label, index)))


def block_generator(seed: int, label: str, block: int) -> np.random.Generator:
    """High-throughput generator for simulation block ``block`` (SFC64)."""
    return np.random.Generator(np.random.SFC64(seed_sequence(seed, label, block)))


def block_paths(words_per_path: int) -> int:
    """Paths per simulation block so a block stays near ``BLOCK_WORDS`` draws."""
    return max(1, BLOCK_WORDS // max(1, int(words_per_path)))

"""Named random substreams derived from one root seed.

Every stage draws from its own stream (data, init, shuffle, noise, ...) so
rerunning a single stage reproduces it bitwise regardless of what ran
before.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.blake2s(label.encode()).digest()[:8], "little")


def substream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for (seed, label)."""
    return np.random.default_rng(np.random.SeedSequence([seed, _label_key(label)]))


def substream_seed(seed: int, label: str) -> int:
    """Stable integer seed for APIs that take one (e.g. noise specs)."""
    return int(substream(seed, label).integers(2**63))

"""Deterministic seed derivation.

All randomness in the package flows from counter-based Philox generators
keyed by 64-bit values derived here, so results do not depend on call order
or platform.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix(x: int) -> int:
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def mix64(*parts: int) -> int:
    """Fold any number of integers into one well-mixed 64-bit value."""
    state = 0x243F6A8885A308D3  # arbitrary nonzero start
    for p in parts:
        state = _splitmix(state ^ (p & _MASK64))
    return state


def str_key(s: str) -> int:
    """Stable 64-bit key for a string (FNV-1a)."""
    h = 0xCBF29CE484222325
    for b in s.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


def generator(*parts: int) -> np.random.Generator:
    """Philox generator keyed by the mix of the given parts."""
    return np.random.Generator(np.random.Philox(key=mix64(*parts)))

"""Counter-based random draws.

Every stochastic quantity in the package is derived from a (seed, index)
pair through a fresh Philox generator, so a draw is a pure function of its
key and never depends on evaluation order or worker count.
"""

from __future__ import annotations

import threading

import numpy as np

_MASK64 = (1 << 64) - 1

# Audit hook: number of Gaussian draw calls since the last reset. Tests use
# this to prove deterministic code paths never touch the noise stream.
_draw_count = 0
_draw_lock = threading.Lock()


def generator(seed: int, index: int) -> np.random.Generator:
    """Fresh generator keyed on (seed, index)."""
    key = np.array([seed & _MASK64, index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def gauss(seed: int, index: int, shape) -> np.ndarray:
    """Standard-normal array, a pure function of (seed, index, shape)."""
    global _draw_count
    with _draw_lock:
        _draw_count += 1
    return generator(seed, index).standard_normal(size=shape, dtype=np.float64)


def reset_draw_count() -> None:
    global _draw_count
    with _draw_lock:
        _draw_count = 0


def draw_count() -> int:
    return _draw_count

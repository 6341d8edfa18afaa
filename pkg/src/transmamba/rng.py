"""Counter-based deterministic random number generator.

Every random draw in this package (parameter init, rain synthesis, patch
sampling) goes through :class:`Rng` so that runs are bit-identical across
platforms and numpy versions.  The generator is splitmix64:

    state   <- state + 0x9E3779B97F4A7C15          (golden-ratio increment)
    z       <- state
    z       <- (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z       <- (z ^ (z >> 27)) * 0x94D049BB133111EB
    output  <- z ^ (z >> 31)

All arithmetic is modulo 2^64.  Vectorized draws advance the counter once
per output value, so a draw of shape (n,) equals n scalar draws.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Seedable splitmix64 stream with vectorized float draws."""

    def __init__(self, seed: int):
        self._counter = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)

    def _raw(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            idx = self._counter + _GOLDEN * (np.arange(1, n + 1, dtype=np.uint64))
            self._counter = idx[-1] if n else self._counter
            return _mix(idx)

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Uniform floats in [low, high) with 53-bit resolution."""
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        out = low + (high - low) * u
        return out.reshape(shape) if shape else float(out[0])

    def normal(self, shape=(), mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """Gaussian draws via Box-Muller on consecutive uniform pairs."""
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        u = (self._raw(2 * m) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        u1 = np.maximum(u[:m], 1e-300)
        u2 = u[m:]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        out = mean + std * z
        return out.reshape(shape) if shape else float(out[0])

    def randint(self, low: int, high: int) -> int:
        """Integer in [low, high) via rejection-free modulo (bias < 2^-32 here)."""
        if high <= low:
            raise ValueError(f"empty range [{low}, {high})")
        return low + int(self._raw(1)[0] % np.uint64(high - low))

    def spawn(self, key: int) -> "Rng":
        """Independent child stream derived from this stream's state and a key."""
        with np.errstate(over="ignore"):
            mixed = _mix(np.array([self._counter + _GOLDEN * np.uint64(key + 1)], dtype=np.uint64))
        return Rng(int(mixed[0]))

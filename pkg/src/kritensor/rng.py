"""SplitMix64 seeding and sampling.

Everything random in corruptions and attack restarts goes through here so a
given seed yields the same bits on any platform. Scalar helpers work on Python
ints; the ``*_stream`` helpers produce the same values vectorised with numpy
uint64 arithmetic (wrap-around multiplication is the intended behaviour).
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_TWO_PI = 2.0 * math.pi
_INV_2_53 = 1.0 / (1 << 53)


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def sm64(x: int) -> int:
    """One SplitMix64 step from state ``x``: advance by gamma, then mix."""
    return _mix((x + GAMMA) & MASK64)


def derive_seed(master: int, k: int, draw: int, j: int) -> int:
    """Seed for distribution ``k``, draw ``draw`` and sample ``j``."""
    s = sm64((master & MASK64) ^ ((k * GAMMA) & MASK64))
    s = sm64(s ^ ((draw * GAMMA) & MASK64))
    return sm64(s ^ ((j * GAMMA) & MASK64))


def derive_seeds(master: int, k: int, draws: np.ndarray, js: np.ndarray) -> np.ndarray:
    """Vectorised :func:`derive_seed` over arrays of draw and sample indices."""
    draws = np.asarray(draws, dtype=np.uint64)
    js = np.asarray(js, dtype=np.uint64)
    g = np.uint64(GAMMA)
    s = np.uint64(sm64((master & MASK64) ^ ((k * GAMMA) & MASK64)))
    s = _mix_array((s ^ (draws * g)) + g)
    return _mix_array((s ^ (js * g)) + g)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Sequential generator; the i-th output (1-based) is ``mix(seed + i*gamma)``."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return _mix(self.state)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * _INV_2_53
        return lo + (hi - lo) * u

    def integer(self, lo: int, hi: int) -> int:
        """Uniform integer in the closed range [lo, hi]."""
        return lo + min(int(self.uniform() * (hi - lo + 1)), hi - lo)


def u64_stream(seeds: np.ndarray, n: int) -> np.ndarray:
    """First ``n`` SplitMix64 outputs for each seed; shape (len(seeds), n)."""
    seeds = np.atleast_1d(np.asarray(seeds, dtype=np.uint64))
    steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GAMMA)
    return _mix_array(seeds[:, None] + steps[None, :])


def uniform_stream(seeds: np.ndarray, n: int) -> np.ndarray:
    """Doubles in [0, 1) from the top 53 bits of each output."""
    return (u64_stream(seeds, n) >> np.uint64(11)).astype(np.float64) * _INV_2_53


def normal_stream(seeds: np.ndarray, n: int) -> np.ndarray:
    """Standard normals by Box-Muller; each uniform pair yields a cos and a sin variate."""
    pairs = (n + 1) // 2
    u = uniform_stream(seeds, 2 * pairs)
    u1 = 1.0 - u[:, 0::2]  # (0, 1]
    u2 = u[:, 1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = _TWO_PI * u2
    z = np.empty((u.shape[0], 2 * pairs))
    z[:, 0::2] = r * np.cos(theta)
    z[:, 1::2] = r * np.sin(theta)
    return z[:, :n]

"""Deterministic 64-bit PRNG used for all scene sampling.

Scene generation must be bit-reproducible across platforms and languages, so
sampling is pinned to a fully specified generator instead of any library
default: xorshift64* (Vigna's 2014 variant) seeded through the splitmix64
finalizer.

State update, all in 64-bit wrapping arithmetic:

    x ^= x >> 12;  x ^= x << 25;  x ^= x >> 27
    output = x * 0x2545F4914F6CDD1D

Test vectors (seed mixed with ``mix64`` first, see ``Xorshift64Star``):

    Xorshift64Star(1).next_u64()  == 0x4b46a55df3611b9b
    Xorshift64Star(42) first three outputs:
        0x31b0ece7c4f697a2, 0x9008a3b1cb686f03, 0x7c7173abd97be16f
    Xorshift64Star.for_frame(7, 3).next_u64() == 0xe5ab4107f77232fc

Floats are derived from the top 53 bits, so every draw is an exact IEEE-754
double and identical everywhere.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1

_XS_MULT = 0x2545F4914F6CDD1D
_SM_GAMMA = 0x9E3779B97F4A7C15
_SM_MIX1 = 0xBF58476D1CE4E5B9
_SM_MIX2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """splitmix64 finalizer: a bijective avalanche mix on 64-bit integers."""
    x = (x + _SM_GAMMA) & MASK64
    x = ((x ^ (x >> 30)) * _SM_MIX1) & MASK64
    x = ((x ^ (x >> 27)) * _SM_MIX2) & MASK64
    return x ^ (x >> 31)


class Xorshift64Star:
    """xorshift64* stream seeded via ``mix64(seed)``.

    A zero post-mix state (only ``seed`` values that mix to 0) falls back to
    the splitmix64 gamma constant; xorshift state must be nonzero.
    """

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = mix64(seed & MASK64) or _SM_GAMMA

    @classmethod
    def for_frame(cls, seed: int, frame_idx: int) -> "Xorshift64Star":
        """Independent per-frame stream: state seeds from mix64(seed) + frame_idx."""
        rng = cls.__new__(cls)
        rng.state = mix64((mix64(seed & MASK64) + frame_idx) & MASK64) or _SM_GAMMA
        return rng

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * _XS_MULT) & MASK64

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        """Uniform double in [lo, hi) from the top 53 output bits."""
        return lo + (hi - lo) * ((self.next_u64() >> 11) * 2.0**-53)

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive (modulo reduction; spans here
        are tiny relative to 2^64 so the bias is irrelevant and the mapping
        stays platform-exact)."""
        if hi < lo:
            raise ValueError(f"empty integer range [{lo}, {hi}]")
        return lo + self.next_u64() % (hi - lo + 1)

"""splitmix64 generator and seed mixing.

Everything random in gridward flows through this module so that output is
bit-exact for a given seed on every platform.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_J_MULT = 0xC2B2AE3D27D4EB4F
_INV_2_53 = 1.0 / (1 << 53)


def _finalize(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    __slots__ = ("state",)

    def __init__(self, seed: int = 0) -> None:
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return _finalize(self.state)

    def uniform(self) -> float:
        """Double in [0, 1) built from the high 53 bits of one draw."""
        return (self.next() >> 11) * _INV_2_53

    def below(self, bound: int) -> int:
        """Integer in [0, bound) via the high bits of a 53-bit uniform."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return int(self.uniform() * bound)

    def shuffle(self, items: list) -> None:
        # Fisher-Yates, highest index first.
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


def mix64(seed: int, worker: int, job: int) -> int:
    """Per-job seed: one splitmix64 step from seed ^ worker*gamma ^ job*c."""
    x = (seed ^ ((worker * GOLDEN_GAMMA) & MASK64) ^ ((job * _J_MULT) & MASK64)) & MASK64
    return SplitMix64(x).next()

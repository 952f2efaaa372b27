"""SplitMix64 pseudo-random stream.

Every random decision that ends up in a fixture (augmentation parameters,
background choice, split shuffles, explanation masks) draws from this
generator so results are portable across platforms and languages.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64_mix(z: int) -> int:
    """The SplitMix64 output finaliser applied to a 64-bit word."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """Stateful SplitMix64 generator.

    Instances are cheap; pass them explicitly and never share one between
    workers (derive per-item seeds with :func:`derive_seed` instead).
    """

    __slots__ = ("state",)

    def __init__(self, seed: int = 0):
        self.state = int(seed) & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        return splitmix64_mix(self.state)

    def random(self) -> float:
        """Uniform double in [0, 1) built from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        """Uniform draw in [lo, hi]; a zero-width range returns ``lo`` exactly."""
        if lo == hi:
            self.next_u64()
            return float(lo)
        return lo + (hi - lo) * self.random()

    def below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return min(int(self.random() * n), n - 1)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def copy(self) -> "SplitMix64":
        return SplitMix64(self.state)


def derive_seed(base: int, *parts: int) -> int:
    """Deterministically combine a base seed with integer coordinates."""
    z = int(base) & _MASK64
    for p in parts:
        z = splitmix64_mix(z ^ splitmix64_mix((int(p) + _GOLDEN) & _MASK64))
    return z

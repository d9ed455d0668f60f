"""Tiny portable PRNG for everything stochastic in the data pipeline.

splitmix64: one 64-bit word of state, identical output on every platform,
trivially serializable (a hex string), and splittable by seeding a child
from the parent's next output. Exactly what byte-exact stream resumption
needs; quality is far beyond what dataset mixing requires.
"""

from __future__ import annotations

__all__ = ["SplitMix64"]

_MASK = (1 << 64) - 1


class SplitMix64:
    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        # 53 high bits, the standard double in [0, 1)
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        if n < 1:
            raise ValueError("randbelow needs n >= 1")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def split(self) -> "SplitMix64":
        return SplitMix64(self.next_u64())

    def state_hex(self) -> str:
        return f"{self.state:016x}"

    @classmethod
    def from_state_hex(cls, s: str) -> "SplitMix64":
        rng = cls(0)
        rng.state = int(s, 16) & _MASK
        return rng

"""Portable xorshift64* generator used for dataset splitting.

The algorithm is fixed so that splits are reproducible independently of the
numpy version:

* state seeding: ``splitmix64(seed ^ splitmix64(stream))``, forced non-zero;
* step: ``x ^= x >> 12; x ^= x << 25; x ^= x >> 27`` then output
  ``x * 0x2545F4914F6CDD1D mod 2**64``;
* ``below(n)`` draws by rejection on ``output >> 11`` (53 bits) so every
  index is equally likely;
* ``shuffle`` is a Fisher-Yates pass from the last position downwards.
"""

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


class XorShift64Star:
    def __init__(self, seed: int, stream: int = 0):
        state = splitmix64((seed & _MASK) ^ splitmix64(stream & _MASK))
        self.state = state or 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & _MASK
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)``."""
        if n <= 0:
            raise ValueError("n must be positive")
        bound = (1 << 53) - ((1 << 53) % n)
        while True:
            r = self.next_u64() >> 11
            if r < bound:
                return r % n

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

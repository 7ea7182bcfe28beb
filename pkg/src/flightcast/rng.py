"""PCG32 pseudo-random generator (permuted congruential, 64-bit state).

This is the reference PCG-XSH-RR 64/32 member: a 64-bit linear
congruential state advanced by

    state' = state * 6364136223846793005 + increment   (mod 2^64)

with 32-bit output computed from the pre-advance state via an
xorshift-high followed by a random rotation:

    xorshifted = ((state >> 18) ^ state) >> 27   (low 32 bits)
    output     = xorshifted rotated right by (state >> 59)

Seeding follows the reference scheme: the stream id selects the (odd)
increment, so distinct streams are independent sequences for the same
seed.  The generator exists so synthetic data is reproducible at the
integer level from the documented algorithm alone, independent of any
library RNG.
"""

from __future__ import annotations

import math

MULTIPLIER = 6364136223846793005
MASK64 = (1 << 64) - 1
MASK32 = (1 << 32) - 1


class Pcg32:
    __slots__ = ("state", "inc")

    def __init__(self, seed, stream=0):
        self.inc = (((stream << 1) | 1)) & MASK64
        self.state = 0
        self.next_u32()
        self.state = (self.state + (seed & MASK64)) & MASK64
        self.next_u32()

    def next_u32(self):
        old = self.state
        self.state = (old * MULTIPLIER + self.inc) & MASK64
        xorshifted = (((old >> 18) ^ old) >> 27) & MASK32
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & MASK32

    def next_double(self):
        """Uniform in [0, 1) with 53-bit resolution (two 32-bit draws)."""
        hi = self.next_u32() >> 5   # 27 bits
        lo = self.next_u32() >> 6   # 26 bits
        return (hi * 67108864 + lo) / 9007199254740992.0

    def next_gaussian(self, mean=0.0, std=1.0):
        """Box-Muller transform; one normal deviate per call (two uniforms)."""
        u1 = 1.0 - self.next_double()  # (0, 1], keeps log() finite
        u2 = self.next_double()
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        return mean + std * z

    def next_poisson(self, lam):
        """Knuth's product-of-uniforms method; exact for the modest rates used here."""
        if lam <= 0.0:
            return 0
        threshold = math.exp(-lam)
        k = 0
        p = 1.0
        while True:
            p *= self.next_double()
            if p <= threshold:
                return k
            k += 1

"""Deterministic seed derivation and RNG construction.

Every random draw in the package flows through a counter-based Philox
generator keyed by a 64-bit hash of (base_seed, domain, indices...).  Any
sample, split, or weight initialization is therefore regenerable in
isolation, and results do not depend on generation order or parallelism.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Domain tags keep seed streams for unrelated purposes disjoint.
DOMAIN_SAMPLE = 1
DOMAIN_SPLIT = 2
DOMAIN_ENCODER_INIT = 3
DOMAIN_DECODER_INIT = 4
DOMAIN_BATCH_STREAM = 5
DOMAIN_GATE_INIT = 6
DOMAIN_GATE_STREAM = 7


def splitmix64(x: int) -> int:
    """One round of the splitmix64 finalizer."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def mix_seed(base_seed: int, *parts: int) -> int:
    """Hash (base_seed, parts...) into a single 64-bit seed."""
    state = splitmix64(base_seed & _MASK64)
    for p in parts:
        state = splitmix64(state ^ (int(p) & _MASK64))
    return state


def rng_from(base_seed: int, *parts: int) -> np.random.Generator:
    """Counter-based generator keyed by the mixed seed."""
    return np.random.Generator(np.random.Philox(key=mix_seed(base_seed, *parts)))

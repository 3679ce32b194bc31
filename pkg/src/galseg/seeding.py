"""Seed splitting.

Every random stream is derived from one user seed plus a path of integer
keys. Each key is folded in with a splitmix64 finaliser:

    s <- splitmix64(s XOR splitmix64(key))

so ``derive_seed(7, SYNTH, 3)`` is the stream for synthetic sample 3 under
seed 7. Paired runs that share a seed therefore share data order and
augmentation draws regardless of the model variant.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1

# stream identifiers
SYNTH = 1
INIT = 2
ORDER = 3
AUGMENT = 4
GAL_INIT = 5
PROBE = 6


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(seed: int, *path: int) -> int:
    s = splitmix64(seed & _MASK)
    for key in path:
        s = splitmix64(s ^ splitmix64(key & _MASK))
    return s


def rng_for(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *path))

"""Counter-based seed derivation.

Every source of randomness in the package is a pure function of the master
seed plus a small integer key path, so results are identical under any
parallel schedule.
"""

import numpy as np

# key-path namespaces
SUBSAMPLE = 1
TREE = 2
HALF = 3
REPLICATE = 4
FOLD = 5
ODD_DROP = 6
NUISANCE = 7
SPLIT = 8
DGP = 9
SIM_REP = 10
GROUP = 11


def derive_seed(master, *key):
    """Derive a 64-bit seed as a pure function of (master, *key)."""
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFF, *[int(k) for k in key]])
    return int(ss.generate_state(2, np.uint32).view(np.uint64)[0])


def derive_seed_block(master, *key, count: int):
    """Vector of 64-bit seeds; entry q is a pure function of (master, *key, q).

    One SeedSequence expansion instead of `count` of them; used on per-tree
    hot paths.
    """
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFF, *[int(k) for k in key]])
    return ss.generate_state(2 * count, np.uint32).view(np.uint64)


def rng_from(master, *key):
    """numpy Generator seeded by the derived key path."""
    return np.random.default_rng(derive_seed(master, *key))

"""Per-purpose random streams derived from one experiment seed.

Stream ``(seed, purpose, *sub)`` is ``SeedSequence(seed, spawn_key=(purpose_id, *sub))``.
Purpose ids are fixed forever so that old seeds keep reproducing:

======== == ===========================================
dataset   0 reference samples drawn from the data set
init      1 network initialisation
train     2 minibatches during training
chains    3 sampling chains (sub key: block index)
valid     4 held-out validation examples
======== == ===========================================
"""

import numpy as np

PURPOSES = {"dataset": 0, "init": 1, "train": 2, "chains": 3, "valid": 4}


def rng_for(seed: int, purpose: str, *sub: int) -> np.random.Generator:
    key = (PURPOSES[purpose], *(int(s) for s in sub))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))

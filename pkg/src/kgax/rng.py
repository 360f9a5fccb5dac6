"""Named deterministic random streams.

Every stochastic step draws from its own stream keyed by (seed, purpose,
*path), so skipping one consumer (e.g. the KG pass, or propagation at
depth 0) never shifts the draws of another. This is what makes the MF
reduction and the determinism contracts exact.
"""

import numpy as np

INIT_ENTITY = 1
INIT_RELATION = 2
INIT_PROJECTION = 3
INIT_LAYER = 4
NEIGHBORS = 10
DROPOUT = 11
REC_SHUFFLE = 12
REC_NEGATIVE = 13
KG_SHUFFLE = 14
KG_NEGATIVE = 15
EVAL_NEIGHBORS = 16

# Path prefix distinguishing KG pretraining epochs from alternating-phase
# epochs inside the KG_SHUFFLE / KG_NEGATIVE streams.
KG_PHASE_PRETRAIN = 0
KG_PHASE_ALTERNATE = 1


def stream_rng(seed, purpose, *path):
    """Generator for one named stream; identical (seed, purpose, path)
    always yields the identical sequence."""
    entropy = [int(seed), int(purpose)] + [int(p) for p in path]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

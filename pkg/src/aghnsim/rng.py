"""Keyed random streams.

Every consumer of randomness asks for a stream keyed by a tuple of integers
(experiment seed, purpose tag, client id, round, ...).  Streams are backed by
the counter-based Philox bit generator, so a stream depends only on its key and
never on how many draws other consumers made before it.
"""

import numpy as np

# purpose tags keep streams for different consumers disjoint
INIT = 1
DATA = 2
SHUFFLE = 3
FINETUNE = 4


def stream(*key):
    """Return a fresh ``numpy.random.Generator`` for the integer ``key``."""
    if not key:
        raise ValueError("stream key must not be empty")
    words = [int(k) & 0xFFFFFFFFFFFFFFFF for k in key]
    seq = np.random.SeedSequence(words)
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(*key) -> int:
    """Collapse an integer key into one 64-bit seed."""
    words = [int(k) & 0xFFFFFFFFFFFFFFFF for k in key]
    return int(np.random.SeedSequence(words).generate_state(1, np.uint64)[0])

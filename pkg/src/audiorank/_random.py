"""Seeded random streams, one independent stream per consumer."""

import numpy as np

_STREAMS = {"init": 0, "shuffle": 1, "synth": 2}


def stream(seed, consumer, *keys):
    """Generator for (`seed`, `consumer`, *keys); same arguments give the same stream."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, _STREAMS[consumer], *map(int, keys)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

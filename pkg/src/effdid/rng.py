"""
Random Stream Module

Counter-based random number streams. Every consumer (a bootstrap repetition,
a Monte Carlo replication) gets its own Philox generator keyed by
(seed, purpose, index), so draws never depend on execution order or on how
work is split across threads.
"""

from typing import Tuple

import numpy as np

# spawn-key tags that separate independent uses of one seed
STREAM_BOOTSTRAP = 0
STREAM_SIMULATION = 1


def substream(seed: int, *key: int) -> np.random.Generator:
    """
    Return an independent Philox generator for a (seed, key...) coordinate.

    Args:
        seed: Non-negative 64-bit user seed
        key: Integers identifying the stream (e.g. purpose tag, rep index)

    Returns:
        numpy Generator backed by a Philox counter-based bit generator
    """
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def bootstrap_stream(seed: int, rep: int) -> np.random.Generator:
    return substream(seed, STREAM_BOOTSTRAP, rep)


def simulation_stream(seed: int, rep: int) -> np.random.Generator:
    return substream(seed, STREAM_SIMULATION, rep)


def derived_seed(seed: int, *key: int) -> int:
    """Derive a 64-bit child seed, used to hand a replication its own bootstrap seed."""
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    words: Tuple[int, int] = tuple(int(w) for w in seq.generate_state(2, dtype=np.uint32))
    return (words[0] << 32) | words[1]

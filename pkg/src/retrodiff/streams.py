"""Counter-based random streams.

Every random draw in the library is pulled from a stream addressed by an
integer seed plus a path of integer labels (stream kind, step index, ...).
The mapping (seed, path) -> stream is pure, so results do not depend on how
many other streams were created before, nor on the order in which particles
are processed.  This is what makes runs bitwise reproducible.
"""

import numpy as np

_MASK = (1 << 64) - 1

# stream kinds used across the library
INIT_SAMPLE = 1
FORWARD_STEP = 2
REVERSAL_INIT = 3
REVERSAL_STEP = 4
LIPSCHITZ_PROBE = 5
PROJECTIONS = 6
CANDIDATE_SIM = 7
REFERENCE_SAMPLE = 8


def _splitmix64(z):
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def substream(seed, *path):
    """Return a ``numpy.random.Generator`` for the (seed, *path) stream.

    Streams with distinct paths are statistically independent Philox
    streams; identical arguments always give back an identical stream.
    """
    k = _splitmix64(int(seed) & _MASK)
    for p in path:
        k = _splitmix64(k ^ (int(p) & _MASK))
    key = np.array([k, _splitmix64(k)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))

"""Counter-based random streams for reproducible parallel Monte Carlo.

Every trajectory draws from Philox streams derived from
``(master_seed, path_index, stream_tag)``.  The derivation rule is part of
the package's external contract so that runs can be replayed elsewhere:

* bit generator: ``numpy.random.Philox`` (Philox-4x64-10),
* key word 0   : ``master_seed mod 2**64``,
* key word 1   : ``path_index * 4 + tag`` with ``tag`` 0 for the Wiener
  stream and 1 for the jump-schedule stream,
* counter      : zero except word 1, which carries an optional ``salt``
  used to split disjoint substreams of one path (e.g. independent
  re-runs per scheme in timing mode).

Distinct keys give independent streams; distinct salts offset the 256-bit
counter by 2**64 blocks per unit, far beyond any draw count reached here.
"""

import numpy as np

WIENER_TAG = 0
JUMP_TAG = 1

_MASK64 = (1 << 64) - 1


def stream(master_seed, path_index, tag, salt=0):
    """Return a ``numpy.random.Generator`` for one (path, purpose) stream."""
    if path_index < 0:
        raise ValueError("path_index must be nonnegative")
    if tag not in (WIENER_TAG, JUMP_TAG):
        raise ValueError(f"unknown stream tag {tag!r}")
    key = np.array(
        [master_seed & _MASK64, (path_index * 4 + tag) & _MASK64],
        dtype=np.uint64,
    )
    counter = np.array([0, salt & _MASK64, 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def wiener_stream(master_seed, path_index, salt=0):
    return stream(master_seed, path_index, WIENER_TAG, salt)


def jump_stream(master_seed, path_index, salt=0):
    return stream(master_seed, path_index, JUMP_TAG, salt)

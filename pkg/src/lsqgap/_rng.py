"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, *keys)`` through
:class:`numpy.random.SeedSequence`, so a stream never depends on how many
other streams were created before it.
"""
import numpy as np

_MASK64 = (1 << 64) - 1


def _check_seed(seed):
    seed = int(seed)
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return seed & _MASK64


def stream(seed, *keys):
    ss = np.random.SeedSequence(_check_seed(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed, *keys):
    """Child 64-bit seed for the sub-task identified by ``keys``."""
    ss = np.random.SeedSequence(_check_seed(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])

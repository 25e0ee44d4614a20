"""Counter-based random numbers keyed by integer coordinates.

Every draw is a pure function of ``(seed, *counters)``, so a photon draw for
pixel ``(x, y)`` in frame ``f`` is the same whether the whole frame is
sampled at once or a single pixel is exposed on its own. The mixer is the
SplitMix64 finalizer applied once per key component.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))
_TO_UNIT = 1.0 / float(1 << 53)

# stream tags keep unrelated consumers of the same seed apart
STREAM_PHOTON = 0x50484F54
STREAM_SEED = 0x53454544
STREAM_SYNTH = 0x53594E54


def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def keyed_bits(seed, *counters):
    """64 random bits per broadcast element of ``counters``."""
    with np.errstate(over="ignore"):
        h = _mix(np.asarray(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _GOLDEN, dtype=np.uint64))
        for c in counters:
            c = np.asarray(c).astype(np.uint64)
            h = _mix((h ^ c) + _GOLDEN)
    return h


def keyed_uniform(seed, *counters):
    """Uniform doubles in [0, 1) with 53 bits of resolution."""
    bits = keyed_bits(seed, *counters)
    return (bits >> _S11).astype(np.float64) * _TO_UNIT


def as_seed(random_state):
    """Coerce ``None`` / int / ``np.random.Generator`` into a plain int seed."""
    if random_state is None:
        return int(np.random.default_rng().integers(0, 2**63))
    if isinstance(random_state, (int, np.integer)):
        if random_state < 0:
            raise ValueError("seed must be non-negative")
        return int(random_state)
    if isinstance(random_state, np.random.Generator):
        return int(random_state.integers(0, 2**63))
    if isinstance(random_state, np.random.RandomState):
        return int(random_state.randint(0, 2**31 - 1))
    raise TypeError(f"cannot use {random_state!r} as a seed")

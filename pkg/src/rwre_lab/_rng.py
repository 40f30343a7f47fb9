"""Counter-based random streams usable from numba kernels.

Every random quantity in the package is drawn from a splitmix64 stream whose
initial state is a hash of integer keys (master seed, trial index, site
coordinates, ...).  Streams therefore never depend on scheduling or on how
many other streams were consumed, which is what makes serial and parallel
runs bit-identical.
"""

import math

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_COORD_OFFSET = 1 << 40
_TWO_M53 = 1.0 / 9007199254740992.0

MASK64 = (1 << 64) - 1


@njit(cache=True, nogil=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def hash_key(h, k):
    """Fold one signed integer key into hash state ``h``."""
    return mix64(h ^ mix64(np.uint64(k + _COORD_OFFSET) + _GOLDEN))


@njit(cache=True, nogil=True)
def stream_from(seed, a, b):
    h = mix64(np.uint64(seed) + _GOLDEN)
    h = hash_key(h, a)
    return hash_key(h, b)


@njit(cache=True, nogil=True)
def next_u64(state):
    """Advance a splitmix64 state held in a length-1 uint64 array."""
    state[0] = state[0] + _GOLDEN
    return mix64(state[0])


@njit(cache=True, nogil=True)
def next_uniform(state):
    """Uniform double in [0, 1) with 53 random bits."""
    return np.float64(next_u64(state) >> _S11) * _TWO_M53


@njit(cache=True, nogil=True)
def next_open_uniform(state):
    """Uniform double in (0, 1); safe under log."""
    return (np.float64(next_u64(state) >> _S11) + 0.5) * _TWO_M53


@njit(cache=True, nogil=True)
def next_normal(state):
    u1 = next_open_uniform(state)
    u2 = next_uniform(state)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@njit(cache=True, nogil=True)
def next_gamma(state, shape):
    """Gamma(shape, 1) variate (Marsaglia-Tsang, boosted for shape < 1)."""
    if shape == 1.0:
        return -math.log(next_open_uniform(state))
    if shape < 1.0:
        g = next_gamma(state, shape + 1.0)
        return g * next_open_uniform(state) ** (1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = next_normal(state)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = next_open_uniform(state)
        if math.log(u) < 0.5 * x * x + d - d * v + d * math.log(v):
            return d * v


# Plain-Python mirror of the hash, used by tests and by code that only needs
# the integer (e.g. seeding numpy generators for environment-level draws).

def py_mix64(z):
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def py_hash_key(h, k):
    inner = py_mix64((k + _COORD_OFFSET + 0x9E3779B97F4A7C15) & MASK64)
    return py_mix64(h ^ inner)


def py_stream_from(seed, a, b):
    h = py_mix64((seed + 0x9E3779B97F4A7C15) & MASK64)
    h = py_hash_key(h, a)
    return py_hash_key(h, b)


def derive_seed(seed, *keys):
    """Derive a 63-bit child seed from ``seed`` and integer keys."""
    h = py_mix64((int(seed) + 0x9E3779B97F4A7C15) & MASK64)
    for k in keys:
        h = py_hash_key(h, int(k))
    return h >> 1

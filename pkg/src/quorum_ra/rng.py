"""Counter-based random streams.

Every draw is a pure function of ``(seed, run, node, purpose, step, component)``
built from the SplitMix64 finalizer, so Monte-Carlo runs can be split across
any number of workers without changing a single bit of output. Draws are
addressed rather than consumed: skipping one never shifts the others.
"""

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from ._accel import njit

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_NODE_MUL = 0xD6E8FEB86659FD93
_PURPOSE_MUL = 0xCA5A826395121157
_TWO_M53 = 2.0**-53
_U_GOLDEN = np.uint64(GOLDEN)
_U_M1 = np.uint64(_M1)
_U_M2 = np.uint64(_M2)
_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_U11 = np.uint64(11)
_U1 = np.uint64(1)


class Purpose(IntEnum):
    """Stream purposes; distinct purposes never share draws."""

    INIT_X = 0
    NOISE = 1
    STAGE1 = 2
    STAGE2 = 3
    TEST = 7


def mix64(z):
    """SplitMix64 finalizer on a Python int (wraps to 64 bits)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def stream_key(seed, run, node, purpose):
    """64-bit key of the stream identified by ``(seed, run, node, purpose)``."""
    k = mix64((seed & MASK64) + GOLDEN)
    k = mix64(k ^ (((run + 1) * GOLDEN) & MASK64))
    k = mix64(k ^ (((node + 1) * _NODE_MUL) & MASK64))
    return mix64(k ^ (((int(purpose) + 1) * _PURPOSE_MUL) & MASK64))


def stream_keys(seed, runs, n, purpose):
    """Key table of shape ``(len(runs), n)`` as uint64."""
    runs = np.atleast_1d(np.asarray(runs, dtype=np.int64))
    out = np.empty((runs.size, n), dtype=np.uint64)
    for a, r in enumerate(runs):
        for i in range(n):
            out[a, i] = stream_key(seed, int(r), i, purpose)
    return out


def _mix64_np(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def uniform_block(keys, step, ncomp):
    """Uniforms in [0, 1) for every key at ``step``, components ``0..ncomp-1``.

    ``keys`` may have any shape; the result has shape ``keys.shape + (ncomp,)``.
    """
    keys = np.asarray(keys, dtype=np.uint64)
    with np.errstate(over="ignore"):
        skey = _mix64_np(keys ^ np.uint64(((step + 1) * GOLDEN) & MASK64))
        comp = (np.arange(1, ncomp + 1, dtype=np.uint64) * np.uint64(GOLDEN))
        h = _mix64_np(skey[..., None] + comp)
    return (h >> np.uint64(11)).astype(np.float64) * _TWO_M53


@njit(cache=True)
def mix64_nb(z):
    z = (z ^ (z >> _U30)) * _U_M1
    z = (z ^ (z >> _U27)) * _U_M2
    return z ^ (z >> _U31)


@njit(cache=True)
def step_key_nb(key, step):
    return mix64_nb(key ^ ((np.uint64(step) + _U1) * _U_GOLDEN))


@njit(cache=True)
def uniform_nb(skey, comp):
    h = mix64_nb(skey + (np.uint64(comp) + _U1) * _U_GOLDEN)
    return np.float64(h >> _U11) * _TWO_M53


def box_muller(u1, u2):
    """Standard normals from two independent uniform arrays in [0, 1)."""
    return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)


@dataclass
class RandomStream:
    """A reproducible stream keyed by ``(seed, run, node, purpose)``.

    The stream is a grid of draws indexed by ``(step, component)``. Sequential
    calls walk the components of the current step; :meth:`at` jumps to another
    step with a fresh cursor.
    """

    seed: int
    run: int = 0
    node: int = 0
    purpose: int = Purpose.TEST
    step: int = 0
    cursor: int = field(default=0, compare=False)

    @property
    def key(self):
        return stream_key(self.seed, self.run, self.node, self.purpose)

    def at(self, step):
        return RandomStream(self.seed, self.run, self.node, self.purpose, step)

    def peek(self, count):
        """Draws at the cursor without advancing it."""
        block = uniform_block(np.uint64(self.key), self.step, self.cursor + count)
        return block[self.cursor:]

    def uniforms(self, count):
        out = self.peek(count)
        self.cursor += count
        return out

    def uniform(self):
        return float(self.uniforms(1)[0])

    def skip(self, count=1):
        self.cursor += count

    def normals(self, count):
        u = self.uniforms(2 * count)
        return box_muller(u[0::2], u[1::2])

"""Counter-based random streams.

Every random draw in a run is a pure function of
``(master_seed, phase, cycle, iteration, group, particle, draw index)``.
The generator is Philox4x32-10: the 64-bit key is derived from
``(master_seed, phase, cycle)`` and the four counter words carry
``(block, particle, group, iteration)``. Each counter block yields two
53-bit uniforms, and normals come from a Box-Muller transform of one block,
so a stream of normals and a stream of uniforms advance the same counter.

Nothing here depends on evaluation order, which is what makes runs
invariant to the number of workers and lets a frozen design be replayed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _accel

__all__ = [
    "Phase",
    "StreamKey",
    "RandomStream",
    "StreamBatch",
    "stream_for",
    "philox4x32",
    "derive_seed",
]

_MASK32 = 0xFFFFFFFF
_MASK64 = 0xFFFFFFFFFFFFFFFF
_M0 = 0xD2511F53
_M1 = 0xCD9E8D57
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_TWO_NEG53 = 1.0 / 9007199254740992.0


class Phase(enum.IntEnum):
    INIT = 0
    C = 1
    S = 2
    M = 3
    AUX = 4


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(master_seed: int, salt: int = 1) -> int:
    """A new 64-bit seed deterministically derived from ``master_seed``."""
    return _splitmix64((master_seed & _MASK64) ^ _splitmix64(0xC0FFEE + salt))


def _philox_key(master_seed: int, phase: int, cycle: int) -> tuple[int, int]:
    tag = _splitmix64(((int(phase) & 0xFF) << 56) | (cycle & 0xFFFFFFFFFFFF))
    key = _splitmix64((master_seed & _MASK64) ^ tag)
    return key & _MASK32, key >> 32


def philox4x32(counter, key) -> tuple[int, int, int, int]:
    """Scalar Philox4x32-10 (reference implementation used by the tests)."""
    c0, c1, c2, c3 = (int(v) & _MASK32 for v in counter)
    k0, k1 = (int(v) & _MASK32 for v in key)
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            ((p1 >> 32) ^ c1 ^ k0) & _MASK32,
            p1 & _MASK32,
            ((p0 >> 32) ^ c3 ^ k1) & _MASK32,
            p0 & _MASK32,
        )
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


@_accel.njit
def _uniform_blocks_numba(k0, k1, group, particle, iteration, block0, nblocks):
    n = group.shape[0]
    out = np.empty((n, 2 * nblocks))
    m32 = np.uint64(0xFFFFFFFF)
    for p in range(n):
        for b in range(nblocks):
            c0 = np.uint64(block0 + b) & m32
            c1 = np.uint64(particle[p]) & m32
            c2 = np.uint64(group[p]) & m32
            c3 = np.uint64(iteration) & m32
            a0 = np.uint64(k0)
            a1 = np.uint64(k1)
            for _ in range(10):
                p0 = np.uint64(0xD2511F53) * c0
                p1 = np.uint64(0xCD9E8D57) * c2
                n0 = ((p1 >> np.uint64(32)) ^ c1 ^ a0) & m32
                n1 = p1 & m32
                n2 = ((p0 >> np.uint64(32)) ^ c3 ^ a1) & m32
                n3 = p0 & m32
                c0, c1, c2, c3 = n0, n1, n2, n3
                a0 = (a0 + np.uint64(0x9E3779B9)) & m32
                a1 = (a1 + np.uint64(0xBB67AE85)) & m32
            hi = ((c0 << np.uint64(32)) | c1) >> np.uint64(11)
            lo = ((c2 << np.uint64(32)) | c3) >> np.uint64(11)
            out[p, 2 * b] = (np.float64(hi) + 0.5) * 1.1102230246251565e-16
            out[p, 2 * b + 1] = (np.float64(lo) + 0.5) * 1.1102230246251565e-16
    return out


def _uniform_blocks_numpy(k0, k1, group, particle, iteration, block0, nblocks):
    m32 = np.uint64(_MASK32)
    shape = (group.shape[0], nblocks)
    c0 = np.broadcast_to((block0 + np.arange(nblocks, dtype=np.uint64)) & m32, shape).copy()
    c1 = np.broadcast_to(particle.astype(np.uint64)[:, None] & m32, shape).copy()
    c2 = np.broadcast_to(group.astype(np.uint64)[:, None] & m32, shape).copy()
    c3 = np.full(shape, np.uint64(iteration) & m32, dtype=np.uint64)
    a0, a1 = int(k0), int(k1)
    for _ in range(10):
        p0 = np.uint64(_M0) * c0
        p1 = np.uint64(_M1) * c2
        c0, c1, c2, c3 = (
            (p1 >> np.uint64(32)) ^ c1 ^ np.uint64(a0),
            p1 & m32,
            (p0 >> np.uint64(32)) ^ c3 ^ np.uint64(a1),
            p0 & m32,
        )
        a0 = (a0 + _W0) & _MASK32
        a1 = (a1 + _W1) & _MASK32
    hi = ((c0 << np.uint64(32)) | c1) >> np.uint64(11)
    lo = ((c2 << np.uint64(32)) | c3) >> np.uint64(11)
    out = np.empty((shape[0], 2 * nblocks))
    out[:, 0::2] = (hi.astype(np.float64) + 0.5) * _TWO_NEG53
    out[:, 1::2] = (lo.astype(np.float64) + 0.5) * _TWO_NEG53
    return out


def uniform_blocks(k0, k1, group, particle, iteration, block0, nblocks):
    """``(P, 2*nblocks)`` uniforms in (0, 1), one row per (group, particle)."""
    group = np.ascontiguousarray(group, dtype=np.int64)
    particle = np.ascontiguousarray(particle, dtype=np.int64)
    if _accel.USE_NUMBA:
        return _uniform_blocks_numba(k0, k1, group, particle, int(iteration), int(block0), int(nblocks))
    return _uniform_blocks_numpy(k0, k1, group, particle, int(iteration), int(block0), int(nblocks))


def _box_muller(u: np.ndarray) -> np.ndarray:
    u1 = u[:, 0::2]
    u2 = u[:, 1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty_like(u)
    z[:, 0::2] = r * np.cos(2.0 * np.pi * u2)
    z[:, 1::2] = r * np.sin(2.0 * np.pi * u2)
    return z


@dataclass(frozen=True)
class StreamKey:
    master_seed: int
    group: int = 0
    particle: int = 0
    phase: Phase = Phase.AUX
    cycle: int = 0
    iteration: int = 0

    def __post_init__(self):
        for name in ("group", "particle", "cycle", "iteration"):
            if getattr(self, name) < 0:
                raise ValueError(f"StreamKey.{name} must be non-negative")
        if self.group > _MASK32 or self.particle > _MASK32 or self.iteration > _MASK32:
            raise ValueError("StreamKey index exceeds 32 bits")


class StreamBatch:
    """Independent streams for a batch of (group, particle) pairs.

    All streams in a batch share ``(master_seed, phase, cycle, iteration)``.
    Row ``p`` of every draw is bit-identical to what ``stream_for`` returns for
    the key of particle ``p``.
    """

    def __init__(self, master_seed, phase, cycle, iteration, groups, particles):
        self.master_seed = int(master_seed)
        self.phase = Phase(phase)
        self.cycle = int(cycle)
        self.iteration = int(iteration)
        self.groups = np.asarray(groups, dtype=np.int64).ravel()
        self.particles = np.asarray(particles, dtype=np.int64).ravel()
        if self.groups.shape != self.particles.shape:
            raise ValueError("groups and particles must have the same length")
        self._key = _philox_key(self.master_seed, self.phase, self.cycle)
        self._block = 0

    @classmethod
    def for_population(cls, master_seed, phase, cycle, iteration, J, N):
        g, n = np.divmod(np.arange(J * N), N)
        return cls(master_seed, phase, cycle, iteration, g, n)

    def __len__(self):
        return self.groups.shape[0]

    def _blocks(self, nblocks):
        u = uniform_blocks(self._key[0], self._key[1], self.groups, self.particles,
                           self.iteration, self._block, nblocks)
        self._block += nblocks
        return u

    def uniform(self, m: int = 1) -> np.ndarray:
        """``(P, m)`` uniforms on the open interval (0, 1)."""
        return self._blocks((m + 1) // 2)[:, :m]

    def normal(self, m: int = 1) -> np.ndarray:
        """``(P, m)`` standard normals."""
        return _box_muller(self._blocks((m + 1) // 2))[:, :m]


class RandomStream:
    """A single stream; a thin view on a one-row ``StreamBatch``."""

    def __init__(self, key: StreamKey):
        self.key = key
        self._batch = StreamBatch(key.master_seed, key.phase, key.cycle, key.iteration,
                                  [key.group], [key.particle])

    def uniform(self, size: int = 1) -> np.ndarray:
        return self._batch.uniform(size)[0]

    def normal(self, size: int = 1) -> np.ndarray:
        return self._batch.normal(size)[0]


def stream_for(key: StreamKey) -> RandomStream:
    return RandomStream(key)

"""Frozen adaptive decisions of a run, and their binary file format.

A design fixes the cycle boundaries t_1 < ... < t_L = T, whether each cycle
ended with S and M phases, and every Metropolis proposal covariance. Replaying
a design is a fully nonadaptive run.

File layout, all integers unsigned and little endian::

    8s   magic b"SEQPDSN1"
    u32  schema version (1)
    u32  n, then n bytes: model id (utf-8)
    u32  J, N, k, T
    32s  config hash (sha256)
    u64  step-1 master seed
    u64  step-2 master seed
    u8   resampler code (0 multinomial, 1 residual, 2 stratified, 3 systematic)
    u8   proposal kind (0 random walk, 1 independence)
    2x   padding
    u32  n, then n x u32: forced observation dates
    u32  n, then n x u32: moment dates
    u32  L
    L times:
        u32 t_l, u8 resampled, u8 forced, 2x padding, u32 R_l
        R_l times: f64 h, f64 acceptance rate, k x f64 proposal mean,
                   k*k x f64 proposal covariance (row-major)
    4s   b"END\\0"
    u32  crc32 of every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mutation import MutationRecord, ProposalKind
from .resampling import ResampleScheme

__all__ = ["CycleDesign", "DesignRecord", "DesignFormatError", "write_design", "read_design"]

MAGIC = b"SEQPDSN1"
END = b"END\0"
SCHEMA_VERSION = 1


class DesignFormatError(ValueError):
    pass


@dataclass
class CycleDesign:
    t_end: int
    resampled: bool
    forced: bool
    mutation: MutationRecord

    @property
    def iterations(self) -> int:
        return self.mutation.iterations


@dataclass
class DesignRecord:
    model_id: str
    J: int
    N: int
    k: int
    T: int
    config_hash: bytes
    master_seed: int
    step2_seed: int
    resampler: ResampleScheme = ResampleScheme.RESIDUAL
    proposal: ProposalKind = ProposalKind.RANDOM_WALK
    forced_dates: list[int] = field(default_factory=list)
    moment_dates: list[int] = field(default_factory=list)
    cycles: list[CycleDesign] = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    @property
    def boundaries(self) -> list[int]:
        return [c.t_end for c in self.cycles]

    @property
    def L(self) -> int:
        return len(self.cycles)

    def validate(self) -> None:
        t = self.boundaries
        if not t or t[-1] != self.T or any(b <= a for a, b in zip([0] + t, t)):
            raise DesignFormatError(f"cycle boundaries {t} are not strictly increasing to T={self.T}")
        for c in self.cycles:
            for s in c.mutation.covariances:
                if np.shape(s) != (self.k, self.k):
                    raise DesignFormatError("proposal covariance has wrong shape")
            if not c.resampled and c.iterations:
                raise DesignFormatError(f"cycle ending at {c.t_end} mutates without resampling")


def write_design(design: DesignRecord, path) -> None:
    Path(path).write_bytes(design_to_bytes(design))


def design_to_bytes(design: DesignRecord) -> bytes:
    design.validate()
    out = bytearray()
    out += MAGIC
    mid = design.model_id.encode("utf-8")
    out += struct.pack("<II", design.schema_version, len(mid)) + mid
    out += struct.pack("<IIII", design.J, design.N, design.k, design.T)
    if len(design.config_hash) != 32:
        raise DesignFormatError("config hash must be 32 bytes")
    out += design.config_hash
    out += struct.pack("<QQBB2x", design.master_seed, design.step2_seed,
                       ResampleScheme(design.resampler).code, int(design.proposal))
    for dates in (design.forced_dates, design.moment_dates):
        out += struct.pack("<I", len(dates)) + struct.pack(f"<{len(dates)}I", *dates)
    out += struct.pack("<I", design.L)
    k = design.k
    for c in design.cycles:
        m = c.mutation
        out += struct.pack("<IBB2xI", c.t_end, int(c.resampled), int(c.forced), m.iterations)
        for r in range(m.iterations):
            mean = m.means[r] if m.means else np.zeros(k)
            out += struct.pack("<dd", m.stepsizes[r], m.acceptance[r])
            out += np.asarray(mean, dtype="<f8").reshape(k).tobytes()
            out += np.asarray(m.covariances[r], dtype="<f8").reshape(k * k).tobytes()
    out += END
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.raw):
            raise DesignFormatError(f"design file truncated at byte {self.pos}")
        vals = struct.unpack_from(fmt, self.raw, self.pos)
        self.pos += size
        return vals

    def floats(self, n: int) -> np.ndarray:
        (buf,) = self.take(f"<{8 * n}s")
        return np.frombuffer(buf, dtype="<f8").astype(float)


def read_design(path) -> DesignRecord:
    return design_from_bytes(Path(path).read_bytes())


def design_from_bytes(raw: bytes) -> DesignRecord:
    rd = _Reader(raw)
    (magic,) = rd.take("<8s")
    if magic != MAGIC:
        raise DesignFormatError("not a design file (bad magic)")
    version, nid = rd.take("<II")
    if version != SCHEMA_VERSION:
        raise DesignFormatError(f"unsupported design schema version {version}")
    (mid,) = rd.take(f"<{nid}s")
    J, N, k, T = rd.take("<IIII")
    (chash,) = rd.take("<32s")
    seed1, seed2, rcode, pkind = rd.take("<QQBB2x")
    dates = []
    for _ in range(2):
        (n,) = rd.take("<I")
        dates.append(list(rd.take(f"<{n}I")))
    (L,) = rd.take("<I")
    cycles = []
    for _ in range(L):
        t_end, resampled, forced, R = rd.take("<IBB2xI")
        rec = MutationRecord(cycle=len(cycles) + 1, kind=ProposalKind(pkind))
        for _ in range(R):
            h, acc = rd.take("<dd")
            rec.stepsizes.append(h)
            rec.acceptance.append(acc)
            rec.means.append(rd.floats(k))
            rec.covariances.append(rd.floats(k * k).reshape(k, k))
        cycles.append(CycleDesign(t_end, bool(resampled), bool(forced), rec))
    (end,) = rd.take("<4s")
    if end != END:
        raise DesignFormatError("design file corrupt (missing end marker)")
    body_len = rd.pos
    (crc,) = rd.take("<I")
    if crc != zlib.crc32(raw[:body_len]):
        raise DesignFormatError("design file checksum mismatch")
    if rd.pos != len(raw):
        raise DesignFormatError("trailing bytes after design record")
    try:
        resampler = ResampleScheme.from_code(rcode)
    except IndexError as exc:
        raise DesignFormatError(f"unknown resampler code {rcode}") from exc
    design = DesignRecord(mid.decode("utf-8"), J, N, k, T, chash, seed1, seed2, resampler,
                          ProposalKind(pkind), dates[0], dates[1], cycles, version)
    design.validate()
    return design

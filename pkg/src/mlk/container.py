"""Bit-exact archive format.

Each worker's output is one shard blob: a fixed 44-byte header followed by
six length-prefixed sections (model weights, packed codes, PQ table,
compressed residuals, multipliers, verbatim exceptions).  An archive file
is a preamble carrying the grid and run parameters, an offset index, and
the shard blobs; every integer is little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from mlk.errors import FormatError
from mlk.fdata import VelocityGrid

__all__ = ["ShardHeader", "ShardBlob", "ArchivePreamble",
           "write_shard", "read_shard", "write_archive", "read_archive"]

SHARD_MAGIC = b"MLK1"
ARCHIVE_MAGIC = b"MLKA"
VERSION = 1

SCHEME_FULL = 0            # AE + PQ + residual + lambda pipeline
SCHEME_RESIDUAL_ONLY = 1   # reserved: residual-only baseline

_HEADER = struct.Struct("<4sHBB6IIHHBBH")
HEADER_SIZE = _HEADER.size  # must be exactly 44

_SECTIONS = ("weights", "codes", "pq_table", "residuals", "lambdas",
             "exceptions")


@dataclass(frozen=True)
class ShardHeader:
    scheme: int
    lambda_precision: int        # bytes per value: 4 or 8
    section_lengths: tuple       # six entries, order = _SECTIONS
    n_images: int
    img_rows: int
    img_cols: int
    latent_dim: int
    pq_bits: int
    version: int = VERSION

    def __post_init__(self):
        if self.scheme not in (SCHEME_FULL, SCHEME_RESIDUAL_ONLY):
            raise FormatError(f"unknown scheme byte {self.scheme}")
        if self.lambda_precision not in (4, 8):
            raise FormatError("lambda precision must be 4 or 8 bytes")
        if len(self.section_lengths) != 6:
            raise FormatError("expected six section lengths")
        for length in self.section_lengths:
            if not 0 <= length <= 0xFFFFFFFF:
                raise FormatError("section length exceeds the 4-byte limit")

    def pack(self) -> bytes:
        return _HEADER.pack(
            SHARD_MAGIC, self.version, self.scheme, self.lambda_precision,
            *self.section_lengths, self.n_images, self.img_rows,
            self.img_cols, self.latent_dim, self.pq_bits, 0)

    @classmethod
    def unpack(cls, raw: bytes):
        if len(raw) < HEADER_SIZE:
            raise FormatError("shard blob shorter than its header")
        fields = _HEADER.unpack_from(raw, 0)
        magic, version = fields[0], fields[1]
        if magic != SHARD_MAGIC:
            raise FormatError(f"bad shard magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"unsupported shard version {version}")
        if fields[-1] != 0:
            raise FormatError("reserved header bytes must be zero")
        return cls(scheme=fields[2], lambda_precision=fields[3],
                   section_lengths=tuple(fields[4:10]), n_images=fields[10],
                   img_rows=fields[11], img_cols=fields[12],
                   latent_dim=fields[13], pq_bits=fields[14], version=version)


@dataclass(frozen=True)
class ShardBlob:
    header: ShardHeader
    sections: dict  # name -> bytes


def write_shard(header_fields: dict, sections: dict) -> bytes:
    """Serialize one shard; section payloads are given by name."""
    payloads = [bytes(sections.get(name, b"")) for name in _SECTIONS]
    header = ShardHeader(section_lengths=tuple(len(p) for p in payloads),
                         **header_fields)
    return header.pack() + b"".join(payloads)


def read_shard(raw: bytes) -> ShardBlob:
    header = ShardHeader.unpack(raw)
    total = HEADER_SIZE + sum(header.section_lengths)
    if len(raw) != total:
        raise FormatError(
            f"shard blob is {len(raw)} bytes but header implies {total}")
    sections = {}
    offset = HEADER_SIZE
    for name, length in zip(_SECTIONS, header.section_lengths):
        sections[name] = raw[offset:offset + length]
        offset += length
    return ShardBlob(header=header, sections=sections)


# ---------------------------------------------------------------------------
# archive = preamble | shard offset index | shard blobs

_PREAMBLE_FIXED = struct.Struct("<4sHBxIIIHHqdQ32s")


@dataclass(frozen=True)
class ArchivePreamble:
    n_shards: int
    decomp_mode: str             # "row" or "col"
    n_planes: int
    n_nodes: int
    grid: VelocityGrid
    timestep: int
    tau: float
    seed: int
    config_digest: bytes         # 32-byte sha256 of the canonical config

    def pack(self) -> bytes:
        mode_byte = {"row": 0, "col": 1}[self.decomp_mode]
        fixed = _PREAMBLE_FIXED.pack(
            ARCHIVE_MAGIC, VERSION, mode_byte, self.n_shards, self.n_planes,
            self.n_nodes, self.grid.rows, self.grid.cols, self.timestep,
            self.tau, self.seed, self.config_digest)
        grid_bytes = (struct.pack("<d", self.grid.mass)
                      + self.grid.v_perp.astype("<f8").tobytes()
                      + self.grid.v_par.astype("<f8").tobytes()
                      + self.grid.vol.astype("<f8").tobytes())
        return fixed + grid_bytes

    @classmethod
    def unpack(cls, raw: bytes):
        if len(raw) < _PREAMBLE_FIXED.size:
            raise FormatError("archive shorter than its preamble")
        (magic, version, mode_byte, n_shards, n_planes, n_nodes, rows, cols,
         timestep, tau, seed, digest) = _PREAMBLE_FIXED.unpack_from(raw, 0)
        if magic != ARCHIVE_MAGIC:
            raise FormatError(f"bad archive magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"unsupported archive version {version}")
        if mode_byte not in (0, 1):
            raise FormatError("unknown decomposition mode byte")
        off = _PREAMBLE_FIXED.size
        need = 8 * (1 + rows + cols + rows * cols)
        if len(raw) < off + need:
            raise FormatError("archive preamble grid truncated")
        mass = struct.unpack_from("<d", raw, off)[0]
        off += 8
        v_perp = np.frombuffer(raw, dtype="<f8", count=rows, offset=off)
        off += 8 * rows
        v_par = np.frombuffer(raw, dtype="<f8", count=cols, offset=off)
        off += 8 * cols
        vol = np.frombuffer(raw, dtype="<f8", count=rows * cols,
                            offset=off).reshape(rows, cols)
        off += 8 * rows * cols
        grid = VelocityGrid(v_perp=v_perp.copy(), v_par=v_par.copy(),
                            vol=vol.copy(), mass=mass)
        preamble = cls(n_shards=n_shards,
                       decomp_mode="row" if mode_byte == 0 else "col",
                       n_planes=n_planes, n_nodes=n_nodes, grid=grid,
                       timestep=timestep, tau=tau, seed=seed,
                       config_digest=digest)
        return preamble, off

    def size(self) -> int:
        return (_PREAMBLE_FIXED.size
                + 8 * (1 + self.grid.rows + self.grid.cols
                       + self.grid.rows * self.grid.cols))


def write_archive(preamble: ArchivePreamble, shard_blobs: list) -> bytes:
    if len(shard_blobs) < 1:
        raise FormatError("archive needs at least one shard")
    if len(shard_blobs) != preamble.n_shards:
        raise FormatError("preamble shard count disagrees with blobs")
    head = preamble.pack()
    index_size = 8 * len(shard_blobs)
    offsets = []
    pos = len(head) + index_size
    for blob in shard_blobs:
        offsets.append(pos)
        pos += len(blob)
    index = struct.pack(f"<{len(offsets)}Q", *offsets)
    return head + index + b"".join(shard_blobs)


def read_archive(raw: bytes):
    """Returns (preamble, [shard bytes]) with full bounds validation."""
    preamble, off = ArchivePreamble.unpack(raw)
    n = preamble.n_shards
    if len(raw) < off + 8 * n:
        raise FormatError("archive shard index truncated")
    offsets = list(struct.unpack_from(f"<{n}Q", raw, off))
    bounds = offsets + [len(raw)]
    blobs = []
    for i in range(n):
        start, end = bounds[i], bounds[i + 1]
        if not (off + 8 * n <= start < end <= len(raw)):
            raise FormatError(f"corrupt shard offset index at entry {i}")
        blob = raw[start:end]
        header = ShardHeader.unpack(blob)
        if len(blob) != HEADER_SIZE + sum(header.section_lengths):
            raise FormatError(f"shard {i} length disagrees with its header")
        blobs.append(blob)
    return preamble, blobs

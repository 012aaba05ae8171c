"""The .fcgs file: fixed header, chunk table, section table, framed sections.

See docs/bitstream.md for the byte-level layout.
"""

from __future__ import annotations

import struct
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptionError, FormatError, TruncationError
from .model_io import SceneBBox

MAGIC = b"FCGS01"
VERSION = 1
DEFAULT_CHUNK = 1 << 20

POSITIONS, MASKS, ZHAT, LATENT = 1, 2, 3, 4
KIND_NAMES = {POSITIONS: "positions", MASKS: "masks", ZHAT: "zhat", LATENT: "latent"}
STREAM_IDS = {"GEO": 0, "COL0": 1, "COL1": 2}
STREAM_NAMES = {v: k for k, v in STREAM_IDS.items()}
NO_STREAM = 255
PROFILES = {"default": 0, "custom": 1}

_FIXED = struct.Struct("<6sHIQQQ6d16sHHQ")
_CHUNK = struct.Struct("<QQ")
_SECTION = struct.Struct("<BBBBIQI")


@dataclass(frozen=True)
class SectionInfo:
    kind: int
    chunk: int
    stream: int = NO_STREAM
    batch: int = 255
    part: int = 255
    length: int = 0
    crc: int = 0  # CRC-32 of the framed section bytes

    @property
    def label(self) -> str:
        parts = [f"chunk{self.chunk}", KIND_NAMES.get(self.kind, f"kind{self.kind}")]
        if self.batch != 255:
            parts.append(f"batch{self.batch}")
        if self.stream != NO_STREAM:
            parts.append(STREAM_NAMES.get(self.stream, f"stream{self.stream}"))
        if self.part != 255:
            parts.append(f"part{self.part}")
        return "/".join(parts)

    def key(self) -> tuple:
        return (self.kind, self.chunk, self.stream, self.batch, self.part)


@dataclass(eq=False)
class ContainerHeader:
    count: int
    chunk_size: int
    seed: int
    bbox: SceneBBox
    fingerprint: bytes
    profile: str = "default"
    clamp_count: int = 0
    chunks: list = field(default_factory=list)  # (count, ones) per chunk
    sections: list = field(default_factory=list)  # SectionInfo
    version: int = VERSION

    @property
    def size(self) -> int:
        return _FIXED.size + 4 + _CHUNK.size * len(self.chunks) + 4 + _SECTION.size * len(self.sections) + 4

    @property
    def ones(self) -> int:
        return sum(o for _, o in self.chunks)


def expected_sections(chunk: int, n_batches: int = 4, streams=(("GEO", 1), ("COL0", 3), ("COL1", 4))) -> list[SectionInfo]:
    """Fixed section order of one chunk."""
    out = [SectionInfo(POSITIONS, chunk), SectionInfo(MASKS, chunk)]
    out += [SectionInfo(ZHAT, chunk, STREAM_IDS[s]) for s, _ in streams]
    for b in range(n_batches):
        for s, parts in streams:
            out += [SectionInfo(LATENT, chunk, STREAM_IDS[s], b, k) for k in range(parts)]
    return out


def write_container(header: ContainerHeader, sections: list[bytes]) -> bytes:
    if header.count < 1:
        raise FormatError("container needs N >= 1")
    if len(sections) != len(header.sections):
        raise ValueError("one section payload per section-table entry")
    infos = [
        SectionInfo(i.kind, i.chunk, i.stream, i.batch, i.part, len(s), zlib.crc32(s))
        for i, s in zip(header.sections, sections)
    ]
    header.sections = infos
    out = [
        _FIXED.pack(
            MAGIC,
            header.version,
            header.size,
            header.count,
            header.chunk_size,
            header.seed & ((1 << 64) - 1),
            *np.asarray(header.bbox.min, dtype=np.float64).tolist(),
            *np.asarray(header.bbox.max, dtype=np.float64).tolist(),
            bytes(header.fingerprint),
            PROFILES.get(header.profile, 1),
            0,
            header.clamp_count,
        ),
        struct.pack("<I", len(header.chunks)),
    ]
    out += [_CHUNK.pack(c, o) for c, o in header.chunks]
    out.append(struct.pack("<I", len(infos)))
    out += [_SECTION.pack(i.kind, i.stream, i.batch, i.part, i.chunk, i.length, i.crc) for i in infos]
    head = b"".join(out)
    return b"".join([head, struct.pack("<I", zlib.crc32(head))] + sections)


def read_header(data: bytes) -> ContainerHeader:
    data = memoryview(data)
    if len(data) < len(MAGIC) or bytes(data[: len(MAGIC)]) != MAGIC:
        raise FormatError("not an FCGS01 container (bad magic)")
    if len(data) < _FIXED.size + 4:
        raise TruncationError("container shorter than its fixed header")
    f = _FIXED.unpack_from(data, 0)
    version, hsize, count, chunk_size, seed = f[1:6]
    bbox = SceneBBox(np.array(f[6:9]), np.array(f[9:12]))
    fingerprint, profile, _flags, clamp = f[12:16]
    if version > VERSION:
        raise FormatError(f"container version {version} is newer than supported {VERSION}")
    if version < 1:
        raise FormatError(f"invalid container version {version}")
    off = _FIXED.size
    (n_chunks,) = struct.unpack_from("<I", data, off)
    off += 4
    if len(data) < off + n_chunks * _CHUNK.size + 4:
        raise TruncationError("chunk table truncated")
    chunks = [_CHUNK.unpack_from(data, off + i * _CHUNK.size) for i in range(n_chunks)]
    off += n_chunks * _CHUNK.size
    (n_sec,) = struct.unpack_from("<I", data, off)
    off += 4
    if len(data) < off + n_sec * _SECTION.size:
        raise TruncationError("section table truncated")
    sections = []
    for i in range(n_sec):
        kind, stream, batch, part, chunk, length, crc = _SECTION.unpack_from(data, off + i * _SECTION.size)
        sections.append(SectionInfo(kind, chunk, stream, batch, part, length, crc))
    off += n_sec * _SECTION.size
    if len(data) < off + 4:
        raise TruncationError("header checksum missing")
    (crc,) = struct.unpack_from("<I", data, off)
    if zlib.crc32(data[:off]) != crc:
        raise CorruptionError("header checksum mismatch", "header")
    off += 4
    if count < 1:
        raise FormatError("container declares N = 0 Gaussians")
    if chunk_size < 1:
        raise FormatError("container declares chunk size 0")
    if not (np.all(np.isfinite(bbox.min)) and np.all(np.isfinite(bbox.max)) and np.all(bbox.max > bbox.min)):
        raise FormatError("container bbox is not finite with positive extent")
    if off != hsize:
        raise CorruptionError(f"header size field {hsize} disagrees with tables ({off})", "header")
    if sum(c for c, _ in chunks) != count:
        raise CorruptionError("chunk table counts do not sum to N", "header")
    if any(o > c for c, o in chunks):
        raise CorruptionError("chunk table has more mask ones than Gaussians", "header")
    names = {v: k for k, v in PROFILES.items()}
    return ContainerHeader(
        count, chunk_size, seed, bbox, bytes(fingerprint), names.get(profile, "custom"), clamp,
        [tuple(c) for c in chunks], sections, version,
    )


def read_container(data: bytes) -> tuple[ContainerHeader, list[bytes]]:
    """Parse and validate; sections of unknown kind are dropped with a warning."""
    header = read_header(data)
    total = sum(s.length for s in header.sections)
    if header.size + total != len(data):
        raise TruncationError(
            f"section table accounts for {header.size + total} bytes, file has {len(data)}"
        )
    off = header.size
    known_infos, payloads = [], []
    for info in header.sections:
        blob = bytes(data[off : off + info.length])
        off += info.length
        if zlib.crc32(blob) != info.crc:
            raise CorruptionError("section checksum mismatch", info.label)
        if info.kind not in KIND_NAMES:
            warnings.warn(f"skipping unknown section kind {info.kind} ({info.length} bytes)", stacklevel=2)
            continue
        if info.length < 8 or struct.unpack_from("<Q", blob)[0] != info.length - 8:
            raise CorruptionError("section length prefix disagrees with the section table", info.label)
        known_infos.append(info)
        payloads.append(blob)
    header.sections = known_infos
    return header, payloads

"""Lossless coding of 16-bit quantised positions with a breadth-first octree.

Section body layout (all little-endian)::

    u8   mode            0 = octree, 1 = raw uint16 triples
    u64  count
    octree mode:
      16 x level table   u8 n_symbols, then n_symbols x (u8 symbol, u16 freq - 1)
      u8   dup flag      1 when some leaf holds more than one point
      [u64 nbytes, varints of (leaf count - 1) in Morton order]   if dup flag
      range-coded occupancy bytes, level by level, nodes in Morton order
    raw mode:
      count x 3 x u16    Morton order
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import _rc, coder
from .coder import QuantizedCdf, SectionDecoder, SectionEncoder, quantize_pmf
from .errors import CorruptionError, TruncationError
from .model_io import SceneBBox

BITS = 16
LEVELS = BITS
MAX_INDEX = (1 << BITS) - 1
MODE_OCTREE = 0
MODE_RAW = 1


@dataclass(frozen=True, eq=False)
class QuantizedPositions:
    indices: np.ndarray  # (N, 3) int64 in [0, 2^16)
    bbox: SceneBBox

    @property
    def count(self) -> int:
        return len(self.indices)


def quantize_positions(positions, bbox: SceneBBox) -> QuantizedPositions:
    """index = floor((p - a)/s + 1/2) clamped to [0, 65535], s = extent / 65535.

    This is the floor-of-cell rule over the frame [a - s/2, b + s/2], whose
    2^16 cells are centred on a + k*s; bbox.min maps to 0 and bbox.max to 65535.
    """
    p = np.asarray(positions, dtype=np.float64)
    s = bbox.extent / MAX_INDEX
    k = np.floor((p - bbox.min) / s + 0.5)
    return QuantizedPositions(np.clip(k, 0, MAX_INDEX).astype(np.int64), bbox)


def dequantize_positions(qp: QuantizedPositions) -> np.ndarray:
    """Cell centre a + k*s; index 65535 maps exactly onto bbox.max."""
    s = qp.bbox.extent / MAX_INDEX
    out = qp.bbox.min + qp.indices * s
    return np.where(qp.indices == MAX_INDEX, qp.bbox.max, out)


def normalized_positions(indices) -> np.ndarray:
    """Grid coordinates in (0, 1): (k + 1/2) / 2^16, independent of the bbox."""
    return (np.asarray(indices, dtype=np.float64) + 0.5) / (1 << BITS)


def _spread(v):
    v = v.astype(np.uint64) & np.uint64(0xFFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x0C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x249249249249)
    return v


def _compact(v):
    v = v & np.uint64(0x249249249249)
    v = (v | (v >> np.uint64(2))) & np.uint64(0x0C30C30C30C3)
    v = (v | (v >> np.uint64(4))) & np.uint64(0x00F00F00F00F)
    v = (v | (v >> np.uint64(8))) & np.uint64(0x0000FF0000FF)
    v = (v | (v >> np.uint64(16))) & np.uint64(0xFFFF)
    return v.astype(np.int64)


def morton_keys(indices) -> np.ndarray:
    """48-bit interleave; within each octant triple x is the high bit, z the low."""
    idx = np.asarray(indices)
    return ((_spread(idx[:, 0]) << np.uint64(2)) | (_spread(idx[:, 1]) << np.uint64(1)) | _spread(idx[:, 2])).astype(
        np.int64
    )


def morton_decode(keys) -> np.ndarray:
    k = np.asarray(keys, dtype=np.int64).astype(np.uint64)
    return np.stack([_compact(k >> np.uint64(2)), _compact(k >> np.uint64(1)), _compact(k)], axis=1)


def morton_order(indices) -> np.ndarray:
    """Stable permutation sorting points by Morton key (ties keep input order)."""
    return np.argsort(morton_keys(indices), kind="stable")


def _write_varints(values) -> bytes:
    out = bytearray()
    for v in values.tolist():
        while v >= 0x80:
            out.append((v & 0x7F) | 0x80)
            v >>= 7
        out.append(v)
    return bytes(out)


def _read_varints(data: bytes, count: int) -> np.ndarray:
    out = np.empty(count, dtype=np.int64)
    pos = 0
    for i in range(count):
        v = shift = 0
        while True:
            if pos >= len(data):
                raise CorruptionError("duplicate-count varints truncated", "positions")
            b = data[pos]
            pos += 1
            v |= (b & 0x7F) << shift
            shift += 7
            if not b & 0x80:
                break
            if shift > 63:
                raise CorruptionError("duplicate-count varint too long", "positions")
        out[i] = v
    if pos != len(data):
        raise CorruptionError("stray bytes after duplicate counts", "positions")
    return out


def _occupancy_levels(keys_sorted_unique):
    """Per level: occupancy bytes of every node, nodes in Morton order."""
    levels = []
    for lvl in range(LEVELS):
        child = keys_sorted_unique >> (3 * (LEVELS - 1 - lvl))
        child = child[np.concatenate(([True], child[1:] != child[:-1]))]
        parent = child >> 3
        starts = np.flatnonzero(np.concatenate(([True], parent[1:] != parent[:-1])))
        bits = (1 << (child & 7)).astype(np.int64)
        levels.append(np.bitwise_or.reduceat(bits, starts))
    return levels


def encode_positions(indices, mode: int | None = None) -> bytes:
    """Framed section for (N, 3) indices, sorted into Morton order.

    ``mode`` forces MODE_OCTREE or MODE_RAW; by default the smaller one wins.
    """
    idx = np.asarray(indices, dtype=np.int64)
    n = len(idx)
    keys = np.sort(morton_keys(idx)) if n else np.zeros(0, dtype=np.int64)
    raw = struct.pack("<BQ", MODE_RAW, n) + morton_decode(keys).astype("<u2").tobytes()
    if n == 0 or mode == MODE_RAW:
        return coder.frame(raw)
    uniq, counts = np.unique(keys, return_counts=True)
    levels = _occupancy_levels(uniq)
    head = bytearray(struct.pack("<BQ", MODE_OCTREE, n))
    tables = []
    for occ in levels:
        sym, freq = np.unique(occ, return_counts=True)
        q = quantize_pmf(freq / freq.sum())
        f = q.freqs
        head.append(len(sym))
        for s_, f_ in zip(sym.tolist(), f.tolist()):
            head += struct.pack("<BH", s_, f_ - 1)
        tables.append(_level_cdf(sym, f))
    dup = bool(np.any(counts > 1))
    head.append(int(dup))
    if dup:
        v = _write_varints(counts - 1)
        head += struct.pack("<Q", len(v)) + v
    table, lows, sizes = coder._pack_tables(tables)
    symbols = np.concatenate(levels)
    index = np.repeat(np.arange(LEVELS), [len(x) for x in levels])
    enc = SectionEncoder(len(symbols) + 64)
    enc.table(symbols, index, table, lows, sizes)
    body = bytes(head) + _rc.finish(enc.st, enc.buf, enc.pos)
    return coder.frame(body if len(body) < len(raw) or mode == MODE_OCTREE else raw)


def _level_cdf(sym, freqs) -> QuantizedCdf:
    f = np.zeros(256, dtype=np.int64)
    f[np.asarray(sym)] = freqs
    cdf = np.zeros(257, dtype=np.int64)
    np.cumsum(f, out=cdf[1:])
    return QuantizedCdf(0, cdf)


def decode_positions(data: bytes) -> np.ndarray:
    """Inverse of encode_positions: (N, 3) int64 indices in Morton order."""
    body, end = coder.unframe(data, section="positions")
    if end != len(data):
        raise CorruptionError("trailing bytes after position section", "positions")
    if len(body) < 9:
        raise TruncationError("position section shorter than its 9-byte header")
    mode, n = struct.unpack_from("<BQ", body)
    off = 9
    if mode == MODE_RAW:
        if len(body) != off + 6 * n:
            raise TruncationError(f"raw position section holds {len(body) - off} bytes, expected {6 * n}")
        return np.frombuffer(body, dtype="<u2", offset=off).reshape(n, 3).astype(np.int64)
    if mode != MODE_OCTREE:
        raise CorruptionError(f"unknown position mode {mode}", "positions")
    tables = []
    try:
        for _ in range(LEVELS):
            k = body[off]
            off += 1
            if k == 0:
                raise CorruptionError("empty occupancy table", "positions")
            sym, freq = [], []
            for _ in range(k):
                s_, f_ = struct.unpack_from("<BH", body, off)
                off += 3
                sym.append(s_)
                freq.append(f_ + 1)
            if sum(freq) != coder.TOTAL or 0 in sym or len(set(sym)) != k:
                raise CorruptionError("invalid occupancy table", "positions")
            tables.append(_level_cdf(sym, freq))
        dup = body[off]
        off += 1
        counts_blob = None
        if dup:
            (nb,) = struct.unpack_from("<Q", body, off)
            off += 8
            counts_blob = body[off : off + nb]
            if len(counts_blob) != nb:
                raise TruncationError("duplicate counts truncated")
            off += nb
    except (IndexError, struct.error):
        raise TruncationError("position section header truncated") from None
    table, lows, sizes = coder._pack_tables(tables)
    dec = SectionDecoder(body[off:], "positions")
    nodes = np.zeros(1, dtype=np.int64)
    for lvl in range(LEVELS):
        occ = dec.table(len(nodes), np.full(len(nodes), lvl, dtype=np.int64), table, lows, sizes)
        if np.any(occ == 0):
            raise CorruptionError("empty occupancy byte at an internal node", "positions")
        bits = np.unpackbits(occ.astype(np.uint8)[:, None], axis=1, bitorder="little").astype(bool)
        nodes = ((nodes[:, None] << 3) | np.arange(8))[bits]
        if len(nodes) > n:
            raise CorruptionError("octree holds more leaves than points", "positions")
    if counts_blob is not None:
        counts = _read_varints(counts_blob, len(nodes)) + 1
    else:
        counts = np.ones(len(nodes), dtype=np.int64)
    if counts.sum() != n:
        raise CorruptionError(f"octree decodes {int(counts.sum())} points, header says {n}", "positions")
    return morton_decode(np.repeat(nodes, counts))

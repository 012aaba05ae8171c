"""Bit-exact range coding against quantised distributions.

Every coded section is framed as an 8-byte little-endian body length followed
by the body.  Distributions are integer cumulative tables totalling 2**16.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _rc
from .errors import CoderError, CorruptionError, TruncationError

TOTAL = _rc.TOTAL
FRAME = 8
MASK_HEADER = 4


@dataclass(frozen=True, eq=False)
class QuantizedCdf:
    """Cumulative frequencies over the symbol window ``[lo, lo + len(cdf) - 2]``."""

    lo: int
    cdf: np.ndarray

    def __post_init__(self):
        cdf = np.asarray(self.cdf, dtype=np.int64)
        if cdf.ndim != 1 or cdf.size < 2:
            raise ValueError("cdf needs at least two entries")
        if cdf[0] != 0 or cdf[-1] != TOTAL:
            raise ValueError("cdf must start at 0 and end at 2**16")
        if np.any(np.diff(cdf) < 0):
            raise ValueError("cdf must be non-decreasing")
        object.__setattr__(self, "cdf", cdf)

    @property
    def hi(self) -> int:
        return self.lo + self.cdf.size - 2

    @property
    def freqs(self) -> np.ndarray:
        return np.diff(self.cdf)

    def probability(self, symbol: int) -> float:
        k = int(symbol) - self.lo
        return float(self.cdf[k + 1] - self.cdf[k]) / TOTAL


def quantize_pmf(p, lo: int = 0) -> QuantizedCdf:
    """Largest-remainder rounding of ``p`` to integer frequencies, floor 1 per bin."""
    p = np.asarray(p, dtype=np.float64)
    w = p.size
    if w == 0:
        raise ValueError("empty pmf")
    if w > TOTAL:
        raise ValueError(f"window of {w} bins exceeds {TOTAL}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("pmf entries must be finite and non-negative")
    s = p.sum()
    if s > 1 + 1e-6:
        raise ValueError(f"pmf sums to {s} > 1")
    ideal = p / s * TOTAL if s > 0 else np.full(w, TOTAL / w)
    base = np.floor(ideal)
    rem = ideal - base
    f = np.maximum(base.astype(np.int64), 1)
    diff = TOTAL - int(f.sum())
    if diff > 0:
        # stable sort: ties go to the lower index
        order = np.argsort(-rem, kind="stable")
        f[order[:diff]] += 1
    while diff < 0:
        cand = np.flatnonzero(f > 1)
        order = cand[np.argsort(rem[cand], kind="stable")]
        take = order[: min(-diff, order.size)]
        f[take] -= 1
        diff += take.size
    cdf = np.zeros(w + 1, dtype=np.int64)
    np.cumsum(f, out=cdf[1:])
    return QuantizedCdf(int(lo), cdf)


def _pack_tables(cdfs: Sequence[QuantizedCdf]):
    width = max(c.cdf.size for c in cdfs)
    table = np.full((len(cdfs), width), TOTAL, dtype=np.int64)
    for t, c in enumerate(cdfs):
        table[t, : c.cdf.size] = c.cdf
    lows = np.array([c.lo for c in cdfs], dtype=np.int64)
    sizes = np.array([c.cdf.size - 1 for c in cdfs], dtype=np.int64)
    return table, lows, sizes


def _resolve(cdfs, n, index):
    if isinstance(cdfs, QuantizedCdf):
        cdfs = [cdfs]
        index = np.zeros(n, dtype=np.int64) if index is None else index
    cdfs = list(cdfs)
    if index is None:
        if len(cdfs) != n:
            raise ValueError("need one cdf per symbol or an explicit index")
        index = np.arange(n, dtype=np.int64)
    index = np.ascontiguousarray(index, dtype=np.int64)
    if index.size != n:
        raise ValueError("index length must equal the symbol count")
    if n and (index.min() < 0 or index.max() >= len(cdfs)):
        raise ValueError("cdf index out of range")
    return cdfs, index


def frame(body: bytes) -> bytes:
    return struct.pack("<Q", len(body)) + body


def unframe(data: bytes, offset: int = 0, section: str | None = None) -> tuple[bytes, int]:
    """Return (body, offset after frame)."""
    if len(data) - offset < FRAME:
        raise TruncationError(f"missing {FRAME}-byte length prefix" + (f" in {section}" if section else ""))
    (n,) = struct.unpack_from("<Q", data, offset)
    end = offset + FRAME + n
    if end > len(data):
        raise TruncationError(
            f"body announces {n} bytes, {len(data) - offset - FRAME} present"
            + (f" in {section}" if section else "")
        )
    return bytes(data[offset + FRAME : end]), end


class SectionEncoder:
    """Streaming encoder for one section; kernels append to a growable buffer."""

    def __init__(self, capacity: int = 1024):
        self.st, self.pos = _rc.new_encoder()
        self.buf = np.zeros(max(int(capacity), 64), dtype=np.uint8)
        self.escapes = 0
        self.count = 0

    def _reserve(self, extra: int):
        need = int(self.pos[0]) + extra + 64
        if need > self.buf.size:
            grown = np.zeros(max(need, 2 * self.buf.size), dtype=np.uint8)
            grown[: self.buf.size] = self.buf
            self.buf = grown

    def table(self, symbols, index, table, lows, sizes):
        symbols = np.ascontiguousarray(symbols, dtype=np.int64).ravel()
        self._reserve(3 * symbols.size)
        bad = _rc.enc_table(self.st, self.buf, self.pos, symbols, index, table, lows, sizes)
        if bad >= 0:
            raise CoderError(f"symbol {int(symbols[bad])} at position {bad} has no probability mass")
        self.count += symbols.size

    def bernoulli(self, bits, freq_one: int):
        bits = np.ascontiguousarray(bits, dtype=np.bool_)
        self._reserve(3 * bits.size)
        _rc.enc_bernoulli(self.st, self.buf, self.pos, bits, int(freq_one))
        self.count += bits.size

    def gmm(self, symbols, mu, sigma, theta, step, bound):
        symbols = np.ascontiguousarray(symbols, dtype=np.int64)
        if symbols.size and np.abs(symbols).max() > bound:
            raise CoderError("symbol outside the clamp range")
        self._reserve(5 * symbols.size)
        self.escapes += _rc.enc_gmm(
            self.st, self.buf, self.pos, symbols,
            np.ascontiguousarray(mu), np.ascontiguousarray(sigma), np.ascontiguousarray(theta),
            np.ascontiguousarray(step, dtype=np.float64), int(bound),
        )
        self.count += symbols.size

    def finish(self) -> bytes:
        """Framed section bytes."""
        return frame(_rc.finish(self.st, self.buf, self.pos))


class SectionDecoder:
    def __init__(self, body: bytes, section: str | None = None):
        self.body = np.frombuffer(body, dtype=np.uint8)
        self.st, self.pos = _rc.new_decoder(self.body)
        self.section = section

    def _check(self, bad):
        if bad >= 0 or self.pos[1]:
            raise CorruptionError(f"range decoder state violated at symbol {bad}", self.section)

    def table(self, count, index, table, lows, sizes) -> np.ndarray:
        out = np.zeros(int(count), dtype=np.int64)
        self._check(_rc.dec_table(self.st, self.pos, self.body, out, index, table, lows, sizes))
        return out

    def bernoulli(self, count, freq_one) -> np.ndarray:
        out = np.zeros(int(count), dtype=np.bool_)
        self._check(_rc.dec_bernoulli(self.st, self.pos, self.body, out, int(freq_one)))
        return out

    def gmm(self, shape, mu, sigma, theta, step, bound) -> np.ndarray:
        out = np.zeros(shape, dtype=np.int64)
        self._check(
            _rc.dec_gmm(
                self.st, self.pos, self.body, out,
                np.ascontiguousarray(mu), np.ascontiguousarray(sigma), np.ascontiguousarray(theta),
                np.ascontiguousarray(step, dtype=np.float64), int(bound),
            )
        )
        return out


def encode_symbols(symbols, cdfs, index=None) -> bytes:
    """Range-code ``symbols``; ``cdfs`` is one table, or a list addressed by ``index``
    (default: one table per symbol).  Returns the framed section."""
    symbols = np.ascontiguousarray(symbols, dtype=np.int64).ravel()
    tables, index = _resolve(cdfs, symbols.size, index)
    table, lows, sizes = _pack_tables(tables)
    enc = SectionEncoder(3 * symbols.size + 64)
    enc.table(symbols, index, table, lows, sizes)
    return enc.finish()


def decode_symbols(data: bytes, cdfs, count: int, index=None) -> np.ndarray:
    body, end = unframe(data)
    if end != len(data):
        raise CorruptionError(f"{len(data) - end} trailing bytes after section")
    tables, index = _resolve(cdfs, int(count), index)
    table, lows, sizes = _pack_tables(tables)
    return SectionDecoder(body).table(count, index, table, lows, sizes)


def mask_frequency(bits) -> int:
    """Probability of a one as 16-bit fixed point, kept inside [1, 2**16 - 1]."""
    bits = np.asarray(bits, dtype=np.bool_)
    if bits.size == 0:
        return TOTAL // 2
    f = int(math.floor(bits.sum() / bits.size * TOTAL + 0.5))
    return min(max(f, 1), TOTAL - 1)


def encode_mask_bits(bits) -> bytes:
    """Static-Bernoulli coding; body = u16 freq_one, u16 reserved, range-coded bits."""
    bits = np.asarray(bits, dtype=np.bool_).ravel()
    f1 = mask_frequency(bits)
    enc = SectionEncoder(bits.size // 2 + 64)
    enc.bernoulli(bits, f1)
    body = struct.pack("<HH", f1, 0) + _rc.finish(enc.st, enc.buf, enc.pos)
    return frame(body)


def decode_mask_bits(data: bytes, count: int) -> np.ndarray:
    body, end = unframe(data, section="masks")
    if end != len(data):
        raise CorruptionError("trailing bytes after mask section", "masks")
    if len(body) < MASK_HEADER:
        raise TruncationError("mask section shorter than its 4-byte header")
    f1, reserved = struct.unpack_from("<HH", body)
    if not 1 <= f1 < TOTAL or reserved:
        raise CorruptionError(f"invalid mask frequency {f1}", "masks")
    return SectionDecoder(body[MASK_HEADER:], "masks").bernoulli(count, f1)


def ideal_bits(symbols, cdfs, index=None) -> float:
    """Sum of -log2(freq / 2**16) for the quantised tables actually used."""
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    tables, index = _resolve(cdfs, symbols.size, index)
    table, lows, sizes = _pack_tables(tables)
    k = symbols - lows[index]
    f = table[index, k + 1] - table[index, k]
    return float(-np.log2(f / TOTAL).sum())

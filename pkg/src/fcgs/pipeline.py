"""End-to-end encode, decode, estimate and inspect.

A scene is sorted into Morton order of its 16-bit positions and cut into
chunks of ``chunk_size`` Gaussians.  Chunks are coded independently (own
batches, grids and coders), so they can run on a thread pool and the output
does not depend on the worker count.

Encoder, decoder and estimator share ``_code_chunk``; they differ only in the
object that turns distributions into bytes (or bits) and back.
"""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import coder
from .coder import SectionDecoder, SectionEncoder, unframe
from .container import (
    DEFAULT_CHUNK,
    LATENT,
    MASKS,
    POSITIONS,
    STREAM_IDS,
    STREAM_NAMES,
    ZHAT,
    ContainerHeader,
    SectionInfo,
    expected_sections,
    read_container,
    read_header,
    write_container,
)
from .context import (
    DistributionParams,
    GridSet,
    grid_specs,
    hyper_params,
    inter_head,
    inter_hidden,
    intra_params,
    split_batches,
)
from .entropy_model import FactorizedPrior, MixedDistribution, entropy_bits
from .errors import CoderError, CorruptionError, FcgsError, WeightsMismatchError
from .geom_codec import (
    QuantizedPositions,
    decode_positions,
    dequantize_positions,
    encode_positions,
    morton_order,
    normalized_positions,
    quantize_positions,
)
from .model_io import GaussianCloud, compute_bbox
from .neural import ModelWeights, apply_transform, compute_masks, quantize
from .report import STREAM_COMPONENT, RateReport

CLAMP_WARN_FRACTION = 1e-4
# bytes the range coder adds on top of the information content (flush tail)
FLUSH_BYTES = 2.0
# latent elements per block in the latent loop (rows = LATENT_BLOCK // y_dim)
LATENT_BLOCK = 1 << 21


@dataclass
class ChunkTrace:
    """Instrumentation: the symbols a chunk coded, keyed by stream."""

    masks: np.ndarray | None = None
    zhat: dict = field(default_factory=dict)
    yhat: dict = field(default_factory=dict)


def stream_rows(kind: str, masks: np.ndarray) -> np.ndarray:
    if kind == "GEO":
        return np.arange(len(masks))
    if kind == "COL0":
        return np.flatnonzero(~masks)
    return np.flatnonzero(masks)


# ------------------------------------------------------------ section io ---


class _EncodeIO:
    def __init__(self, weights, y_values, chunk):
        self.w = weights
        self.y = y_values  # stream -> unquantised latent rows
        self.chunk = chunk
        self.sections: list[tuple[SectionInfo, bytes]] = []
        self.yhat = {}
        self.clamped = 0
        self.symbols = 0
        for s in weights.streams:
            y = self.y[s.kind]
            sym = np.empty(y.shape, dtype=np.int32)
            rb = _rows_per_block(s)
            for a in range(0, len(y), rb):
                q = quantize(y[a : a + rb], weights.step(s.kind), weights.symbol_bound)
                sym[a : a + rb] = q.symbols
                self.clamped += q.clamped
            self.yhat[s.kind] = sym
            self.symbols += sym.size

    def start(self, stream, n):
        # the decoder fills yhat batch by batch; the encoder already knows it
        return self.yhat[stream.kind]

    def _zhat_symbols(self, stream):
        y = self.y.pop(stream.kind)
        if not len(y):
            return np.zeros((0, stream.z_dim), dtype=np.int16)
        z = apply_transform(self.w, "hyper_analysis", stream, y)
        return quantize(z, np.ones(stream.z_dim), self.w.z_bound).symbols.astype(np.int16)

    def zhat(self, stream, prior: FactorizedPrior):
        zhat = self._zhat_symbols(stream)
        enc = SectionEncoder(zhat.size + 64)
        if zhat.size:
            table, lows, sizes = coder._pack_tables(prior.cdfs)
            index = np.tile(np.arange(stream.z_dim), len(zhat))
            enc.table(zhat.ravel(), index, table, lows, sizes)
        self.sections.append((SectionInfo(ZHAT, self.chunk, STREAM_IDS[stream.kind]), enc.finish()))
        return zhat

    def open(self, stream, batch, n):
        # one streaming coder per part; row blocks are appended in order
        self.batch = batch
        self.coders = [SectionEncoder(5 * n * stream.chunk_width + 64) for _ in range(stream.n_chunks)]

    def latent(self, stream, part, rows, cols, dist: MixedDistribution, step):
        sym = self.yhat[stream.kind][rows, cols]
        self.coders[part].gmm(sym, dist.mu, dist.sigma, dist.theta, step, self.w.symbol_bound)
        return sym

    def close(self, stream):
        for k, enc in enumerate(self.coders):
            info = SectionInfo(LATENT, self.chunk, STREAM_IDS[stream.kind], self.batch, k)
            self.sections.append((info, enc.finish()))
        self.coders = None


class _DecodeIO:
    def __init__(self, weights, payloads, infos):
        self.w = weights
        self.payloads = payloads
        self.infos = infos
        self.i = 0
        self.label = infos[0].label if infos else "header"

    def _next(self):
        info, blob = self.infos[self.i], self.payloads[self.i]
        self.i += 1
        self.label = info.label
        body, _ = unframe(blob, section=info.label)
        return info, body

    def start(self, stream, n):
        return np.zeros((n, stream.y_dim), dtype=np.int32)

    def zhat(self, stream, prior: FactorizedPrior, n: int):
        info, body = self._next()
        if n == 0:
            return np.zeros((0, stream.z_dim), dtype=np.int16)
        table, lows, sizes = coder._pack_tables(prior.cdfs)
        index = np.tile(np.arange(stream.z_dim), n)
        dec = SectionDecoder(body, info.label)
        z = dec.table(n * stream.z_dim, index, table, lows, sizes)
        return z.reshape(n, stream.z_dim).astype(np.int16)

    def open(self, stream, batch, n):
        self.coders = []
        for _ in range(stream.n_chunks):
            info, body = self._next()
            self.coders.append(SectionDecoder(body, info.label) if n else None)

    def latent(self, stream, part, rows, cols, dist, step):
        shape = (len(rows), cols.stop - cols.start)
        self.label = self.coders[part].section
        return self.coders[part].gmm(shape, dist.mu, dist.sigma, dist.theta, step, self.w.symbol_bound)

    def close(self, stream):
        self.coders = None


class _EstimateIO(_EncodeIO):
    """Counts model bits instead of coding; records estimated bytes per section."""

    def zhat(self, stream, prior):
        zhat = self._zhat_symbols(stream)
        bits = prior.bits(zhat)
        self.sections.append((SectionInfo(ZHAT, self.chunk, STREAM_IDS[stream.kind]), _est_bytes(bits, zhat.size)))
        return zhat

    def open(self, stream, batch, n):
        self.batch, self.n = batch, n
        self.bits = [0.0] * stream.n_chunks

    def latent(self, stream, part, rows, cols, dist, step):
        sym = self.yhat[stream.kind][rows, cols]
        self.bits[part] += dist.coded_bits(sym, step, self.w.symbol_bound)
        return sym

    def close(self, stream):
        for k, bits in enumerate(self.bits):
            info = SectionInfo(LATENT, self.chunk, STREAM_IDS[stream.kind], self.batch, k)
            self.sections.append((info, _est_bytes(bits, self.n)))


def _est_bytes(bits: float, n: int) -> float:
    return coder.FRAME + (bits / 8.0 + FLUSH_BYTES if n else 0.0)


# ------------------------------------------------------------ chunk loop ---


def _code_chunk(weights: ModelWeights, seed: int, p_norm: np.ndarray, masks: np.ndarray, io, decode=False):
    """Hyperpriors, then batch by batch, stream by stream, chunk by chunk."""
    n = len(p_norm)
    specs = grid_specs(weights.grid_res_3d, weights.grid_res_2d)
    rows = {s.kind: stream_rows(s.kind, masks) for s in weights.streams}
    zhat = {}
    for s in weights.streams:
        prior = FactorizedPrior(weights.factorized_cdf(s.kind), weights.z_bound)
        zhat[s.kind] = io.zhat(s, prior, len(rows[s.kind])) if decode else io.zhat(s, prior)
    batch_of = split_batches(n, seed, weights.batch_ratios).batch_of
    yhat = {s.kind: io.start(s, len(rows[s.kind])) for s in weights.streams}
    for b in range(len(weights.batch_ratios)):
        for s in weights.streams:
            r = rows[s.kind]
            step = weights.step(s.kind)
            sb = batch_of[r]
            cur = np.flatnonzero(sb == b)
            prior = np.flatnonzero(sb < b)
            cw = s.chunk_width
            io.open(s, b, len(cur))
            if len(cur):
                grids = GridSet(p_norm[r[prior]], yhat[s.kind][prior] * step, specs=specs)
                hidden = inter_hidden(weights, s, grids, p_norm[r[cur]])
                del grids
            # rows are coded in blocks to bound memory; every section still
            # holds its symbols in cur order, so the bytes do not depend on
            # the block size
            rb = _rows_per_block(s)
            for a in range(0, len(cur), rb):
                blk = cur[a : a + rb]
                sl = slice(a, a + len(blk))
                h = hyper_params(weights, s, zhat[s.kind][blk].astype(np.float64))
                sp = inter_head(weights, s, hidden[sl])
                for k in range(s.n_chunks):
                    cols = slice(k * cw, (k + 1) * cw)
                    params = [_take(h, None, cols), _take(sp, None, cols)]
                    if "c" in s.gmm_sources:
                        prefix = yhat[s.kind][blk, : k * cw] * step[: k * cw]
                        params.append(intra_params(weights, s, prefix, k, n=len(blk)))
                    dist = MixedDistribution.from_params(params)
                    yhat[s.kind][blk, cols] = io.latent(s, k, blk, cols, dist, step[cols])
            io.close(s)
            hidden = None
    return zhat, yhat


def _rows_per_block(stream) -> int:
    return max(1, LATENT_BLOCK // stream.y_dim)


def _take(p, rows, cols):
    if rows is None:
        return DistributionParams(p.mu[:, cols], p.sigma[:, cols], p.pi[:, cols], p.source)
    return DistributionParams(p.mu[rows, cols], p.sigma[rows, cols], p.pi[rows, cols], p.source)


def _latent_inputs(weights, cloud, sel, masks):
    """Unquantised latents per stream for the cloud rows ``sel`` of one chunk."""
    y = {}
    for s in weights.streams:
        r = sel[stream_rows(s.kind, masks)]
        if s.kind == "GEO":
            y[s.kind] = cloud.f_geo[r]
        elif s.uses_transform:
            y[s.kind] = apply_transform(weights, "analysis", s, cloud.f_col[r]) if len(r) else np.zeros((0, s.y_dim))
        else:
            y[s.kind] = cloud.f_col[r]
    return y


def _chunk_masks(weights, cloud, sel):
    rb = LATENT_BLOCK // 64
    out = [
        compute_masks(weights, np.concatenate([cloud.f_geo[sel[a : a + rb]], cloud.f_col[sel[a : a + rb]]], axis=1))[0]
        for a in range(0, len(sel), rb)
    ]
    return np.concatenate(out)


# ---------------------------------------------------------------- encode ---


@dataclass
class _Prepared:
    bbox: object
    indices: np.ndarray  # Morton-sorted
    order: np.ndarray
    chunks: list


def _prepare(cloud: GaussianCloud, chunk_size: int) -> _Prepared:
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    bbox = compute_bbox(cloud)
    qp = quantize_positions(cloud.positions, bbox)
    order = morton_order(qp.indices)
    n = cloud.count
    chunks = [(a, min(a + chunk_size, n)) for a in range(0, n, chunk_size)]
    return _Prepared(bbox, qp.indices[order], order, chunks)


def _map(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _encode_chunk(weights, seed, ci, idx, cloud, sel, estimate=False):
    """Code chunk ``ci``: Morton-sorted indices ``idx`` of cloud rows ``sel``."""
    t = {}
    t0 = time.perf_counter()
    pos = encode_positions(idx)
    t["positions"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    masks = _chunk_masks(weights, cloud, sel)
    mask_sec = coder.encode_mask_bits(masks)
    t["masks"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    y = _latent_inputs(weights, cloud, sel, masks)
    io = (_EstimateIO if estimate else _EncodeIO)(weights, y, ci)
    t["transforms"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    zhat, yhat = _code_chunk(weights, seed, normalized_positions(idx), masks, io)
    t["entropy"] = time.perf_counter() - t0
    if estimate:
        ones = int(masks.sum())
        mask_bytes = coder.FRAME + coder.MASK_HEADER + entropy_bits(ones, len(masks)) / 8.0 + FLUSH_BYTES
    else:
        mask_bytes = mask_sec
    sections = [(SectionInfo(POSITIONS, ci), pos), (SectionInfo(MASKS, ci), mask_bytes)] + io.sections
    trace = ChunkTrace(masks, zhat, yhat)
    return sections, int(masks.sum()), io.clamped, io.symbols, trace, t


def encode_scene(
    cloud: GaussianCloud,
    weights: ModelWeights,
    seed: int = 0,
    chunk_size: int = DEFAULT_CHUNK,
    workers: int = 1,
    trace: list | None = None,
    report: dict | None = None,
) -> bytes:
    """Encode ``cloud``; ``trace`` (a list) receives one ChunkTrace per chunk."""
    prep = _prepare(cloud, chunk_size)

    def work(ci):
        a, b = prep.chunks[ci]
        sel = prep.order[a:b]
        return _encode_chunk(weights, seed, ci, prep.indices[a:b], cloud, sel)

    results = _map(work, list(range(len(prep.chunks))), workers)
    infos, payloads, chunk_rows = [], [], []
    clamped = symbols = 0
    timings: dict = {}
    for (a, b), (sections, ones, cl, ns, tr, t) in zip(prep.chunks, results):
        for info, blob in sections:
            infos.append(info)
            payloads.append(blob)
        chunk_rows.append((b - a, ones))
        clamped += cl
        symbols += ns
        if trace is not None:
            trace.append(tr)
        for k, v in t.items():
            timings[k] = timings.get(k, 0.0) + v
    if symbols and clamped > CLAMP_WARN_FRACTION * symbols:
        warnings.warn(f"{clamped} of {symbols} latent symbols were clamped to +-{weights.symbol_bound}", stacklevel=2)
    header = ContainerHeader(
        cloud.count, chunk_size, seed, prep.bbox, weights.fingerprint, weights.profile, clamped, chunk_rows, infos
    )
    if report is not None:
        report["timings"] = timings
    return write_container(header, payloads)


# ---------------------------------------------------------------- decode ---


def _check_layout(header: ContainerHeader, weights: ModelWeights):
    parts = tuple((s.kind, s.n_chunks) for s in weights.streams)
    want = []
    for ci in range(len(header.chunks)):
        want += expected_sections(ci, len(weights.batch_ratios), parts)
    got = header.sections
    for i, w in enumerate(want):
        if i >= len(got):
            raise CorruptionError(f"section {w.label} missing", w.label)
        if got[i].key() != w.key():
            raise CorruptionError(f"expected section {w.label}, found {got[i].label}", got[i].label)
    if len(got) != len(want):
        raise CorruptionError(f"{len(got) - len(want)} unexpected extra sections", got[len(want)].label)
    expected_chunks = math.ceil(header.count / header.chunk_size)
    if len(header.chunks) != expected_chunks or any(
        c != min(header.chunk_size, header.count - i * header.chunk_size) for i, (c, _) in enumerate(header.chunks)
    ):
        raise CorruptionError("chunk table inconsistent with N and chunk size", "header")


def _decode_chunk(weights, header, ci, infos, payloads, f_geo, f_col):
    """Decode chunk ``ci`` into the (n, 8) and (n, 48) output views."""
    n, ones = header.chunks[ci]
    pos_info, mask_info = infos[0], infos[1]
    idx = decode_positions(payloads[0])
    if len(idx) != n:
        raise CorruptionError(f"{len(idx)} positions decoded, chunk holds {n}", pos_info.label)
    masks = coder.decode_mask_bits(payloads[1], n)
    if int(masks.sum()) != ones:
        raise CorruptionError("mask count disagrees with the chunk table", mask_info.label)
    io = _DecodeIO(weights, payloads[2:], infos[2:])
    try:
        zhat, yhat = _code_chunk(weights, header.seed, normalized_positions(idx), masks, io, decode=True)
    except (CorruptionError, CoderError):
        raise
    except (FcgsError, ValueError, FloatingPointError, IndexError) as exc:
        raise CorruptionError(f"decoding failed: {exc}", io.label) from None
    f_geo[:] = yhat["GEO"] * weights.step("GEO")
    r0 = stream_rows("COL0", masks)
    r1 = stream_rows("COL1", masks)
    f_col[r0] = yhat["COL0"] * weights.step("COL0")
    if len(r1):
        s1 = weights.stream("COL1")
        f_col[r1] = apply_transform(weights, "synthesis", s1, yhat["COL1"] * weights.step("COL1"))
    return idx, ChunkTrace(masks, zhat, yhat)


def decode_scene(data: bytes, weights: ModelWeights, workers: int = 1, trace: list | None = None) -> GaussianCloud:
    header, payloads = read_container(data)
    if header.fingerprint != weights.fingerprint:
        raise WeightsMismatchError(
            f"file was encoded with weights {header.fingerprint.hex()}, "
            f"provided weights are {weights.fingerprint.hex()}"
        )
    _check_layout(header, weights)
    per_chunk = len(header.sections) // len(header.chunks)

    f_geo = np.empty((header.count, 8))
    f_col = np.zeros((header.count, 48))

    def work(ci):
        a = ci * per_chunk
        rows = slice(ci * header.chunk_size, ci * header.chunk_size + header.chunks[ci][0])
        return _decode_chunk(
            weights, header, ci, header.sections[a : a + per_chunk], payloads[a : a + per_chunk],
            f_geo[rows], f_col[rows],
        )

    results = _map(work, list(range(len(header.chunks))), workers)
    idx = np.concatenate([r[0] for r in results])
    if trace is not None:
        trace.extend(r[1] for r in results)
    positions = dequantize_positions(QuantizedPositions(idx, header.bbox))
    return GaussianCloud.adopt(positions, f_geo, f_col)


# -------------------------------------------------------------- reports ---


def _report_from_sections(count, n_m1, infos, sizes, header_bytes, estimated) -> RateReport:
    rep = RateReport(count, n_m1, estimated=estimated)
    rep.add("header", header_bytes)
    for info, size in zip(infos, sizes):
        if info.kind == POSITIONS:
            rep.add("positions", size)
        elif info.kind == MASKS:
            rep.add("masks", size)
        else:
            kind = STREAM_NAMES[info.stream]
            rep.add(STREAM_COMPONENT[kind], size)
            if info.kind == ZHAT:
                rep.zhat[kind] = rep.zhat.get(kind, 0.0) + size
            else:
                per = rep.batches.setdefault(kind, [0.0] * 4)
                while len(per) <= info.batch:
                    per.append(0.0)
                per[info.batch] += size
    return rep


def inspect(data: bytes) -> RateReport:
    """Component sizes straight from the container; no weights needed."""
    header = read_header(data)
    rep = _report_from_sections(
        header.count, header.ones, header.sections, [s.length for s in header.sections], header.size, False
    )
    return rep


def estimate(
    cloud: GaussianCloud, weights: ModelWeights, seed: int = 0, chunk_size: int = DEFAULT_CHUNK, masks=None, workers: int = 1
) -> RateReport:
    """Model-based size of every section without running the range coder.

    Positions are coded for real (their size is exact); masks use N*H(f);
    hyperprior sections use -log2 of the factorised prior; latent sections use
    -log2 of the windowed, quantised mixture frequencies the coder would use
    (32 bits per escape); every section adds framing.  ``masks``, when given, must equal
    compute_masks on the cloud and is only checked.
    """
    if masks is not None:
        got, _ = compute_masks(weights, cloud.f_gau)
        if not np.array_equal(np.asarray(masks, dtype=bool), got):
            raise ValueError("masks do not match the weights' MEM routing")
    prep = _prepare(cloud, chunk_size)

    def work(ci):
        a, b = prep.chunks[ci]
        sel = prep.order[a:b]
        return _encode_chunk(weights, seed, ci, prep.indices[a:b], cloud, sel, estimate=True)

    results = _map(work, list(range(len(prep.chunks))), workers)
    infos, sizes, n_m1 = [], [], 0
    timings: dict = {}
    for sections, ones, _, _, _, t in results:
        for info, size in sections:
            infos.append(info)
            sizes.append(len(size) if isinstance(size, bytes) else float(size))
        n_m1 += ones
        for k, v in t.items():
            timings[k] = timings.get(k, 0.0) + v
    header = ContainerHeader(
        cloud.count, chunk_size, seed, prep.bbox, weights.fingerprint, weights.profile, 0,
        [(b - a, 0) for a, b in prep.chunks], infos,
    )
    rep = _report_from_sections(cloud.count, n_m1, infos, sizes, header.size, True)
    rep.timings = timings
    return rep

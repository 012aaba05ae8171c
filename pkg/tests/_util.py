"""Helpers shared by the test modules (not collected by pytest)."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct

import numpy as np

from fcgs.geom_codec import dequantize_positions, morton_order, quantize_positions
from fcgs.model_io import compute_bbox
from fcgs.neural import MAGIC, ModelWeights


def with_changes(w: ModelWeights, tensors=None, layer_specs=None, **kw) -> ModelWeights:
    """Copy of ``w`` with replaced fields and fresh caches."""
    return dataclasses.replace(
        w,
        tensors=dict(w.tensors if tensors is None else tensors),
        layer_specs=dict(w.layer_specs if layer_specs is None else layer_specs),
        _nets={},
        _blob=None,
        **kw,
    )


def split_container(blob: bytes):
    """(metadata dict, tensor bytes) of an FCGSW01 blob."""
    off = len(MAGIC)
    (mlen,) = struct.unpack_from("<I", blob, off)
    meta = json.loads(blob[off + 4 : off + 4 + mlen])
    return meta, blob[off + 4 + mlen :]


def join_container(meta: dict, body: bytes) -> bytes:
    m = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<I", len(m)) + m + body


def reference_order(cloud):
    """Morton order and dequantised positions the decoder must reproduce."""
    qp = quantize_positions(cloud.positions, compute_bbox(cloud))
    order = morton_order(qp.indices)
    return order, dequantize_positions(qp)[order]


def digest(arr: np.ndarray) -> tuple:
    a = np.ascontiguousarray(arr)
    return a.dtype.str, a.shape, hashlib.blake2b(a.tobytes(), digest_size=16).hexdigest()


def trace_digests(traces) -> list:
    """Per chunk: masks and every coded z-hat / y-hat array, reduced to digests."""
    out = []
    for t in traces:
        d = {"masks": digest(t.masks)}
        for k, v in t.zhat.items():
            d[f"zhat/{k}"] = digest(v)
        for k, v in t.yhat.items():
            d[f"yhat/{k}"] = digest(v)
        out.append(d)
    return out


def brute_voxel(pos, vals, spec, voxel):
    """Weighted average for one voxel, evaluated over every Gaussian."""
    g = pos[:, list(spec.axes)] * (spec.res - 1)
    d = np.abs(g - np.asarray(voxel, dtype=np.float64))
    w = np.where(np.all(d < 1, axis=1), np.prod(1 - np.minimum(d, 1), axis=1), 0.0)
    if w.sum() == 0:
        return np.zeros(vals.shape[1])
    return (w[:, None] * vals).sum(axis=0) / w.sum()


def brute_interp(pos, vals, spec, p):
    """Corner-weighted sum of brute-force voxel features at one query point."""
    gp = p[list(spec.axes)] * (spec.res - 1)
    base = np.minimum(np.floor(gp), spec.res - 2)
    out = np.zeros(vals.shape[1])
    for corner in np.ndindex(*(2,) * len(spec.axes)):
        v = base + corner
        out += np.prod(1 - np.abs(gp - v)) * brute_voxel(pos, vals, spec, v)
    return out

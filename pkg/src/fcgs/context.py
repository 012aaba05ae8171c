"""Batch splitting, grid context (inter-Gaussian) and chunk context (intra-Gaussian).

Grids are never stored densely: a 500x500 plane with 256 channels would take
half a gigabyte.  Each grid is kept as a CSR list of (voxel, Gaussian, weight)
contributions, and only the voxels a block of queries touches are averaged.
Voxel averages use a fixed summation order (ascending Gaussian index), so the
result does not depend on how queries are blocked.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numba as nb
import numpy as np

from ._prng import Xoshiro256
from .neural import ModelWeights, StreamSpec, activate, activate_sigma, mlp_forward

DEFAULT_RATIOS = (Fraction(1, 6), Fraction(1, 6), Fraction(1, 3), Fraction(1, 3))
QUERY_BLOCK = 4096
PLANES = ((0, 1), (0, 2), (1, 2))  # xy, xz, yz


# ---------------------------------------------------------------- batches ---


@dataclass(frozen=True, eq=False)
class BatchAssignment:
    batch_of: np.ndarray
    n_batches: int
    ratios: tuple
    seed: int

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.batch_of, minlength=self.n_batches)

    def members(self, b: int) -> np.ndarray:
        """Indices of batch ``b`` in ascending order (the coding order)."""
        return np.flatnonzero(self.batch_of == b)


def batch_bounds(n: int, ratios=DEFAULT_RATIOS) -> list[int]:
    """Cut points floor(n * cumulative ratio); each batch is within 1 of its share."""
    cuts, acc = [0], Fraction(0)
    for r in ratios[:-1]:
        acc += Fraction(r)
        cuts.append((n * acc.numerator) // acc.denominator)
    cuts.append(n)
    return cuts


def split_batches(n: int, seed: int, ratios=DEFAULT_RATIOS) -> BatchAssignment:
    if n < 1:
        raise ValueError("split_batches needs n >= 1")
    perm = Xoshiro256(seed).permutation(n)
    cuts = batch_bounds(n, ratios)
    batch_of = np.empty(n, dtype=np.int64)
    for b in range(len(ratios)):
        batch_of[perm[cuts[b] : cuts[b + 1]]] = b
    batch_of.setflags(write=False)
    return BatchAssignment(batch_of, len(ratios), tuple(ratios), int(seed))


# -------------------------------------------------------------- embedding ---


def positional_embedding(p, n_freqs: int = 8) -> np.ndarray:
    """Per coordinate, per k < n_freqs: [sin(2^k pi p), cos(2^k pi p)]; width 6*n_freqs."""
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    ang = p[:, :, None] * (np.pi * 2.0 ** np.arange(n_freqs))  # (n, 3, L)
    out = np.stack([np.sin(ang), np.cos(ang)], axis=-1).reshape(len(p), 6 * n_freqs)
    return out[0] if single else out


# ------------------------------------------------------------------ grids ---


@dataclass(frozen=True)
class GridSpec:
    axes: tuple
    res: int

    @property
    def name(self) -> str:
        if len(self.axes) == 3:
            return f"3d{self.res}"
        return "xyz"[self.axes[0]] + "xyz"[self.axes[1]] + str(self.res)

    @property
    def n_voxels(self) -> int:
        return self.res ** len(self.axes)


def grid_specs(res_3d=(70, 80, 90), res_2d=(300, 400, 500)) -> list[GridSpec]:
    """Fixed order: 3D grids by resolution, then planes xy, xz, yz by resolution."""
    out = [GridSpec((0, 1, 2), r) for r in res_3d]
    for axes in PLANES:
        out += [GridSpec(axes, r) for r in res_2d]
    return out


def corner_weights(p: np.ndarray, spec: GridSpec):
    """Voxel keys and weights w = prod(1 - |p*(R-1) - v|) of the 2^k surrounding corners."""
    r = spec.res
    g = p[:, list(spec.axes)] * (r - 1)
    if np.any(g < 0) or np.any(g > r - 1):
        raise ValueError("normalised position outside [0, 1]")
    base = np.minimum(np.floor(g), r - 2).astype(np.int64)
    k = len(spec.axes)
    keys = np.zeros((len(p), 1 << k), dtype=np.int64)
    w = np.ones((len(p), 1 << k), dtype=np.float64)
    for c in range(1 << k):
        for d in range(k):
            v = base[:, d] + ((c >> (k - 1 - d)) & 1)
            keys[:, c] = keys[:, c] * r + v
            w[:, c] *= 1.0 - np.abs(g[:, d] - v)
    return keys, w


@dataclass(eq=False)
class GridCsr:
    voxels: np.ndarray  # sorted unique voxel keys
    starts: np.ndarray  # len(voxels) + 1 offsets into pts / ws
    pts: np.ndarray
    ws: np.ndarray


def _build_csr(keys: np.ndarray, w: np.ndarray) -> GridCsr:
    n, k = keys.shape
    flat = keys.ravel()
    order = np.argsort(flat, kind="stable")  # ties keep ascending Gaussian index
    sk = flat[order]
    voxels, first = np.unique(sk, return_index=True)
    starts = np.append(first, sk.size).astype(np.int64)
    return GridCsr(voxels, starts, (order // k).astype(np.int64), w.ravel()[order])


@nb.njit(cache=True, nogil=True)
def _voxel_feature(csr_starts, csr_pts, csr_ws, values, slot, out_row):
    a, b = csr_starts[slot], csr_starts[slot + 1]
    sw = 0.0
    for t in range(a, b):
        sw += csr_ws[t]
    if sw > 0.0:
        for t in range(a, b):
            wt = csr_ws[t]
            if wt > 0.0:
                row = csr_pts[t]
                for d in range(out_row.size):
                    out_row[d] += wt * values[row, d]
        for d in range(out_row.size):
            out_row[d] /= sw


@nb.njit(cache=True, nogil=True)
def _interp_block(qkeys, qw, voxels, starts, pts, ws, values, out):
    """out[i] = sum_c qw[i, c] * feature(qkeys[i, c]); each voxel evaluated once."""
    nq, nc = qkeys.shape
    D = values.shape[1]
    flat = qkeys.ravel()
    order = np.argsort(flat)
    slot_of = np.empty(flat.size, dtype=np.int64)
    uniq = np.empty(flat.size, dtype=np.int64)
    nu = 0
    for t in range(flat.size):
        key = flat[order[t]]
        if nu == 0 or uniq[nu - 1] != key:
            uniq[nu] = key
            nu += 1
        slot_of[order[t]] = nu - 1
    feats = np.zeros((nu, D))
    for u in range(nu):
        j = np.searchsorted(voxels, uniq[u])
        if j < voxels.size and voxels[j] == uniq[u]:
            _voxel_feature(starts, pts, ws, values, j, feats[u])
    for i in range(nq):
        for c in range(nc):
            wt = qw[i, c]
            f = feats[slot_of[i * nc + c]]
            for d in range(D):
                out[i, d] += wt * f[d]


class GridSet:
    """Grid context for one stream: the already-coded latents and their positions.

    ``values`` are dequantised latents (value units) of the included Gaussians.
    """

    def __init__(self, positions_norm, values, include=None, specs=None):
        p = np.asarray(positions_norm, dtype=np.float64)
        v = np.asarray(values, dtype=np.float64)
        if include is not None:
            include = np.asarray(include, dtype=bool)
            p, v = p[include], v[include]
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("normalised position outside [0, 1]")
        self.positions = np.ascontiguousarray(p)
        if v.ndim != 2 or len(v) != len(p):
            raise ValueError("values must be (N, D) with one row per position")
        self.values = np.ascontiguousarray(v)
        self.dim = v.shape[1]
        self.specs = list(specs) if specs is not None else grid_specs()
        self._csr: dict = {}

    @property
    def empty(self) -> bool:
        return len(self.positions) == 0

    def csr(self, g: int, cache: bool = True) -> GridCsr:
        if g in self._csr:
            return self._csr[g]
        keys, w = corner_weights(self.positions, self.specs[g])
        out = _build_csr(keys, w)
        if cache:
            self._csr[g] = out
        return out

    def voxel_features(self, g: int) -> np.ndarray:
        """Dense (R,)*k + (D,) feature array; meant for small grids."""
        spec = self.specs[g]
        out = np.zeros((spec.n_voxels, self.dim))
        if not self.empty:
            c = self.csr(g)
            for j, key in enumerate(c.voxels):
                _voxel_feature(c.starts, c.pts, c.ws, self.values, j, out[key])
        return out.reshape((spec.res,) * len(spec.axes) + (self.dim,))

    def interpolate_grid(self, g: int, p, csr: GridCsr | None = None) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=np.float64))
        out = np.zeros((len(p), self.dim))
        if self.empty or len(p) == 0:
            return out
        c = csr if csr is not None else self.csr(g)
        keys, w = corner_weights(p, self.specs[g])
        for a in range(0, len(p), QUERY_BLOCK):
            b = min(a + QUERY_BLOCK, len(p))
            _interp_block(keys[a:b], w[a:b], c.voxels, c.starts, c.pts, c.ws, self.values, out[a:b])
        return out

    def interpolate(self, p) -> np.ndarray:
        """Concatenation over all grids in spec order; width len(specs) * D."""
        p = np.asarray(p, dtype=np.float64)
        single = p.ndim == 1
        out = np.concatenate([self.interpolate_grid(g, p) for g in range(len(self.specs))], axis=1)
        return out[0] if single else out


def build_grids(positions_norm, y_hat, include, resolutions=None) -> GridSet:
    """GridSet over the included Gaussians; ``resolutions`` = (res_3d, res_2d)."""
    specs = grid_specs(*resolutions) if resolutions is not None else None
    return GridSet(positions_norm, y_hat, include, specs)


# ------------------------------------------------------------- parameters ---


@dataclass(frozen=True, eq=False)
class DistributionParams:
    mu: np.ndarray
    sigma: np.ndarray
    pi: np.ndarray
    source: str


def split_head(raw: np.ndarray, weights: ModelWeights, source: str) -> DistributionParams:
    """Parameter-head layout [mu | sigma-raw | pi], each of equal width."""
    d = raw.shape[-1] // 3
    return DistributionParams(
        raw[..., :d],
        activate_sigma(raw[..., d : 2 * d], weights.sigma_min, weights.sigma_max),
        raw[..., 2 * d :],
        source,
    )


def hyper_params(weights: ModelWeights, stream: StreamSpec, z_hat_values) -> DistributionParams:
    raw = mlp_forward(weights.net(stream.net("h_s")), z_hat_values)
    return split_head(raw, weights, "h")


def inter_hidden(weights: ModelWeights, stream: StreamSpec, grids: GridSet, positions_norm) -> np.ndarray:
    """First-layer pre-activation of MLP_s on [12 interpolated grid features | embedding].

    The layer is accumulated grid by grid (H += f_g W_g^T) so the 12*D-wide
    input row is never materialised.
    """
    net = weights.net(stream.net("mlp_s"))
    p = np.atleast_2d(np.asarray(positions_norm, dtype=np.float64))
    D = stream.y_dim
    n_grid_cols = len(grids.specs) * D
    if net.in_width != n_grid_cols + 6 * weights.embed_freqs:
        raise ValueError(f"{net.name}: input width {net.in_width} does not match grids + embedding")
    w1, b1 = net.weights[0], net.biases[0]
    w_emb = w1[:, n_grid_cols:]
    n = len(p)
    h = np.empty((n, w1.shape[0]))
    for a in range(0, n, QUERY_BLOCK):
        b = min(a + QUERY_BLOCK, n)
        h[a:b] = positional_embedding(p[a:b], weights.embed_freqs) @ w_emb.T + b1
    if not grids.empty and n:
        for g in range(len(grids.specs)):
            csr = grids.csr(g, cache=False)
            wg = w1[:, g * D : (g + 1) * D]
            for a in range(0, n, QUERY_BLOCK):
                b = min(a + QUERY_BLOCK, n)
                h[a:b] += grids.interpolate_grid(g, p[a:b], csr) @ wg.T
            del csr
    return h


def inter_head(weights: ModelWeights, stream: StreamSpec, hidden) -> DistributionParams:
    """Remaining MLP_s layers applied to rows of ``inter_hidden``."""
    net = weights.net(stream.net("mlp_s"))
    hidden = np.atleast_2d(hidden)
    x = np.empty((len(hidden), net.out_width))
    for a in range(0, len(hidden), QUERY_BLOCK):
        y = activate(hidden[a : a + QUERY_BLOCK], net.activations[0])
        for w, bias, act in zip(net.weights[1:], net.biases[1:], net.activations[1:]):
            y = activate(y @ w.T + bias, act)
        x[a : a + QUERY_BLOCK] = y
    return split_head(x, weights, "s")


def inter_params(weights: ModelWeights, stream: StreamSpec, grids: GridSet, positions_norm) -> DistributionParams:
    """Inter-Gaussian context: MLP_s over grid features and positional embedding."""
    return inter_head(weights, stream, inter_hidden(weights, stream, grids, positions_norm))


def intra_params(weights: ModelWeights, stream: StreamSpec, prefix, chunk_index: int, n: int | None = None) -> DistributionParams:
    """Chunk context: MLP_c on [zero-padded prefix | one-hot chunk]; chunk 0 uses stored constants."""
    if "c" not in stream.gmm_sources:
        raise ValueError(f"{stream.kind} has no intra-Gaussian context")
    cw, D = stream.chunk_width, stream.y_dim
    if not 0 <= chunk_index < stream.n_chunks:
        raise ValueError(f"chunk index {chunk_index} outside [0, {stream.n_chunks})")
    prefix = np.asarray(prefix, dtype=np.float64)
    if prefix.ndim == 1:
        prefix = prefix.reshape(1, -1) if prefix.size else np.zeros((n or 1, 0))
    rows = prefix.shape[0] if n is None else n
    if prefix.shape[1] != chunk_index * cw:
        raise ValueError(f"prefix width {prefix.shape[1]} != {chunk_index} chunks x {cw}")
    if chunk_index == 0:
        c0 = weights.tensors[f"{stream.kind}/chunk0"]
        raw = np.broadcast_to(c0.reshape(-1), (rows, 3 * cw))
        return split_head(np.array(raw), weights, "c")
    x = np.zeros((rows, D + stream.n_chunks))
    x[:, : prefix.shape[1]] = prefix
    x[:, D + chunk_index] = 1.0
    return split_head(mlp_forward(weights.net(stream.net("mlp_c")), x), weights, "c")

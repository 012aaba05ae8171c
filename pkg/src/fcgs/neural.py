"""Weights container (FCGSW01), MLP inference, masking and quantisation."""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ._prng import Xoshiro256
from .errors import CorruptionError, TruncationError, WeightsError

MAGIC = b"FCGSW01"
FORMAT_VERSION = 1
N_GEO = 8
N_COL = 48
N_GAU = N_GEO + N_COL

# rows per block in mlp_forward; bounds activation memory on large chunks
ROW_BLOCK = 1 << 15

ACTIVATIONS = ("relu", "leaky_relu0.2", "gelu-tanh-approx", "identity", "sigmoid")


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def activate(x: np.ndarray, tag: str) -> np.ndarray:
    if tag == "relu":
        return np.maximum(x, 0.0)
    if tag == "identity":
        return x
    if tag == "leaky_relu0.2":
        return np.where(x >= 0, x, 0.2 * x)
    if tag == "gelu-tanh-approx":
        return 0.5 * x * (1.0 + np.tanh(0.7978845608028654 * (x + 0.044715 * x**3)))
    if tag == "sigmoid":
        return _sigmoid(x)
    raise ValueError(f"unknown activation {tag!r}")


@dataclass(frozen=True)
class StreamSpec:
    kind: str
    x_dim: int
    y_dim: int
    z_dim: int
    n_chunks: int
    uses_transform: bool
    gmm_sources: tuple

    @property
    def chunk_width(self) -> int:
        return self.y_dim // self.n_chunks

    def net(self, role: str) -> str:
        return f"{self.kind}/{role}"


DEFAULT_STREAMS = (
    StreamSpec("GEO", 8, 8, 16, 1, False, ("h", "s")),
    StreamSpec("COL0", 48, 48, 24, 3, False, ("h", "s", "c")),
    StreamSpec("COL1", 48, 256, 64, 4, True, ("h", "s", "c")),
)


@dataclass(frozen=True)
class LayerSpec:
    widths: tuple
    activations: tuple


@dataclass(eq=False)
class Network:
    name: str
    weights: list
    biases: list
    activations: list

    @property
    def in_width(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_width(self) -> int:
        return self.weights[-1].shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return mlp_forward(self, x)


def mlp_forward(net: Network, x) -> np.ndarray:
    """Affine layers with the recorded activation after each; rows are samples."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != net.in_width:
        raise ValueError(f"{net.name}: input width {x.shape[1]} != {net.in_width}")
    if len(x) <= ROW_BLOCK:
        out = _forward_rows(net, x)
    else:
        out = np.empty((len(x), net.out_width))
        for a in range(0, len(x), ROW_BLOCK):
            out[a : a + ROW_BLOCK] = _forward_rows(net, x[a : a + ROW_BLOCK])
    return out[0] if single else out


def _forward_rows(net: Network, x: np.ndarray) -> np.ndarray:
    for w, b, act in zip(net.weights, net.biases, net.activations):
        x = activate(x @ w.T + b, act)
    return x


@dataclass(eq=False)
class ModelWeights:
    """Everything the codec needs besides the scene; immutable after load."""

    tensors: dict
    layer_specs: dict
    streams: tuple
    q_geo: np.ndarray
    q_col0: np.ndarray
    q_latent: float = 1.0
    eps_m: float = 0.01
    format_version: int = FORMAT_VERSION
    profile: str = "default"
    embed_freqs: int = 8
    grid_res_3d: tuple = (70, 80, 90)
    grid_res_2d: tuple = (300, 400, 500)
    batch_ratios: tuple = (Fraction(1, 6), Fraction(1, 6), Fraction(1, 3), Fraction(1, 3))
    sigma_min: float = 1e-6
    sigma_max: float = 1e4
    z_bound: int = 255
    symbol_bound: int = 2**15 - 1
    _nets: dict = field(default_factory=dict, repr=False)
    _blob: bytes | None = field(default=None, repr=False)

    # ---- lookups -----------------------------------------------------
    def stream(self, kind: str) -> StreamSpec:
        for s in self.streams:
            if s.kind == kind:
                return s
        raise KeyError(kind)

    def net(self, name: str) -> Network:
        if name not in self._nets:
            spec = self.layer_specs[name]
            n = len(spec.activations)
            self._nets[name] = Network(
                name,
                [self.tensors[f"{name}/{i}/weight"] for i in range(n)],
                [self.tensors[f"{name}/{i}/bias"] for i in range(n)],
                list(spec.activations),
            )
        return self._nets[name]

    def factorized_cdf(self, kind: str) -> np.ndarray:
        return self.tensors[f"{kind}/factorized_cdf"].astype(np.int64)

    def step(self, kind: str) -> np.ndarray:
        s = self.stream(kind)
        if kind == "GEO":
            return self.q_geo
        if kind == "COL0":
            return self.q_col0
        return np.full(s.y_dim, self.q_latent)

    @property
    def n_grids(self) -> int:
        return len(self.grid_res_3d) + 3 * len(self.grid_res_2d)

    # ---- serialisation -----------------------------------------------
    def metadata(self) -> dict:
        return {
            "format_version": self.format_version,
            "profile": self.profile,
            "eps_m": self.eps_m,
            "q_latent": self.q_latent,
            "q_geo": [float(v) for v in self.q_geo],
            "q_col0": [float(v) for v in self.q_col0],
            "embed_freqs": self.embed_freqs,
            "grid_res_3d": list(self.grid_res_3d),
            "grid_res_2d": list(self.grid_res_2d),
            "batch_ratios": [[r.numerator, r.denominator] for r in self.batch_ratios],
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "z_bound": self.z_bound,
            "symbol_bound": self.symbol_bound,
            "mlp_s_input": "concat12+embed",
            "mlp_c_input": "padded_prefix+onehot",
            "streams": [
                {
                    "kind": s.kind,
                    "x_dim": s.x_dim,
                    "y_dim": s.y_dim,
                    "z_dim": s.z_dim,
                    "n_chunks": s.n_chunks,
                    "uses_transform": s.uses_transform,
                    "gmm_sources": list(s.gmm_sources),
                }
                for s in self.streams
            ],
            "networks": {
                name: {"widths": list(spec.widths), "activations": list(spec.activations)}
                for name, spec in self.layer_specs.items()
            },
            "tensors": [
                {"name": name, "shape": list(t.shape), "nbytes": 4 * int(t.size)}
                for name, t in self.tensors.items()
            ],
        }

    def to_bytes(self) -> bytes:
        if self._blob is None:
            meta = json.dumps(self.metadata(), sort_keys=True, separators=(",", ":")).encode()
            parts = [MAGIC, struct.pack("<I", len(meta)), meta]
            parts += [np.ascontiguousarray(t, dtype="<f4").tobytes() for t in self.tensors.values()]
            self._blob = b"".join(parts)
        return self._blob

    @property
    def fingerprint(self) -> bytes:
        """128-bit BLAKE2b digest of the serialised container."""
        return hashlib.blake2b(self.to_bytes(), digest_size=16).digest()


# ------------------------------------------------------------------------
# loading and validation


def expected_shapes(w: ModelWeights) -> dict:
    """Required (in, out) widths of every network implied by the stream specs."""
    emb = 6 * w.embed_freqs
    need = {"mem/mlp_m": (N_GAU, 1, None)}
    for s in w.streams:
        need[s.net("h_a")] = (s.y_dim, s.z_dim, 3)
        need[s.net("h_s")] = (s.z_dim, 3 * s.y_dim, 3)
        need[s.net("mlp_s")] = (w.n_grids * s.y_dim + emb, 3 * s.y_dim, None)
        if "c" in s.gmm_sources:
            need[s.net("mlp_c")] = (s.y_dim + s.n_chunks, 3 * s.chunk_width, None)
        if s.uses_transform:
            need[s.net("g_a")] = (s.x_dim, s.y_dim, 4)
            need[s.net("g_s")] = (s.y_dim, s.x_dim, 4)
    return need


def validate(w: ModelWeights) -> None:
    problems = []
    if w.format_version != FORMAT_VERSION:
        raise WeightsError(f"weights format version {w.format_version} != {FORMAT_VERSION}")
    for s in w.streams:
        if s.y_dim % s.n_chunks:
            problems.append(f"{s.kind}: y_dim {s.y_dim} not divisible by n_chunks {s.n_chunks}")
        if s.kind == "GEO" and tuple(s.gmm_sources) != ("h", "s"):
            problems.append("GEO must mix exactly the h and s sources")
        if s.kind != "GEO" and tuple(s.gmm_sources) != ("h", "s", "c"):
            problems.append(f"{s.kind} must mix the h, s and c sources")
    if w.profile == "default" and tuple(w.streams) != DEFAULT_STREAMS:
        problems.append("default profile requires the stock stream dimensions")
    for name, (din, dout, layers) in expected_shapes(w).items():
        spec = w.layer_specs.get(name)
        if spec is None:
            problems.append(f"{name}: network missing")
            continue
        if layers is not None and len(spec.activations) != layers:
            problems.append(f"{name}: {len(spec.activations)} layers, expected {layers}")
        if len(spec.widths) != len(spec.activations) + 1:
            problems.append(f"{name}: widths/activations length mismatch")
            continue
        if spec.widths[0] != din or spec.widths[-1] != dout:
            problems.append(f"{name}: widths {spec.widths[0]}->{spec.widths[-1]}, expected {din}->{dout}")
        for tag in spec.activations:
            if tag not in ACTIVATIONS:
                problems.append(f"{name}: unknown activation {tag!r}")
        for i in range(len(spec.activations)):
            for part, shape in (
                ("weight", (spec.widths[i + 1], spec.widths[i])),
                ("bias", (spec.widths[i + 1],)),
            ):
                t = w.tensors.get(f"{name}/{i}/{part}")
                if t is None:
                    problems.append(f"{name}/{i}/{part}: tensor missing")
                elif t.shape != shape:
                    problems.append(f"{name}/{i}/{part}: shape {t.shape}, expected {shape}")
    for s in w.streams:
        if "c" in s.gmm_sources:
            t = w.tensors.get(f"{s.kind}/chunk0")
            if t is None or t.shape != (3, s.chunk_width):
                problems.append(f"{s.kind}/chunk0: expected shape (3, {s.chunk_width})")
        t = w.tensors.get(f"{s.kind}/factorized_cdf")
        width = 2 * w.z_bound + 2
        if t is None or t.shape != (s.z_dim, width):
            problems.append(f"{s.kind}/factorized_cdf: expected shape ({s.z_dim}, {width})")
        else:
            ti = t.astype(np.int64)
            if not np.array_equal(ti, t) or np.any(ti[:, 0] != 0) or np.any(ti[:, -1] != 1 << 16):
                problems.append(f"{s.kind}/factorized_cdf: rows must be integer, start at 0, end at 65536")
            elif np.any(np.diff(ti, axis=1) < 1):
                problems.append(f"{s.kind}/factorized_cdf: every bin needs frequency >= 1")
    if w.q_geo.shape != (N_GEO,) or w.q_col0.shape != (N_COL,):
        problems.append("q_geo must have 8 entries and q_col0 48")
    if not (np.all(w.q_geo > 0) and np.all(w.q_col0 > 0) and w.q_latent > 0):
        problems.append("quantisation steps must be strictly positive")
    if not 0 < w.eps_m < 1:
        problems.append(f"eps_m {w.eps_m} outside (0, 1)")
    if not (0 < w.sigma_min < w.sigma_max):
        problems.append("sigma bounds must satisfy 0 < sigma_min < sigma_max")
    if sum(w.batch_ratios) != 1:
        problems.append("batch ratios must sum to 1")
    if problems:
        raise WeightsError("invalid weights: " + "; ".join(problems), problems)


def load_weights(data: bytes) -> ModelWeights:
    """Parse and validate an FCGSW01 container."""
    try:
        return _load_weights(bytes(data))
    except (KeyError, TypeError, ValueError) as exc:
        raise WeightsError(f"weights metadata incomplete or malformed: {exc!r}") from None


def _load_weights(data: bytes) -> ModelWeights:
    if not data.startswith(MAGIC):
        raise WeightsError("not an FCGSW01 weights container (bad magic)")
    off = len(MAGIC)
    if len(data) < off + 4:
        raise WeightsError("weights container truncated before metadata")
    (mlen,) = struct.unpack_from("<I", data, off)
    off += 4
    try:
        meta = json.loads(data[off : off + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightsError(f"weights metadata unreadable: {exc}") from None
    off += mlen
    if meta.get("format_version") != FORMAT_VERSION:
        raise WeightsError(f"weights format version {meta.get('format_version')} != {FORMAT_VERSION}")
    tensors = {}
    for entry in meta["tensors"]:
        name, shape, nbytes = entry["name"], tuple(entry["shape"]), entry["nbytes"]
        if nbytes != 4 * math.prod(shape):
            raise CorruptionError(f"tensor {name}: {nbytes} bytes recorded for shape {shape}", name)
        if off + nbytes > len(data):
            raise TruncationError(f"tensor {name}: data truncated")
        arr = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=off).reshape(shape)
        tensors[name] = arr.astype(np.float64)
        off += nbytes
    if off != len(data):
        raise WeightsError(f"{len(data) - off} unexpected trailing bytes after tensors")
    w = ModelWeights(
        tensors=tensors,
        layer_specs={
            k: LayerSpec(tuple(v["widths"]), tuple(v["activations"])) for k, v in meta["networks"].items()
        },
        streams=tuple(
            StreamSpec(
                s["kind"], s["x_dim"], s["y_dim"], s["z_dim"], s["n_chunks"], s["uses_transform"],
                tuple(s["gmm_sources"]),
            )
            for s in meta["streams"]
        ),
        q_geo=np.array(meta["q_geo"], dtype=np.float64),
        q_col0=np.array(meta["q_col0"], dtype=np.float64),
        q_latent=float(meta["q_latent"]),
        eps_m=float(meta["eps_m"]),
        format_version=meta["format_version"],
        profile=meta["profile"],
        embed_freqs=int(meta["embed_freqs"]),
        grid_res_3d=tuple(meta["grid_res_3d"]),
        grid_res_2d=tuple(meta["grid_res_2d"]),
        batch_ratios=tuple(Fraction(a, b) for a, b in meta["batch_ratios"]),
        sigma_min=float(meta["sigma_min"]),
        sigma_max=float(meta["sigma_max"]),
        z_bound=int(meta["z_bound"]),
        symbol_bound=int(meta["symbol_bound"]),
    )
    validate(w)
    w._blob = data
    return w


# ------------------------------------------------------------------------
# inference helpers


@dataclass(frozen=True, eq=False)
class SymbolArray:
    """Integer symbols with per-channel steps; value = symbol * step."""

    symbols: np.ndarray
    step: np.ndarray
    clamped: int = 0

    def dequantize(self) -> np.ndarray:
        return self.symbols * self.step


def quantize(values, step, bound: int = 2**15 - 1) -> SymbolArray:
    """Round-half-away-from-zero of values/step, clamped to +-bound."""
    values = np.asarray(values, dtype=np.float64)
    step = np.asarray(step, dtype=np.float64)
    if np.any(step <= 0):
        raise ValueError("quantisation steps must be positive")
    if not np.all(np.isfinite(values)):
        raise ValueError("cannot quantise non-finite values")
    r = values / step
    sym = np.copysign(np.floor(np.abs(r) + 0.5), r)
    clamped = int(np.count_nonzero(np.abs(sym) > bound))
    sym = np.clip(sym, -bound, bound).astype(np.int64)
    return SymbolArray(sym, np.broadcast_to(step, values.shape[-1:]).copy(), clamped)


def compute_masks(weights: ModelWeights, f_gau) -> tuple[np.ndarray, np.ndarray]:
    """Route each Gaussian: bit is True when sigmoid(MLP_m(f_gau)) > eps_m."""
    f_gau = np.asarray(f_gau, dtype=np.float64)
    if f_gau.ndim != 2 or f_gau.shape[1] != N_GAU:
        raise ValueError(f"f_gau must be (N, {N_GAU})")
    scores = _sigmoid(mlp_forward(weights.net("mem/mlp_m"), f_gau)[:, 0])
    return scores > weights.eps_m, scores


_TRANSFORM_NET = {
    "analysis": "g_a",
    "synthesis": "g_s",
    "hyper_analysis": "h_a",
    "hyper_synthesis": "h_s",
}


def apply_transform(weights: ModelWeights, kind: str, stream: StreamSpec, x) -> np.ndarray:
    role = _TRANSFORM_NET[kind]
    if role in ("g_a", "g_s") and not stream.uses_transform:
        raise ValueError(f"{stream.kind} bypasses the {kind} transform (y = x)")
    return mlp_forward(weights.net(stream.net(role)), x)


def activate_sigma(raw, sigma_min: float, sigma_max: float) -> np.ndarray:
    return np.clip(np.exp(np.clip(raw, -60.0, 60.0)), sigma_min, sigma_max)


# ------------------------------------------------------------------------
# deterministic stand-in weights

# Hidden widths per stream; the MEM router uses the GEO/COL0 width.
_HIDDEN = {"GEO": 128, "COL0": 128, "COL1": 256}
_PASS_OFFSET = 32.0  # keeps pass-through ReLU units in their linear range
_ROUTER_GAIN = 8.0


class _Draw:
    def __init__(self, seed):
        self.rng = Xoshiro256(seed)

    def __call__(self, *shape):
        return self.rng.uniform(math.prod(shape), -0.3, 0.3).reshape(shape)


def _random_net(draw, widths, acts, gain_out=1e-3):
    """Uniform[-0.3, 0.3] draws scaled by 1/sqrt(fan_in); output layer damped."""
    ws, bs = [], []
    n = len(widths) - 1
    for i in range(n):
        g = 1.0 / math.sqrt(widths[i])
        if i == n - 1:
            g *= gain_out
        ws.append(draw(widths[i + 1], widths[i]) * g)
        bs.append(draw(widths[i + 1]) * g)
    return ws, bs, list(acts)


def _pass_pairs(w, b, rows, cols, scale):
    """rows[2k], rows[2k+1] become ReLU(+scale*x[cols[k]]), ReLU(-scale*x[cols[k]])."""
    for k, c in enumerate(cols):
        for sign, r in ((1.0, rows[2 * k]), (-1.0, rows[2 * k + 1])):
            w[r, :] = 0.0
            w[r, c] = sign * scale
            b[r] = 0.0


def _identity_rows(w, b, rows):
    for r in rows:
        w[r, :] = 0.0
        w[r, r] = 1.0
        b[r] = 0.0


def _laplace_table(scale, z_bound):
    from .coder import quantize_pmf

    k = np.arange(-z_bound, z_bound + 1)
    if scale <= 0:
        p = (k == 0).astype(np.float64)
    else:
        p = np.exp(-np.abs(k) / scale)
    return quantize_pmf(p / p.sum()).cdf


def gen_test_weights(seed: int = 7) -> ModelWeights:
    """Deterministic weights with the default stream profile.

    Every tensor starts as xoshiro256** uniform[-0.3, 0.3] draws (scaled by
    fan-in); selected units are then overwritten so the stand-in model is a
    usable codec: low-opacity Gaussians take the latent path, the latent
    transform is an exact 8x scaling, hyperpriors carry a few coarse
    channels, and the inter-Gaussian head predicts each channel from the
    mean of the three 3D grids.
    """
    draw = _Draw(seed)
    q_geo = np.array([1 / 64] * 4 + [1 / 128] * 4)
    q_col0 = np.array(([1 / 64] + [1 / 128] * 15) * 3)
    streams = DEFAULT_STREAMS
    emb = 6 * 8
    n_grids = 3 + 9
    tensors: dict = {}
    specs: dict = {}

    def put(name, ws, bs, acts):
        widths = [ws[0].shape[1]] + [x.shape[0] for x in ws]
        specs[name] = LayerSpec(tuple(widths), tuple(acts))
        for i, (wt, bt) in enumerate(zip(ws, bs)):
            tensors[f"{name}/{i}/weight"] = wt
            tensors[f"{name}/{i}/bias"] = bt

    # MEM router: m = 1 exactly when opacity < t0, a midpoint between
    # opacity quantisation levels so decoded scenes route identically.
    t0 = (-96 + 0.5) * q_geo[0]
    ws, bs, acts = _random_net(draw, [N_GAU, 128, 128, 1], ["relu", "relu", "identity"])
    ws[0][0, :], ws[0][1, :] = 0.0, 0.0
    ws[0][0, 0], bs[0][0] = -1.0, t0
    ws[0][1, 0], bs[0][1] = 1.0, -t0
    _identity_rows(ws[1], bs[1], [0, 1])
    ws[2][0, :] = 0.0
    ws[2][0, 0], ws[2][0, 1] = _ROUTER_GAIN, -_ROUTER_GAIN
    bs[2][0] = math.log(0.01 / 0.99)
    put("mem/mlp_m", ws, bs, acts)

    # per-stream design constants
    dc = np.arange(48) % 16 == 0
    col_spread = np.where(dc, 0.5, 0.015)
    col1_spread = np.full(256, 0.05)
    col1_spread[:48] = np.where(dc, 4.0, 0.2)
    design = {
        # active channels, broad spread per channel (value units), s-source
        # sigma, hyperprior channels, hyperprior step
        "GEO": (list(range(8)), np.array([1.0, 0.5, 0.5, 0.5, 0.3, 0.3, 0.3, 0.3]), 0.75 * q_geo, [0, 1, 2, 3], 0.5),
        "COL0": (list(range(48)), col_spread, 0.75 * q_col0, [0, 16, 32], 0.25),
        "COL1": (list(range(48)), col1_spread, np.full(256, 0.6), [0, 16, 32], 2.0),
    }
    for s in streams:
        H = _HIDDEN[s.kind]
        D = s.y_dim
        active, spread, sig_s, zch, zstep = design[s.kind]
        qvec = {"GEO": q_geo, "COL0": q_col0}.get(s.kind, np.ones(s.y_dim))
        dead = np.ones(D, dtype=bool)
        dead[active] = False
        broad = np.where(dead, 0.05, spread)
        if s.kind == "COL1":
            sig_s = np.where(dead, 0.05, sig_s)

        if s.uses_transform:
            a = 8.0
            ws, bs, acts = _random_net(draw, [s.x_dim, H, H, H, D], ["relu"] * 3 + ["identity"], 1.0)
            pairs = list(range(2 * s.x_dim))
            _pass_pairs(ws[0], bs[0], pairs, range(s.x_dim), a)
            _identity_rows(ws[1], bs[1], pairs)
            _identity_rows(ws[2], bs[2], pairs)
            ws[3][:, :] = 0.0
            bs[3][:] = 0.0
            for j in range(s.x_dim):
                ws[3][j, 2 * j], ws[3][j, 2 * j + 1] = 1.0, -1.0
            put(s.net("g_a"), ws, bs, acts)

            ws, bs, acts = _random_net(draw, [D, H, H, H, s.x_dim], ["relu"] * 3 + ["identity"], 1.0)
            _pass_pairs(ws[0], bs[0], pairs, range(s.x_dim), 1.0 / a)
            _identity_rows(ws[1], bs[1], pairs)
            _identity_rows(ws[2], bs[2], pairs)
            ws[3][:, :] = 0.0
            bs[3][:] = 0.0
            for j in range(s.x_dim):
                ws[3][j, 2 * j], ws[3][j, 2 * j + 1] = 1.0, -1.0
            put(s.net("g_s"), ws, bs, acts)

        # hyper analysis: z_k = y[zch[k]] / zstep, other z channels are 0
        ws, bs, acts = _random_net(draw, [D, H, H, s.z_dim], ["relu", "relu", "identity"], 1.0)
        pairs = list(range(2 * len(zch)))
        _pass_pairs(ws[0], bs[0], pairs, zch, 1.0 / zstep)
        _identity_rows(ws[1], bs[1], pairs)
        ws[2][:, :] = 0.0
        bs[2][:] = 0.0
        for k, c in enumerate(zch):
            ws[2][k, 2 * k], ws[2][k, 2 * k + 1] = 1.0, -1.0
            # puts z rounding edges on q-cell edges, so re-encoding a
            # decoded scene reproduces the same z-hat
            bs[2][k] = qvec[c] / (2.0 * zstep)
        put(s.net("h_a"), ws, bs, acts)

        # hyper synthesis: mu[zch[k]] = zhat_k * zstep, broad elsewhere
        ws, bs, acts = _random_net(draw, [s.z_dim, H, H, 3 * D], ["relu", "relu", "identity"])
        _pass_pairs(ws[0], bs[0], pairs, range(len(zch)), 1.0)
        _identity_rows(ws[1], bs[1], pairs)
        sig_h = broad.copy()
        for k, c in enumerate(zch):
            ws[2][c, :] = 0.0
            ws[2][c, 2 * k], ws[2][c, 2 * k + 1] = zstep, -zstep
            sig_h[c] = 0.6 * zstep
        bs[2][:D] = 0.0
        bs[2][D : 2 * D] = np.log(sig_h)
        bs[2][2 * D :] = 0.0
        put(s.net("h_s"), ws, bs, acts)

        # inter-Gaussian head: mu = mean of the 3D-grid features, plus an
        # empty-context detector that hands the mixture to the other sources
        width_in = n_grids * D + emb
        ws, bs, acts = _random_net(draw, [width_in, H, H, 3 * D], ["relu", "relu", "identity"])
        det = [c for c in active[:2]]
        n_pass = len(active)
        for r, c in enumerate(active):
            ws[0][r, :] = 0.0
            for g in range(3):
                ws[0][r, g * D + c] = 1.0 / 3.0
            bs[0][r] = _PASS_OFFSET
        det_rows = list(range(n_pass, n_pass + 2 * len(det)))
        has_det = det_rows and det_rows[-1] + 1 < H
        if has_det:
            _pass_pairs(ws[0], bs[0], det_rows, det, 1000.0)
        _identity_rows(ws[1], bs[1], list(range(n_pass)))
        e_row = n_pass
        if has_det:
            ws[1][e_row, :] = 0.0
            ws[1][e_row, det_rows] = -1.0
            bs[1][e_row] = 1.0
        for r, c in enumerate(active):
            ws[2][c, :] = 0.0
            ws[2][c, r] = 1.0
            bs[2][c] = -_PASS_OFFSET
        bs[2][D : 2 * D] = np.log(sig_s)
        bs[2][2 * D :] = 2.0
        if has_det:
            ws[2][2 * D :, :] = 0.0
            ws[2][2 * D :, e_row] = -8.0
        put(s.net("mlp_s"), ws, bs, acts)

        if "c" in s.gmm_sources:
            cw = s.chunk_width
            ws, bs, acts = _random_net(draw, [D + s.n_chunks, H, H, 3 * cw], ["relu", "relu", "identity"])
            put(s.net("mlp_c"), ws, bs, acts)
            # per-chunk channel sigma differs, so the bias holds the chunk-0
            # value and chunk k shifts it through the one-hot input weights.
            w_last, b_last = ws[2], bs[2]
            b_last[:cw] = 0.0
            b_last[cw : 2 * cw] = np.log(broad[:cw])
            b_last[2 * cw :] = -1.0
            # one-hot inputs live at D..D+n_chunks-1; route them through
            # dedicated hidden units 0..n_chunks-1 (pass-through, layer 2 identity)
            w0, b0 = ws[0], bs[0]
            for k in range(s.n_chunks):
                w0[k, :] = 0.0
                w0[k, D + k] = 1.0
                b0[k] = 0.0
            _identity_rows(ws[1], bs[1], list(range(s.n_chunks)))
            for k in range(s.n_chunks):
                w_last[:, k] = 0.0
                w_last[cw : 2 * cw, k] = np.log(broad[k * cw : (k + 1) * cw]) - np.log(broad[:cw])
            chunk0 = np.stack([np.zeros(cw), np.log(broad[:cw]), np.full(cw, -1.0)])
            tensors[f"{s.kind}/chunk0"] = chunk0

        zscale = np.zeros(s.z_dim)
        zscale[: len(zch)] = 2.0
        tensors[f"{s.kind}/factorized_cdf"] = np.stack(
            [_laplace_table(sc, 255) for sc in zscale]
        ).astype(np.float64)

    # on-disk precision is float32; keep the in-memory copy identical
    tensors = {k: v.astype(np.float32).astype(np.float64) for k, v in tensors.items()}
    w = ModelWeights(tensors=tensors, layer_specs=specs, streams=streams, q_geo=q_geo, q_col0=q_col0)
    validate(w)
    return w

"""Acceptance criteria 1-8.

Each test carries ``@pytest.mark.criterion(n, title)``; conftest prints one
PASS/FAIL line per criterion at the end of the run.  Criteria 2 and 6 share a
single 1.2M-Gaussian encode (two chunks at the default chunk size).
"""

from __future__ import annotations

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from _util import brute_interp, brute_voxel, reference_order, trace_digests
from fcgs import pipeline
from fcgs.coder import FRAME, decode_symbols, encode_symbols, ideal_bits, quantize_pmf
from fcgs.container import DEFAULT_CHUNK, read_container
from fcgs.context import DEFAULT_RATIOS, build_grids, grid_specs, split_batches
from fcgs.entropy_model import MixedDistribution, mix_probability, softmax
from fcgs.model_io import GaussianCloud
from fcgs.neural import DEFAULT_STREAMS, load_weights
from fcgs.report import GPCC_REFERENCE_BITS
from fcgs.synthetic import noise_scene, smooth_scene

BIG_N = 1_200_000
TIMES: dict = {}


def note(capsys, msg):
    with capsys.disabled():
        print(f"\n    {msg}", end="")


class DigestTrace(list):
    """Trace sink that keeps only digests (and the tiny mask vectors)."""

    def __init__(self):
        super().__init__()
        self.masks = []

    def append(self, t):
        self.masks.append(t.masks.copy())
        super().append(trace_digests([t])[0])

    def extend(self, ts):
        for t in ts:
            self.append(t)


# ------------------------------------------------------------ criterion 1

CLASSES = ("skewed", "uniform", "floor")


def _tables(rng, kind):
    out = []
    for _ in range(int(rng.integers(1, 5))):
        width = int(np.exp(rng.uniform(np.log(2), np.log(4096))))
        if kind == "skewed":
            p = rng.dirichlet(np.full(width, 0.05))
        elif kind == "uniform":
            p = np.full(width, 1.0 / width)
        else:
            p = np.zeros(width)
            p[int(rng.integers(width))] = 1.0  # every other bin sits on the floor
        out.append(quantize_pmf(p, lo=int(rng.integers(-2000, 2000))))
    return out


def _symbols(rng, kind, tables, n):
    index = rng.integers(0, len(tables), size=n)
    sym = np.empty(n, dtype=np.int64)
    for t, tab in enumerate(tables):
        m = index == t
        k = int(m.sum())
        if kind == "floor":
            sym[m] = tab.lo + rng.integers(0, len(tab.freqs), size=k)
        else:
            sym[m] = tab.lo + np.searchsorted(tab.cdf / 65536, rng.random(k), side="right") - 1
    return sym, index


@pytest.mark.criterion(1, "lossless codec core, 200 fuzzed cases per class")
def test_c1_lossless_codec_core(capsys):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for kind in CLASSES:
        for case in range(200):
            n = (0, 10**6)[case] if case < 2 else int(10 ** rng.uniform(0, 6))
            tables = _tables(rng, kind)
            sym, index = _symbols(rng, kind, tables, n)
            data = encode_symbols(sym, tables, index)
            np.testing.assert_array_equal(decode_symbols(data, tables, n, index), sym)
            bound = ideal_bits(sym, tables, index) + 32
            assert 8 * (len(data) - FRAME) <= bound, (kind, case, n)
            worst = max(worst, 8 * (len(data) - FRAME) - (bound - 32))
    elapsed = time.perf_counter() - t0
    note(capsys, f"600 cases in {elapsed:.1f} s; worst overhead {worst:.1f} bits over the ideal length")
    assert elapsed < 120


# ------------------------------------------------------------ criterion 2


def _check_round_trip(cloud, weights, seed=0):
    """Encode, decode and re-encode ``cloud``; returns the encoded bytes."""
    enc_trace, dec_trace = DigestTrace(), DigestTrace()
    data = pipeline.encode_scene(cloud, weights, seed=seed, trace=enc_trace)
    back = pipeline.decode_scene(data, weights, trace=dec_trace)
    assert list(enc_trace) == list(dec_trace)  # masks, z-hat, y-hat bitwise
    order, deq = reference_order(cloud)
    np.testing.assert_array_equal(back.positions, deq)
    del deq
    masks = np.concatenate(dec_trace.masks)
    tol_geo = weights.q_geo / 2 * (1 + 1e-12)
    tol_col = weights.q_col0 / 2 * (1 + 1e-12)
    for a in range(0, cloud.count, 1 << 17):
        rows = order[a : a + (1 << 17)]
        m0 = ~masks[a : a + (1 << 17)]
        assert np.all(np.abs(back.f_geo[a : a + len(rows)] - cloud.f_geo[rows]) <= tol_geo)
        assert np.all(np.abs(back.f_col[a : a + len(rows)][m0] - cloud.f_col[rows][m0]) <= tol_col)
    assert pipeline.encode_scene(back, weights, seed=seed) == data
    return data


@pytest.mark.criterion(2, "end-to-end round trip, N in {1, 100, 50K, 1.2M}, < 10 min")
@pytest.mark.parametrize("n", [1, 100, 50_000])
def test_c2_round_trip_small(weights, n):
    t0 = time.perf_counter()
    _check_round_trip(smooth_scene(n, seed=n), weights, seed=n % 7)
    TIMES["c2"] = TIMES.get("c2", 0.0) + time.perf_counter() - t0


@pytest.fixture(scope="module")
def big(weights):
    scene = smooth_scene(BIG_N, seed=11)
    t0 = time.perf_counter()
    data = _check_round_trip(scene, weights)
    return scene, data, time.perf_counter() - t0


@pytest.mark.slow
@pytest.mark.criterion(2, "end-to-end round trip, N in {1, 100, 50K, 1.2M}, < 10 min")
def test_c2_round_trip_big(big, capsys):
    scene, data, elapsed = big
    header, _ = read_container(data)
    assert len(header.chunks) == 2 and header.chunks[0][0] == DEFAULT_CHUNK
    total = TIMES.get("c2", 0.0) + elapsed
    note(capsys, f"1.2M encode+decode+re-encode {elapsed:.0f} s; all sizes {total:.0f} s; {len(data)} bytes")
    assert total < 600


# ------------------------------------------------------------ criterion 3


@pytest.mark.criterion(3, "grid oracles and causality")
def test_c3_grids_match_brute_force():
    rng = np.random.default_rng(3)
    pos = rng.random((500, 3))
    vals = rng.normal(size=(500, 6))
    include = rng.random(500) < 0.6
    grids = build_grids(pos, vals, include, resolutions=((8,), (8,)))
    assert [s.res for s in grids.specs] == [8] * 4
    scale = np.abs(vals).max()
    for g, spec in enumerate(grids.specs):
        feats = grids.voxel_features(g).reshape(-1, vals.shape[1])
        for key in range(spec.n_voxels):
            voxel = np.unravel_index(key, (spec.res,) * len(spec.axes))
            want = brute_voxel(pos[include], vals[include], spec, voxel)
            np.testing.assert_allclose(feats[key], want, rtol=1e-10, atol=1e-10 * scale)
        got = grids.interpolate_grid(g, pos)
        for i in range(len(pos)):
            want = brute_interp(pos[include], vals[include], spec, pos[i])
            np.testing.assert_allclose(got[i], want, rtol=1e-10, atol=1e-10 * scale)


def _sections(data):
    header, payloads = read_container(data)
    return {s.label: p for s, p in zip(header.sections, payloads)}


def _with_col(cloud, col):
    return GaussianCloud(cloud.positions, cloud.f_geo, col)


@pytest.mark.criterion(3, "grid oracles and causality")
def test_c3_future_batches_leave_earlier_bits(weights):
    scene = smooth_scene(6000, seed=33)
    seed = 4
    base = _sections(pipeline.encode_scene(scene, weights, seed=seed))
    order, _ = reference_order(scene)
    ba = split_batches(scene.count, seed)
    for b in (1, 2, 3):
        col = scene.f_col.copy()
        col[order[ba.members(b)], 5] += 0.25  # not read by the hyperprior
        changed = _sections(pipeline.encode_scene(_with_col(scene, col), weights, seed=seed))
        earlier = [k for k in base if "/batch" in k and int(k.split("/batch")[1][0]) < b]
        assert earlier and all(base[k] == changed[k] for k in earlier)
        assert all(base[k] == changed[k] for k in base if "/zhat/" in k or k.endswith(("positions", "masks")))


@pytest.mark.criterion(3, "grid oracles and causality")
def test_c3_later_chunks_leave_earlier_bits(weights):
    scene = smooth_scene(6000, seed=34)
    from fcgs.neural import compute_masks

    m0 = ~compute_masks(weights, scene.f_gau)[0]
    order, _ = reference_order(scene)
    last = np.zeros(scene.count, bool)
    last[order[split_batches(scene.count, 0).members(3)]] = True
    base = _sections(pipeline.encode_scene(scene, weights))
    col = scene.f_col.copy()
    col[m0 & last, 40] += 0.25  # channel chunk 2 of the direct colour stream, last batch
    changed = _sections(pipeline.encode_scene(_with_col(scene, col), weights))
    for k in (0, 1):
        assert base[f"chunk0/latent/batch3/COL0/part{k}"] == changed[f"chunk0/latent/batch3/COL0/part{k}"]
    assert base["chunk0/latent/batch3/COL0/part2"] != changed["chunk0/latent/batch3/COL0/part2"]
    assert all(base[k] == changed[k] for k in base if "batch3" not in k)
    # spatial chunks: later Gaussians never reach an earlier chunk
    col = scene.f_col.copy()
    col[order[3000:]] += 0.1
    a = _sections(pipeline.encode_scene(scene, weights, chunk_size=3000))
    b = _sections(pipeline.encode_scene(_with_col(scene, col), weights, chunk_size=3000))
    assert all(a[k] == b[k] for k in a if k.startswith("chunk0/"))


# ------------------------------------------------------------ criterion 4


@pytest.mark.criterion(4, "mixture PMF sums to 1, softmax shift invariance, source counts")
def test_c4_mixture_sums_to_one():
    rng = np.random.default_rng(4)
    bound = 32767
    sym = np.arange(-bound, bound + 1)[None, :]
    worst = 0.0
    for _ in range(1000):
        L = int(rng.integers(2, 4))
        q = float(np.exp(rng.uniform(np.log(1e-3), np.log(1.0))))
        # means and scales in symbol units well inside the clamp window
        mu = rng.uniform(-5000, 5000, size=(L, 1)) * q
        sigma = np.exp(rng.uniform(np.log(1e-3), np.log(2000.0), size=(L, 1))) * q
        pi = rng.normal(scale=4, size=(L, 1))
        p = mix_probability(mu, sigma, pi, sym, q)
        worst = max(worst, abs(math.fsum(p) - 1))
    assert worst <= 1e-6


@pytest.mark.criterion(4, "mixture PMF sums to 1, softmax shift invariance, source counts")
def test_c4_softmax_shift_invariance():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        logits = rng.normal(scale=10, size=(int(rng.integers(2, 4)), 7))
        c = rng.uniform(-500, 500)
        a, b = softmax(logits), softmax(logits + c)
        assert np.abs(a - b).max() <= 1e-12
        assert np.abs(a.sum(axis=0) - 1).max() <= 1e-12


@pytest.mark.criterion(4, "mixture PMF sums to 1, softmax shift invariance, source counts")
def test_c4_source_counts(weights, monkeypatch):
    seen = set()
    orig = MixedDistribution.from_params.__func__

    def spy(cls, params):
        d = orig(cls, params)
        seen.add((d.mu.shape[-1], d.sources))
        return d

    monkeypatch.setattr(MixedDistribution, "from_params", classmethod(spy))
    pipeline.encode_scene(smooth_scene(800, seed=6), weights)
    # GEO chunks are 8 wide, COL0 16, COL1 64
    assert seen == {(8, ("h", "s")), (16, ("h", "s", "c")), (64, ("h", "s", "c"))}
    assert [len(s.gmm_sources) for s in DEFAULT_STREAMS] == [2, 3, 3]


# ------------------------------------------------------------ criterion 5


@pytest.mark.criterion(5, "rate estimate within 2% + 64 B on >= 50K Gaussians")
@pytest.mark.parametrize("make", [smooth_scene, noise_scene], ids=["smooth", "noise"])
def test_c5_rate_estimate(weights, make, capsys):
    scene = make(50_000, seed=50)
    data = pipeline.encode_scene(scene, weights)
    act = pipeline.inspect(data)
    est = pipeline.estimate(scene, weights)
    assert act.total == len(data)
    assert abs(est.total - act.total) <= 0.02 * act.total + 64
    for k in ("geo", "col_m0", "col_m1", "positions", "header"):
        assert abs(est.sizes[k] - act.sizes[k]) <= 0.02 * act.sizes[k] + 64, k
    note(capsys, f"{make.__name__}: actual {act.total:.0f} B, estimate {est.total:.0f} B "
         f"({(est.total - act.total) / act.total:+.3%}); masks {act.sizes['masks']:.0f} vs "
         f"{est.sizes['masks']:.0f} B")


# ------------------------------------------------------------ criterion 6


@pytest.mark.slow
@pytest.mark.criterion(6, "1 vs 8 workers byte-identical at 1.2M")
def test_c6_workers_are_deterministic(big, weights):
    scene, data, _ = big
    assert pipeline.encode_scene(scene, weights, workers=8) == data


# ------------------------------------------------------------ criterion 7


@pytest.mark.criterion(7, "structural constants of the default profile")
def test_c7_default_profile(weights):
    w = load_weights(weights.to_bytes())
    assert w.profile == "default"
    dims = {s.kind: (s.x_dim, s.y_dim, s.z_dim, s.n_chunks) for s in w.streams}
    assert dims == {"GEO": (8, 8, 16, 1), "COL0": (48, 48, 24, 3), "COL1": (48, 256, 64, 4)}
    assert w.grid_res_3d == (70, 80, 90) and w.grid_res_2d == (300, 400, 500)
    assert [s.name for s in grid_specs(w.grid_res_3d, w.grid_res_2d)][:4] == ["3d70", "3d80", "3d90", "xy300"]
    assert w.n_grids == 12
    ratios = (Fraction(1, 6), Fraction(1, 6), Fraction(1, 3), Fraction(1, 3))
    assert tuple(w.batch_ratios) == ratios and tuple(DEFAULT_RATIOS) == ratios
    assert w.eps_m == 0.01
    layers = {k: len(v.widths) - 1 for k, v in w.layer_specs.items()}
    assert layers["COL1/g_a"] == layers["COL1/g_s"] == 4
    for s in ("GEO", "COL0", "COL1"):
        assert layers[f"{s}/h_a"] == layers[f"{s}/h_s"] == 3
    assert w.layer_specs["COL1/g_a"].widths[-1] == 256


# ------------------------------------------------------------ criterion 8


@pytest.mark.criterion(8, "smooth scene under 10% of the raw float32 payload")
def test_c8_compression_sanity(weights, capsys):
    n = 200_000
    scene = smooth_scene(n, seed=8)
    data = pipeline.encode_scene(scene, weights)
    rep = pipeline.inspect(data)
    raw_attr = 56 * 4 * n  # f_geo + f_col as float32
    raw_all = 59 * 4 * n  # including positions
    pos_bits = 8 * rep.sizes["positions"] / n
    note(capsys, f"{len(data)} B = {len(data) / raw_attr:.2%} of attributes, {len(data) / raw_all:.2%} of all "
         f"float32; positions {pos_bits:.2f} bits/point ({pos_bits / 3:.2f} bits/coordinate), "
         f"reference {GPCC_REFERENCE_BITS} bits/parameter")
    assert len(data) < 0.10 * raw_attr

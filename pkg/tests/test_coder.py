import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcgs.coder import (
    FRAME,
    MASK_HEADER,
    QuantizedCdf,
    SectionDecoder,
    SectionEncoder,
    decode_mask_bits,
    decode_symbols,
    encode_mask_bits,
    encode_symbols,
    ideal_bits,
    quantize_pmf,
    unframe,
)
from fcgs.entropy_model import entropy_bits
from fcgs.errors import CoderError, CorruptionError, FcgsError, TruncationError

# ------------------------------------------------------------ quantize_pmf


def test_even_split():
    np.testing.assert_array_equal(quantize_pmf([0.5, 0.5]).freqs, [32768, 32768])


def test_floor_applied():
    np.testing.assert_array_equal(quantize_pmf([1.0, 0.0]).freqs, [65535, 1])


def test_rounding_oracle(rng):
    for _ in range(20):
        p = rng.dirichlet(np.full(1024, 0.5))
        f = quantize_pmf(p).freqs
        assert int(f.sum()) == 65536 and f.min() >= 1
        ideal = p * 65536
        floored = int(np.count_nonzero(ideal < 1))
        # largest remainder moves each bin by < 1; lifting tiny bins to 1
        # costs at most one unit per lifted bin elsewhere
        assert np.abs(f - ideal).max() <= 1 + floored


def test_window_too_long():
    with pytest.raises(ValueError):
        quantize_pmf(np.full(65537, 1 / 65537))


def test_cdf_validation():
    with pytest.raises(ValueError):
        QuantizedCdf(0, np.array([0, 10, 65535]))
    with pytest.raises(ValueError):
        QuantizedCdf(0, np.array([0, 70000, 65536]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=300))
def test_quantize_pmf_properties(w):
    p = np.array(w)
    if p.sum() > 0:
        p = p / p.sum()
    q = quantize_pmf(p)
    assert q.cdf[0] == 0 and q.cdf[-1] == 65536
    assert np.all(q.freqs >= 1)


# -------------------------------------------------------------- symbols


def test_empty_stream_is_bare_frame():
    data = encode_symbols(np.zeros(0, dtype=int), quantize_pmf([0.5, 0.5]))
    assert data == bytes(8)
    assert decode_symbols(data, quantize_pmf([0.5, 0.5]), 0).size == 0


def test_million_uniform_bytes(rng):
    s = rng.integers(0, 256, size=10**6)
    c = quantize_pmf(np.full(256, 1 / 256))
    data = encode_symbols(s, c)
    assert abs(len(data) - 10**6) <= 0.01 * 10**6
    np.testing.assert_array_equal(decode_symbols(data, c, s.size), s)


def _random_case(rng, n, k_tables, width, skew):
    tables = []
    for _ in range(k_tables):
        p = rng.dirichlet(np.full(width, skew))
        tables.append(quantize_pmf(p, lo=int(rng.integers(-50, 50))))
    index = rng.integers(0, k_tables, size=n)
    u = rng.random(n)
    sym = np.empty(n, dtype=np.int64)
    for t in range(k_tables):
        m = index == t
        c = tables[t].cdf / 65536
        sym[m] = tables[t].lo + np.searchsorted(c, u[m], side="right") - 1
    return sym, tables, index


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2000), st.integers(1, 5), st.integers(1, 300), st.sampled_from([0.01, 0.3, 1.0, 50.0]),
       st.integers(0, 2**32 - 1))
def test_round_trip_fuzz(n, k, width, skew, seed):
    rng = np.random.default_rng(seed)
    sym, tables, index = _random_case(rng, n, k, width, skew)
    data = encode_symbols(sym, tables, index)
    np.testing.assert_array_equal(decode_symbols(data, tables, n, index), sym)
    assert len(data) <= FRAME + math.ceil((ideal_bits(sym, tables, index) + 32) / 8)


def test_floor_bins_round_trip(rng):
    # every symbol drawn from the floor-probability bins
    p = np.zeros(200)
    p[0] = 1.0
    c = quantize_pmf(p)
    sym = rng.integers(1, 200, size=5000)
    data = encode_symbols(sym, c)
    np.testing.assert_array_equal(decode_symbols(data, c, sym.size), sym)
    assert len(data) <= FRAME + math.ceil((ideal_bits(sym, c) + 32) / 8)


def test_symbol_outside_window(rng):
    with pytest.raises((CoderError, ValueError)):
        encode_symbols(np.array([5]), quantize_pmf([0.5, 0.5]))


def test_trailing_garbage_rejected():
    c = quantize_pmf([0.25] * 4)
    data = encode_symbols(np.array([1, 2, 3]), c)
    with pytest.raises(CorruptionError):
        decode_symbols(data + b"\x00", c, 3)


def test_truncated_frame():
    with pytest.raises(TruncationError):
        unframe(b"\x05\x00\x00")
    with pytest.raises(TruncationError):
        unframe(b"\x09" + bytes(7) + b"abc")


def test_single_byte_flips_never_crash(rng):
    sym, c, index = _random_case(rng, 2000, 3, 40, 0.5)
    data = encode_symbols(sym, c, index)
    assert 900 <= len(data) <= 1300
    outcomes = {"error": 0, "wrong": 0, "same": 0}
    for i in range(len(data)):
        bad = bytearray(data)
        bad[i] ^= 1 << int(rng.integers(0, 8))
        try:
            out = decode_symbols(bytes(bad), c, sym.size, index)
        except FcgsError:
            outcomes["error"] += 1
            continue
        outcomes["same" if np.array_equal(out, sym) else "wrong"] += 1
    assert outcomes["error"] + outcomes["wrong"] > 0.95 * len(data)


# ------------------------------------------------------------------ GMM


def _gmm_case(rng, n, c, L, spread):
    mu = rng.normal(scale=spread, size=(L, n, c))
    sigma = np.exp(rng.uniform(-4, 2, size=(L, n, c)))
    logits = rng.normal(scale=2, size=(L, n, c))
    theta = np.exp(logits) / np.exp(logits).sum(axis=0)
    step = rng.uniform(0.05, 1.0, size=c)
    x = mu[0] + sigma[0] * rng.normal(size=(n, c))
    sym = np.clip(np.round(x / step), -32767, 32767).astype(np.int64)
    return sym, mu, sigma, theta, step


@pytest.mark.parametrize("L", [1, 2, 3])
def test_gmm_round_trip(rng, L):
    sym, mu, sigma, theta, step = _gmm_case(rng, 400, 6, L, 3.0)
    sym[::37, 0] = 30000  # far outside every window: escapes
    enc = SectionEncoder()
    enc.gmm(sym, mu, sigma, theta, step, 32767)
    assert enc.escapes >= len(sym[::37])
    body, _ = unframe(enc.finish())
    out = SectionDecoder(body).gmm(sym.shape, mu, sigma, theta, step, 32767)
    np.testing.assert_array_equal(out, sym)


def test_gmm_streaming_is_block_invariant(rng):
    sym, mu, sigma, theta, step = _gmm_case(rng, 300, 4, 3, 1.0)
    whole = SectionEncoder()
    whole.gmm(sym, mu, sigma, theta, step, 32767)
    parts = SectionEncoder()
    for a in range(0, 300, 41):
        b = min(a + 41, 300)
        parts.gmm(sym[a:b], mu[:, a:b], sigma[:, a:b], theta[:, a:b], step, 32767)
    assert whole.finish() == parts.finish()


def test_gmm_rejects_out_of_range_symbol(rng):
    sym, mu, sigma, theta, step = _gmm_case(rng, 3, 2, 2, 1.0)
    sym[0, 0] = 40000
    with pytest.raises(CoderError):
        SectionEncoder().gmm(sym, mu, sigma, theta, step, 32767)


# ------------------------------------------------------------------ masks


def test_all_ones_mask_is_nearly_free():
    data = encode_mask_bits(np.ones(1000, bool))
    assert len(data) - FRAME - MASK_HEADER <= 4
    assert decode_mask_bits(data, 1000).all()


def test_half_mask_entropy(rng):
    bits = rng.random(10**5) < 0.5
    data = encode_mask_bits(bits)
    assert abs(len(data) - FRAME - MASK_HEADER - 12500) <= 125
    np.testing.assert_array_equal(decode_mask_bits(data, bits.size), bits)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 5000), st.floats(0, 1), st.integers(0, 2**32 - 1))
def test_mask_round_trip_and_size(n, f, seed):
    bits = np.random.default_rng(seed).random(n) < f
    data = encode_mask_bits(bits)
    np.testing.assert_array_equal(decode_mask_bits(data, n), bits)
    h = entropy_bits(int(bits.sum()), n) / 8
    assert len(data) - FRAME <= 1.05 * h + 16


def test_mask_bad_frequency_rejected():
    data = bytearray(encode_mask_bits(np.array([True, False, True])))
    data[FRAME : FRAME + 2] = b"\x00\x00"
    with pytest.raises(CorruptionError):
        decode_mask_bits(bytes(data), 3)

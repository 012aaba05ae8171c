"""Integer range-coder kernels (numba).

State is a 64-bit ``low`` and a 64-bit ``range`` kept in ``[2**32, 2**64)``
after renormalisation; bytes leave the encoder 32 bits at a time, big-endian.
All frequency tables total ``2**16``.  A symbol whose interval ends at the
table total receives the truncation remainder of the range.  Carries are
propagated backwards through the output buffer.  See docs/bitstream.md.

Encoder state ``st``: uint64[2] = (low, range); ``pos``: int64[1] write index.
Decoder state ``st``: uint64[2] = (code - low, range); ``pos``: int64[2] =
(read index, 1 if the stream was found inconsistent else 0).
"""

import math

import numba as nb
import numpy as np

PREC = 16
TOTAL = 1 << PREC
TOP = np.uint64(1 << 32)
_U16 = np.uint64(PREC)
_U32 = np.uint64(32)
_FULL = np.uint64(0xFFFFFFFFFFFFFFFF)
_SQRT1_2 = 0.7071067811865476


def new_encoder():
    return np.array([0, 0xFFFFFFFFFFFFFFFF], dtype=np.uint64), np.zeros(1, dtype=np.int64)


def new_decoder(body: np.ndarray):
    st = np.zeros(2, dtype=np.uint64)
    pos = np.zeros(2, dtype=np.int64)
    _dec_init(st, pos, body)
    return st, pos


@nb.njit(inline="always")
def _carry(buf, pos):
    i = pos[0] - 1
    while buf[i] == 255:
        buf[i] = 0
        i -= 1
    buf[i] += 1


@nb.njit(inline="always")
def _enc_put(st, buf, pos, start, freq):
    low = st[0]
    rng = st[1]
    r = rng >> _U16
    t = r * np.uint64(start)
    nlow = low + t
    if nlow < low:
        _carry(buf, pos)
    low = nlow
    if start + freq == TOTAL:
        rng = rng - t
    else:
        rng = r * np.uint64(freq)
    while rng < TOP:
        w = low >> _U32
        p = pos[0]
        buf[p] = np.uint8((w >> np.uint64(24)) & np.uint64(255))
        buf[p + 1] = np.uint8((w >> np.uint64(16)) & np.uint64(255))
        buf[p + 2] = np.uint8((w >> np.uint64(8)) & np.uint64(255))
        buf[p + 3] = np.uint8(w & np.uint64(255))
        pos[0] = p + 4
        low = low << _U32
        rng = rng << _U32
    st[0] = low
    st[1] = rng


@nb.njit(inline="always")
def _read_word(body, pos):
    w = np.uint64(0)
    p = pos[0]
    n = body.size
    for k in range(4):
        w = w << np.uint64(8)
        if p + k < n:
            w |= np.uint64(body[p + k])
    pos[0] = p + 4
    return w


@nb.njit(cache=True)
def _dec_init(st, pos, body):
    hi = _read_word(body, pos)
    lo = _read_word(body, pos)
    st[0] = (hi << _U32) | lo
    st[1] = _FULL


@nb.njit(inline="always")
def _dec_target(st):
    r = st[1] >> _U16
    v = st[0] // r
    if v > np.uint64(TOTAL - 1):
        v = np.uint64(TOTAL - 1)
    return np.int64(v)


@nb.njit(inline="always")
def _dec_consume(st, pos, body, start, freq):
    d = st[0]
    rng = st[1]
    r = rng >> _U16
    t = r * np.uint64(start)
    if freq <= 0 or d < t:
        pos[1] = 1
        return
    d = d - t
    if start + freq == TOTAL:
        rng = rng - t
    else:
        rng = r * np.uint64(freq)
    if d >= rng:
        pos[1] = 1
        return
    while rng < TOP:
        d = (d << _U32) | _read_word(body, pos)
        rng = rng << _U32
    st[0] = d
    st[1] = rng


# ---------------------------------------------------------------- tables ---


@nb.njit(cache=True, nogil=True)
def enc_table(st, buf, pos, symbols, table_idx, cdfs, lows, sizes):
    """Code ``symbols[i]`` with table ``table_idx[i]``.

    ``cdfs[t, :sizes[t] + 1]`` is the cumulative table over symbols
    ``lows[t] .. lows[t] + sizes[t] - 1``.  Returns the index of the first
    symbol that fell outside its window or had zero frequency, else -1.
    """
    for i in range(symbols.size):
        t = table_idx[i]
        k = symbols[i] - lows[t]
        if k < 0 or k >= sizes[t]:
            return i
        a = cdfs[t, k]
        b = cdfs[t, k + 1]
        if b <= a:
            return i
        _enc_put(st, buf, pos, a, b - a)
    return -1


@nb.njit(cache=True, nogil=True)
def dec_table(st, pos, body, out, table_idx, cdfs, lows, sizes):
    for i in range(out.size):
        t = table_idx[i]
        target = _dec_target(st)
        lo = 0
        hi = sizes[t]
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if cdfs[t, mid] <= target:
                lo = mid
            else:
                hi = mid
        a = cdfs[t, lo]
        _dec_consume(st, pos, body, a, cdfs[t, lo + 1] - a)
        if pos[1] != 0:
            return i
        out[i] = lo + lows[t]
    return -1


@nb.njit(cache=True, nogil=True)
def enc_bernoulli(st, buf, pos, bits, freq_one):
    f0 = TOTAL - freq_one
    for i in range(bits.size):
        if bits[i]:
            _enc_put(st, buf, pos, f0, freq_one)
        else:
            _enc_put(st, buf, pos, 0, f0)


@nb.njit(cache=True, nogil=True)
def dec_bernoulli(st, pos, body, out, freq_one):
    f0 = TOTAL - freq_one
    for i in range(out.size):
        if _dec_target(st) >= f0:
            _dec_consume(st, pos, body, f0, freq_one)
            out[i] = True
        else:
            _dec_consume(st, pos, body, 0, f0)
            out[i] = False
        if pos[1] != 0:
            return i
    return -1


# ------------------------------------------------------------------ GMM ---


@nb.njit(inline="always")
def _mix_cdf(x, mu, sigma, theta, ns, i, j):
    acc = 0.0
    for l in range(ns):
        acc += theta[l, i, j] * 0.5 * math.erfc(-(x - mu[l, i, j]) / sigma[l, i, j] * _SQRT1_2)
    return acc


@nb.njit(inline="always")
def _window(mu, sigma, theta, ns, i, j, q, bound):
    m = 0.0
    smax = 0.0
    for l in range(ns):
        m += theta[l, i, j] * mu[l, i, j]
        if sigma[l, i, j] > smax:
            smax = sigma[l, i, j]
    lo_f = math.floor((m - 16.0 * smax) / q)
    hi_f = math.ceil((m + 16.0 * smax) / q)
    lo_f = min(max(lo_f, -float(bound)), float(bound))
    hi_f = min(max(hi_f, -float(bound)), float(bound))
    return np.int64(lo_f), np.int64(hi_f)


@nb.njit(inline="always")
def _qcdf(k, w, lo, f_lo, mass, mu, sigma, theta, ns, i, j, q):
    """Quantised cumulative frequency of window bin ``k`` (0 <= k <= w)."""
    if k <= 0:
        return 0
    if k >= w:
        return TOTAL - 1
    spare = TOTAL - 1 - w
    if mass > 0.0:
        fn = (_mix_cdf((lo + k - 0.5) * q, mu, sigma, theta, ns, i, j) - f_lo) / mass
        if fn < 0.0:
            fn = 0.0
        elif fn > 1.0:
            fn = 1.0
    else:
        fn = k / w
    return np.int64(math.floor(fn * spare)) + k


@nb.njit(inline="always")
def _window_mass(lo, hi, mu, sigma, theta, ns, i, j, q):
    f_lo = _mix_cdf((lo - 0.5) * q, mu, sigma, theta, ns, i, j)
    f_hi = _mix_cdf((hi + 0.5) * q, mu, sigma, theta, ns, i, j)
    mass = f_hi - f_lo
    if not (mass > 1e-300):
        mass = 0.0
    return f_lo, mass


@nb.njit(cache=True, nogil=True)
def enc_gmm(st, buf, pos, symbols, mu, sigma, theta, step, bound):
    """Code ``symbols`` (n, c) under a per-element Gaussian mixture.

    mu/sigma/theta are (sources, n, c) in value units; ``step`` is (c,).
    Each element is coded inside a window of mu_mix +- 16 sigma_max with an
    escape bin of frequency 1; escaped symbols follow as 16 raw bits.
    Returns the number of escapes.
    """
    ns = mu.shape[0]
    n, c = symbols.shape
    escapes = 0
    for i in range(n):
        for j in range(c):
            q = step[j]
            s = symbols[i, j]
            lo, hi = _window(mu, sigma, theta, ns, i, j, q, bound)
            w = hi - lo + 1
            coded = False
            if s >= lo and s <= hi:
                f_lo, mass = _window_mass(lo, hi, mu, sigma, theta, ns, i, j, q)
                k = s - lo
                a = _qcdf(k, w, lo, f_lo, mass, mu, sigma, theta, ns, i, j, q)
                b = _qcdf(k + 1, w, lo, f_lo, mass, mu, sigma, theta, ns, i, j, q)
                if b > a:
                    _enc_put(st, buf, pos, a, b - a)
                    coded = True
            if not coded:
                escapes += 1
                _enc_put(st, buf, pos, TOTAL - 1, 1)
                _enc_put(st, buf, pos, s + bound, 1)
    return escapes


@nb.njit(cache=True, nogil=True)
def dec_gmm(st, pos, body, out, mu, sigma, theta, step, bound):
    """Inverse of enc_gmm; fills ``out`` (n, c).  Returns flat index of failure or -1."""
    ns = mu.shape[0]
    n, c = out.shape
    for i in range(n):
        for j in range(c):
            q = step[j]
            lo, hi = _window(mu, sigma, theta, ns, i, j, q, bound)
            w = hi - lo + 1
            target = _dec_target(st)
            if target >= TOTAL - 1:
                _dec_consume(st, pos, body, TOTAL - 1, 1)
                if pos[1] != 0:
                    return i * c + j
                raw = _dec_target(st)
                if raw > 2 * bound:
                    pos[1] = 1
                    return i * c + j
                _dec_consume(st, pos, body, raw, 1)
                out[i, j] = raw - bound
            else:
                f_lo, mass = _window_mass(lo, hi, mu, sigma, theta, ns, i, j, q)
                # gallop out from the bin of the mixture mean, then bisect; the
                # quantised cdf is strictly increasing so the bin is unique
                m = 0.0
                for l in range(ns):
                    m += theta[l, i, j] * mu[l, i, j]
                k0 = np.int64(math.floor(m / q + 0.5)) - lo
                k0 = min(max(k0, np.int64(0)), w - 1)
                a_lo = k0
                qa = _qcdf(a_lo, w, lo, f_lo, mass, mu, sigma, theta, ns, i, j, q)
                if qa <= target:
                    span = np.int64(1)
                    b_hi = a_lo + 1
                    qb = _qcdf(b_hi, w, lo, f_lo, mass, mu, sigma, theta, ns, i, j, q)
                    while qb <= target:
                        a_lo, qa = b_hi, qb
                        span *= 2
                        b_hi = min(a_lo + span, w)
                        qb = _qcdf(b_hi, w, lo, f_lo, mass, mu, sigma, theta, ns, i, j, q)
                else:
                    span = np.int64(1)
                    b_hi, qb = a_lo, qa
                    a_lo = b_hi - 1
                    qa = _qcdf(a_lo, w, lo, f_lo, mass, mu, sigma, theta, ns, i, j, q)
                    while qa > target:
                        b_hi, qb = a_lo, qa
                        span *= 2
                        a_lo = max(b_hi - span, np.int64(0))
                        qa = _qcdf(a_lo, w, lo, f_lo, mass, mu, sigma, theta, ns, i, j, q)
                while b_hi - a_lo > 1:
                    mid = (a_lo + b_hi) >> 1
                    qm = _qcdf(mid, w, lo, f_lo, mass, mu, sigma, theta, ns, i, j, q)
                    if qm <= target:
                        a_lo, qa = mid, qm
                    else:
                        b_hi, qb = mid, qm
                _dec_consume(st, pos, body, qa, qb - qa)
                out[i, j] = lo + a_lo
            if pos[1] != 0:
                return i * c + j
    return -1


@nb.njit(cache=True, nogil=True)
def gmm_bits(symbols, mu, sigma, theta, step, floor_p):
    """Sum of -log2 p over elements using the unwindowed mixture probability."""
    ns = mu.shape[0]
    n, c = symbols.shape
    total = 0.0
    for i in range(n):
        for j in range(c):
            q = step[j]
            y = symbols[i, j] * q
            p = _mix_cdf(y + 0.5 * q, mu, sigma, theta, ns, i, j) - _mix_cdf(
                y - 0.5 * q, mu, sigma, theta, ns, i, j
            )
            if p < floor_p:
                p = floor_p
            total -= math.log2(p)
    return total


@nb.njit(cache=True, nogil=True)
def gmm_coded_bits(symbols, mu, sigma, theta, step, bound):
    """Bits enc_gmm would spend before range-coder overhead: -log2 of the
    quantised window frequency, or 32 bits for an escape."""
    ns = mu.shape[0]
    n, c = symbols.shape
    total = 0.0
    for i in range(n):
        for j in range(c):
            q = step[j]
            s = symbols[i, j]
            lo, hi = _window(mu, sigma, theta, ns, i, j, q, bound)
            if s < lo or s > hi:
                total += 2.0 * PREC
                continue
            w = hi - lo + 1
            f_lo, mass = _window_mass(lo, hi, mu, sigma, theta, ns, i, j, q)
            k = s - lo
            a = _qcdf(k, w, lo, f_lo, mass, mu, sigma, theta, ns, i, j, q)
            b = _qcdf(k + 1, w, lo, f_lo, mass, mu, sigma, theta, ns, i, j, q)
            total += PREC - math.log2(b - a)
    return total


def finish(st, buf, pos) -> bytes:
    """Flush the encoder: shortest tail that pins a value inside [low, low+range)."""
    low = int(st[0])
    rng = int(st[1])
    n = int(pos[0])
    if n == 0 and low == 0:
        return b""
    for k in range(65):
        step = 1 << (64 - k)
        v = -(-low // step) * step
        if v < low + rng:
            break
    if v >= 1 << 64:
        v -= 1 << 64
        i = n - 1
        while buf[i] == 255:
            buf[i] = 0
            i -= 1
        buf[i] += 1
    tail = v.to_bytes(8, "big")[: (k + 7) // 8]
    return (bytes(buf[:n]) + tail).rstrip(b"\x00")

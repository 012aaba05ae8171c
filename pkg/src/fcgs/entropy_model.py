"""Mixture probabilities, the factorised hyperprior and bit estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from . import _rc
from .coder import TOTAL, QuantizedCdf
from .context import DistributionParams

_SQRT1_2 = 1.0 / math.sqrt(2.0)


def softmax(pi: np.ndarray, axis: int = 0) -> np.ndarray:
    e = np.exp(pi - pi.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def normal_cdf(x):
    return 0.5 * erfc(-np.asarray(x, dtype=np.float64) * _SQRT1_2)


@dataclass(frozen=True, eq=False)
class MixedDistribution:
    """Stacked per-source parameters, shape (sources, ...) each."""

    mu: np.ndarray
    sigma: np.ndarray
    theta: np.ndarray
    sources: tuple

    @classmethod
    def from_params(cls, params: list[DistributionParams]) -> "MixedDistribution":
        mu = np.stack([p.mu for p in params])
        sigma = np.stack([p.sigma for p in params])
        theta = softmax(np.stack([p.pi for p in params]), axis=0)
        return cls(mu, sigma, theta, tuple(p.source for p in params))

    def probability(self, symbols, step) -> np.ndarray:
        """Mixture interval mass at value = symbol * step, broadcast over elements."""
        y = np.asarray(symbols, dtype=np.float64) * step
        half = 0.5 * np.asarray(step, dtype=np.float64)
        hi = normal_cdf((y + half - self.mu) / self.sigma)
        lo = normal_cdf((y - half - self.mu) / self.sigma)
        return np.sum(self.theta * (hi - lo), axis=0)

    def bits(self, symbols, step, p_floor: float = 1.0 / TOTAL) -> float:
        """Fast path of -sum log2 p for (n, c) symbols; same math as probability()."""
        sym = np.ascontiguousarray(symbols, dtype=np.int64)
        return float(
            _rc.gmm_bits(
                sym,
                np.ascontiguousarray(self.mu),
                np.ascontiguousarray(self.sigma),
                np.ascontiguousarray(self.theta),
                np.ascontiguousarray(np.broadcast_to(step, sym.shape[1:]), dtype=np.float64),
                p_floor,
            )
        )

    def coded_bits(self, symbols, step, bound: int) -> float:
        """-sum log2 of the windowed, quantised frequencies the range coder
        uses for (n, c) symbols; escapes cost 32 bits."""
        sym = np.ascontiguousarray(symbols, dtype=np.int64)
        return float(
            _rc.gmm_coded_bits(
                sym,
                np.ascontiguousarray(self.mu),
                np.ascontiguousarray(self.sigma),
                np.ascontiguousarray(self.theta),
                np.ascontiguousarray(np.broadcast_to(step, sym.shape[1:]), dtype=np.float64),
                int(bound),
            )
        )


def mix_probability(mu, sigma, pi, symbol, step) -> np.ndarray:
    """p(symbol) = sum_l theta_l [Phi((y + q/2 - mu_l)/sigma_l) - Phi((y - q/2 - mu_l)/sigma_l)].

    mu, sigma, pi have the source axis first; theta = softmax(pi) over it.
    """
    mu, sigma, pi = (np.asarray(a, dtype=np.float64) for a in (mu, sigma, pi))
    return MixedDistribution(mu, sigma, softmax(pi, axis=0), ()).probability(symbol, step)


class FactorizedPrior:
    """Per-channel integer CDF tables over [-z_bound, z_bound]."""

    def __init__(self, cdf_rows: np.ndarray, z_bound: int):
        rows = np.asarray(cdf_rows, dtype=np.int64)
        if rows.shape[1] != 2 * z_bound + 2:
            raise ValueError("table width must be 2 * z_bound + 2")
        self.z_bound = int(z_bound)
        self.rows = rows
        self.cdfs = [QuantizedCdf(-self.z_bound, r) for r in rows]

    @property
    def channels(self) -> int:
        return len(self.rows)

    def probability(self, symbol, channel) -> np.ndarray:
        s = np.clip(np.asarray(symbol, dtype=np.int64), -self.z_bound, self.z_bound) + self.z_bound
        ch = np.asarray(channel, dtype=np.int64)
        return (self.rows[ch, s + 1] - self.rows[ch, s]) / TOTAL

    def bits(self, z_hat: np.ndarray) -> float:
        z_hat = np.asarray(z_hat, dtype=np.int64)
        if z_hat.size == 0:
            return 0.0
        ch = np.broadcast_to(np.arange(z_hat.shape[1]), z_hat.shape)
        return estimate_bits(self.probability(z_hat, ch).ravel())


def factorized_probability(prior: FactorizedPrior, symbol, channel):
    return prior.probability(symbol, channel)


def estimate_bits(probabilities) -> float:
    p = np.asarray(probabilities, dtype=np.float64)
    if p.size and (np.any(p <= 0) or np.any(p > 1)):
        raise ValueError("probabilities must lie in (0, 1]")
    return float(-np.log2(p).sum())


def entropy_bits(ones: int, n: int) -> float:
    """n * H(ones / n) in bits."""
    if n == 0 or ones in (0, n):
        return 0.0
    f = ones / n
    return -n * (f * math.log2(f) + (1 - f) * math.log2(1 - f))


def scene_rate_estimate(cloud, weights, masks=None, **kwargs):
    """Model-based rate of ``cloud`` without emitting a bitstream (see pipeline.estimate)."""
    from .pipeline import estimate

    return estimate(cloud, weights, masks=masks, **kwargs)

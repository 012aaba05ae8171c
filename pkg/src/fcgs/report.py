"""Per-component size reports for encode, inspect and estimate."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

# The coordinate coder's bits per coordinate parameter quoted for GPCC in the
# original work; printed for comparison only.
GPCC_REFERENCE_BITS = 5.92

COMPONENTS = ("positions", "col_m1", "col_m0", "geo", "masks", "header")
STREAM_COMPONENT = {"GEO": "geo", "COL0": "col_m0", "COL1": "col_m1"}


@dataclass
class RateReport:
    """Byte sizes per component; ``estimated`` marks model-based numbers."""

    count: int
    n_m1: int
    sizes: dict = field(default_factory=lambda: {k: 0.0 for k in COMPONENTS})
    zhat: dict = field(default_factory=dict)  # stream -> bytes of z-hat sections
    batches: dict = field(default_factory=dict)  # stream -> bytes per batch
    timings: dict = field(default_factory=dict)
    estimated: bool = False

    @property
    def total(self) -> float:
        return sum(self.sizes.values())

    @property
    def attributes(self) -> float:
        """Hyperprior and latent sections of all three streams."""
        return self.sizes["geo"] + self.sizes["col_m0"] + self.sizes["col_m1"]

    @property
    def mask_rate(self) -> float:
        return self.n_m1 / self.count if self.count else 0.0

    def bits_per_param(self) -> dict:
        n, m1 = self.count, self.n_m1
        m0 = n - m1

        def per(size, params):
            return 8.0 * size / params if params else 0.0

        return {
            "positions": per(self.sizes["positions"], 3 * n),
            "col_m1": per(self.sizes["col_m1"], 48 * m1),
            "col_m0": per(self.sizes["col_m0"], 48 * m0),
            "geo": per(self.sizes["geo"], 8 * n),
            "masks": per(self.sizes["masks"], n),
        }

    def add(self, component: str, nbytes: float):
        self.sizes[component] = self.sizes.get(component, 0.0) + nbytes

    def merge(self, other: "RateReport"):
        self.count += other.count
        self.n_m1 += other.n_m1
        for k, v in other.sizes.items():
            self.add(k, v)
        for k, v in other.zhat.items():
            self.zhat[k] = self.zhat.get(k, 0.0) + v
        for k, v in other.batches.items():
            mine = self.batches.setdefault(k, [0.0] * len(v))
            for i, x in enumerate(v):
                mine[i] += x
        for k, v in other.timings.items():
            self.timings[k] = self.timings.get(k, 0.0) + v

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "estimated": self.estimated,
            "mask_rate": self.mask_rate,
            "sizes": dict(self.sizes),
            "total": self.total,
            "bits_per_param": self.bits_per_param(),
            "position_bits_per_point": 8.0 * self.sizes["positions"] / self.count if self.count else 0.0,
            "gpcc_reference_bits_per_param": GPCC_REFERENCE_BITS,
            "zhat": dict(self.zhat),
            "batches": {k: list(v) for k, v in self.batches.items()},
            "timings": dict(self.timings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        bpp = self.bits_per_param()
        kind = "estimated" if self.estimated else "actual"
        lines = [
            f"gaussians        {self.count}",
            f"mask rate (m=1)  {self.mask_rate:.4f}",
            f"{'component':<16} {'bytes':>14} {'MB':>10} {'bits/param':>11}",
        ]
        for k in COMPONENTS:
            b = self.sizes[k]
            extra = f"{bpp[k]:>11.3f}" if k in bpp else ""
            lines.append(f"{k:<16} {b:>14.1f} {b / 1e6:>10.4f} {extra}")
        lines.append(f"{'total (' + kind + ')':<16} {self.total:>14.1f} {self.total / 1e6:>10.4f}")
        lines.append(
            f"positions: {bpp['positions']:.3f} bits/param "
            f"({3 * bpp['positions']:.2f} bits/point; GPCC reference {GPCC_REFERENCE_BITS} bits/param)"
        )
        for k, v in sorted(self.batches.items()):
            lines.append(f"{k} bytes per batch: " + ", ".join(f"{x:.0f}" for x in v))
        for k, v in self.timings.items():
            lines.append(f"time {k:<12} {v:.3f} s")
        return "\n".join(lines)

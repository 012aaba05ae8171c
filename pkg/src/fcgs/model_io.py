"""Gaussian scene container and binary PLY ingestion/emission.

Column layout follows the reference 3DGS exporter (see docs/ply-layout.md)::

    x y z | nx ny nz | f_dc_0..2 | f_rest_0..44 | opacity | scale_0..2 | rot_0..3

Geometry attributes ``f_geo`` are ``[opacity, scale_0..2, rot_0..3]`` and
colour attributes ``f_col`` are stored component-major: for colour component
``i`` the 16 coefficients are ``[f_dc_i, f_rest_{15i} .. f_rest_{15i+14}]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError, SchemaError, SerializationError, TruncationError

BBOX_PAD = 1e-6

POSITION_NAMES = ("x", "y", "z")
NORMAL_NAMES = ("nx", "ny", "nz")
GEO_NAMES = ("opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3")
DC_NAMES = tuple(f"f_dc_{i}" for i in range(3))
REST_NAMES = tuple(f"f_rest_{i}" for i in range(45))

# On-disk order written by write_ply.
PLY_PROPERTIES = POSITION_NAMES + NORMAL_NAMES + DC_NAMES + REST_NAMES + GEO_NAMES

# COL_NAMES[j] is the on-disk property feeding f_col[:, j].
COL_NAMES = tuple(
    name
    for comp in range(3)
    for name in (DC_NAMES[comp],) + REST_NAMES[15 * comp : 15 * comp + 15]
)

_PLY_TYPES = {
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
}


@dataclass(frozen=True, eq=False)
class SceneBBox:
    min: np.ndarray
    max: np.ndarray

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min


@dataclass(frozen=True, eq=False)
class GaussianCloud:
    """N Gaussians as float64 arrays: positions (N,3), f_geo (N,8), f_col (N,48)."""

    positions: np.ndarray
    f_geo: np.ndarray
    f_col: np.ndarray

    def __post_init__(self):
        self._check(copy=True)

    @classmethod
    def adopt(cls, positions, f_geo, f_col) -> "GaussianCloud":
        """Wrap freshly built float64 arrays without copying; they become read-only."""
        obj = cls.__new__(cls)
        object.__setattr__(obj, "positions", positions)
        object.__setattr__(obj, "f_geo", f_geo)
        object.__setattr__(obj, "f_col", f_col)
        obj._check(copy=False)
        return obj

    def _check(self, copy: bool):
        pos = _frozen(self.positions, 3, "positions", copy)
        geo = _frozen(self.f_geo, 8, "f_geo", copy)
        col = _frozen(self.f_col, 48, "f_col", copy)
        if not (len(pos) == len(geo) == len(col)):
            raise ValueError("positions, f_geo and f_col must have the same row count")
        if len(pos) < 1:
            raise ValueError("a GaussianCloud needs at least one Gaussian")
        for name, arr in (("positions", pos), ("f_geo", geo), ("f_col", col)):
            for a in range(0, len(arr), 1 << 16):
                bad = ~np.isfinite(arr[a : a + (1 << 16)]).all(axis=1)
                if bad.any():
                    raise ValueError(f"{name} has non-finite values at row {a + int(np.argmax(bad))}")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "f_geo", geo)
        object.__setattr__(self, "f_col", col)

    @property
    def count(self) -> int:
        return len(self.positions)

    @property
    def f_gau(self) -> np.ndarray:
        return np.concatenate([self.f_geo, self.f_col], axis=1)

    def take(self, index) -> "GaussianCloud":
        return GaussianCloud(self.positions[index], self.f_geo[index], self.f_col[index])

    def equals(self, other: "GaussianCloud") -> bool:
        return all(
            np.array_equal(a, b)
            for a, b in (
                (self.positions, other.positions),
                (self.f_geo, other.f_geo),
                (self.f_col, other.f_col),
            )
        )


def _frozen(arr, width, name, copy=True):
    out = np.array(arr, dtype=np.float64, copy=True) if copy else np.ascontiguousarray(arr, dtype=np.float64)
    if out.ndim != 2 or out.shape[1] != width:
        raise ValueError(f"{name} must have shape (N, {width}), got {out.shape}")
    out.setflags(write=False)
    return out


def _header_bytes(count: int) -> bytes:
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {count}"]
    lines += [f"property float {name}" for name in PLY_PROPERTIES]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def ply_size(count: int) -> int:
    """Byte length of write_ply output for ``count`` Gaussians."""
    return len(_header_bytes(count)) + 4 * len(PLY_PROPERTIES) * count


def parse_ply(data: bytes) -> GaussianCloud:
    """Parse a binary little-endian 3DGS PLY file."""
    data = bytes(data)
    end = data.find(b"end_header")
    if end < 0:
        raise FormatError("PLY header has no 'end_header' line")
    nl = data.find(b"\n", end)
    if nl < 0:
        raise FormatError("PLY header is not terminated by a newline")
    body_start = nl + 1
    try:
        header = data[:end].decode("ascii")
    except UnicodeDecodeError as exc:
        raise FormatError(f"PLY header is not ASCII: {exc}") from None
    lines = header.replace("\r\n", "\n").split("\n")

    if lines[0].strip() != "ply":
        raise FormatError(f"line 1: expected 'ply', got {lines[0]!r}")
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    seen_format = False
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("comment") or line.startswith("obj_info"):
            continue
        tok = line.split()
        if tok[0] == "format":
            if tok[1:] != ["binary_little_endian", "1.0"]:
                raise FormatError(f"line {lineno}: unsupported format {line!r}")
            seen_format = True
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise FormatError(f"line {lineno}: malformed element line {line!r}")
            if tok[1] != "vertex" or count is not None:
                raise FormatError(f"line {lineno}: only one 'vertex' element is supported")
            count = int(tok[2])
            in_vertex = True
        elif tok[0] == "property":
            if not in_vertex:
                raise FormatError(f"line {lineno}: property outside an element")
            if len(tok) != 3 or tok[1] not in _PLY_TYPES:
                raise FormatError(f"line {lineno}: unsupported property {line!r}")
            props.append((tok[2], _PLY_TYPES[tok[1]]))
        else:
            raise FormatError(f"line {lineno}: unrecognised header line {line!r}")
    if not seen_format:
        raise FormatError("PLY header has no format line")
    if count is None:
        raise FormatError("PLY header declares no vertex element")

    names = [p[0] for p in props]
    if len(set(names)) != len(names):
        raise FormatError("PLY header repeats a property name")
    required = POSITION_NAMES + DC_NAMES + REST_NAMES + GEO_NAMES
    missing = [n for n in required if n not in names]
    if missing:
        raise SchemaError(f"PLY is missing properties: {', '.join(missing)}", missing)
    known = set(required) | set(NORMAL_NAMES)
    unknown = [n for n in names if n not in known]
    if unknown:
        raise SchemaError(f"PLY has unsupported properties: {', '.join(unknown)}", unknown)

    dtype = np.dtype(props)
    expected = count * dtype.itemsize
    got = len(data) - body_start
    if got != expected:
        raise TruncationError(
            f"vertex data holds {got} bytes, header announces {count} x {dtype.itemsize} = {expected}"
        )
    rows = np.frombuffer(data, dtype=dtype, count=count, offset=body_start)

    def cols(keys):
        return np.stack([rows[k].astype(np.float64) for k in keys], axis=1)

    try:
        return GaussianCloud(cols(POSITION_NAMES), cols(GEO_NAMES), cols(COL_NAMES))
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def write_ply(cloud: GaussianCloud) -> bytes:
    """Serialise ``cloud`` in the canonical layout (float32, zero normals)."""
    n = cloud.count
    table = np.zeros((n, len(PLY_PROPERTIES)), dtype=np.float64)
    col_of = {name: i for i, name in enumerate(PLY_PROPERTIES)}
    for j, name in enumerate(POSITION_NAMES):
        table[:, col_of[name]] = cloud.positions[:, j]
    for j, name in enumerate(GEO_NAMES):
        table[:, col_of[name]] = cloud.f_geo[:, j]
    for j, name in enumerate(COL_NAMES):
        table[:, col_of[name]] = cloud.f_col[:, j]
    with np.errstate(over="ignore"):
        out = table.astype("<f4")
    bad = ~np.isfinite(out).all(axis=1)
    if bad.any():
        raise SerializationError(f"row {int(np.argmax(bad))} is not representable as finite float32")
    return _header_bytes(n) + out.tobytes()


def compute_bbox(cloud: GaussianCloud) -> SceneBBox:
    """Axis-aligned bounds of the positions; collapsed axes get extent BBOX_PAD."""
    lo = cloud.positions.min(axis=0)
    hi = cloud.positions.max(axis=0)
    padded = np.maximum(lo + BBOX_PAD, np.nextafter(lo, np.inf))
    hi = np.where(hi - lo > 0, hi, padded)
    return SceneBBox(lo, hi)

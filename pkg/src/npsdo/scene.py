"""Rasterized scenes: the 3-channel fluid/air/solid indicator image.

Channel order is fixed: 0 = fluid, 1 = air, 2 = solid. Arrays are stored as
``(3, Nx, Ny)`` (or ``(3, Nx, Ny, Nz)``) float32, with the first spatial
index running along x. Cell centres sit at ``i + 0.5`` in grid units.
"""
from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError

FLUID, AIR, SOLID = 0, 1, 2
CHANNEL_ORDER = b"FAS\x00"
SCN_MAGIC = b"NPSC"
SCN_VERSION = 1


class CellType(enum.IntEnum):
    FLUID = FLUID
    AIR = AIR
    SOLID = SOLID


@dataclass(frozen=True, eq=False)
class IndicatorImage:
    """Per-cell channel fractions. At the finest level every cell is one-hot;
    pooled levels keep a channel sum of one."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim < 2 or arr.shape[0] != 3:
            raise DimensionError(f"indicator image needs shape (3, ...), got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_labels(cls, labels) -> "IndicatorImage":
        labels = np.asarray(labels)
        if labels.size and (labels.min() < 0 or labels.max() > 2):
            raise ValueError("labels must be 0 (fluid), 1 (air) or 2 (solid)")
        data = np.zeros((3,) + labels.shape, dtype=np.float32)
        for c in range(3):
            data[c] = labels == c
        return cls(data)

    @classmethod
    def all_fluid(cls, dims) -> "IndicatorImage":
        return cls.from_labels(np.zeros(tuple(dims), dtype=np.int8))

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.data.shape[1:])

    @property
    def ndim(self) -> int:
        return self.data.ndim - 1

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.dims))

    def labels(self) -> np.ndarray:
        """Argmax channel per cell (exact for one-hot images)."""
        return np.argmax(self.data, axis=0).astype(np.int8)

    def is_one_hot(self) -> bool:
        d = self.data
        return bool(np.all((d == 0.0) | (d == 1.0)) and np.all(d.sum(axis=0) == 1.0))

    def channel_sum_ok(self, tol: float = 1e-6) -> bool:
        return bool(np.all(np.abs(self.data.sum(axis=0) - 1.0) <= tol))

    def count(self, cell: int) -> int:
        return int(np.count_nonzero(self.labels() == cell))

    def __eq__(self, other):
        if not isinstance(other, IndicatorImage):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    __hash__ = None


def check_divisible(dims, depth: int):
    """Raise DimensionError unless every dimension is divisible by 2**depth."""
    f = 2 ** depth
    bad = [d for d in dims if d % f]
    if bad:
        raise DimensionError(f"dims {tuple(dims)} not divisible by 2**{depth} = {f}")


def cell_type(I: IndicatorImage, *index) -> CellType:
    if len(index) != I.ndim:
        raise DimensionError(f"expected {I.ndim} indices")
    for k, n in zip(index, I.dims):
        if not 0 <= k < n:
            raise IndexError(f"cell {index} outside dims {I.dims}")
    return CellType(int(np.argmax(I.data[(slice(None),) + tuple(index)])))


def pad_image(I: IndicatorImage, width: int) -> IndicatorImage:
    """Surround the image with ``width`` layers of solid cells."""
    if width < 0:
        raise ValueError("width must be >= 0")
    if width == 0:
        return I
    pad = [(0, 0)] + [(width, width)] * I.ndim
    out = np.stack([
        np.pad(I.data[0], pad[1:], constant_values=0.0),
        np.pad(I.data[1], pad[1:], constant_values=0.0),
        np.pad(I.data[2], pad[1:], constant_values=1.0),
    ])
    return IndicatorImage(out)


# --------------------------------------------------------------------------
# procedural scenes

_TAGS = {"fluid": FLUID, "air": AIR, "solid": SOLID}


@dataclass(frozen=True)
class Primitive:
    """A box, disc (ball in 3D) or half-space painted with one cell type.

    ``velocity`` translates the primitive (grid cells per unit time) and
    ``growth`` changes a disc radius; both are used for scripted air regions.
    """

    kind: str
    tag: str
    lo: tuple = ()
    hi: tuple = ()
    center: tuple = ()
    radius: float = 0.0
    normal: tuple = ()
    offset: float = 0.0
    velocity: tuple = ()
    growth: float = 0.0

    def __post_init__(self):
        if self.kind not in ("box", "disc", "halfspace"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if self.tag not in _TAGS:
            raise ValueError(f"unknown tag {self.tag!r}")

    def mask(self, centers: list[np.ndarray], t: float = 0.0) -> np.ndarray:
        ndim = len(centers)
        shift = np.zeros(ndim) if not self.velocity else np.asarray(self.velocity, float) * t
        if self.kind == "box":
            m = np.ones(centers[0].shape, dtype=bool)
            for d in range(ndim):
                m &= (centers[d] >= self.lo[d] + shift[d]) & (centers[d] < self.hi[d] + shift[d])
            return m
        if self.kind == "disc":
            r = max(self.radius + self.growth * t, 0.0)
            dist2 = sum((centers[d] - (self.center[d] + shift[d])) ** 2 for d in range(ndim))
            return dist2 < r * r
        proj = sum(self.normal[d] * (centers[d] - shift[d]) for d in range(ndim))
        return proj < self.offset

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "tag": self.tag}
        for name in ("lo", "hi", "center", "normal", "velocity"):
            v = getattr(self, name)
            if v:
                out[name] = list(v)
        for name in ("radius", "offset", "growth"):
            v = getattr(self, name)
            if v:
                out[name] = v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Primitive":
        d = dict(d)
        for name in ("lo", "hi", "center", "normal", "velocity"):
            if name in d:
                d[name] = tuple(d[name])
        return cls(**d)


def box(lo, hi, tag="solid", velocity=()) -> Primitive:
    return Primitive("box", tag, lo=tuple(lo), hi=tuple(hi), velocity=tuple(velocity))


def disc(center, radius, tag="solid", velocity=(), growth=0.0) -> Primitive:
    return Primitive("disc", tag, center=tuple(center), radius=float(radius),
                     velocity=tuple(velocity), growth=float(growth))


def half_space(axis: int, bound: float, tag="solid", below=True, ndim=2) -> Primitive:
    """Cells with centre coordinate ``x_axis < bound`` (or ``>= bound``)."""
    normal = [0.0] * ndim
    normal[axis] = 1.0 if below else -1.0
    return Primitive("halfspace", tag, normal=tuple(normal),
                     offset=float(bound) if below else -float(bound))


@dataclass(frozen=True)
class SceneSpec:
    """Primitives composited in order onto a fluid canvas."""

    dims: tuple
    primitives: tuple = ()
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "primitives", tuple(self.primitives))
        if any(d <= 0 for d in self.dims):
            raise ValueError("dims must be positive")
        for p in self.primitives:
            pts = [p.center] if p.kind == "disc" else ([p.lo, p.hi] if p.kind == "box" else [])
            for pt in pts:
                if len(pt) != len(self.dims):
                    raise DimensionError("primitive dimension does not match scene")
            if p.kind == "disc" and not all(0 <= c <= n for c, n in zip(p.center, self.dims)):
                raise ValueError("disc centre lies outside the scene")
            if p.kind == "box" and not all(l < n and h > 0 for l, h, n in zip(p.lo, p.hi, self.dims)):
                raise ValueError("box lies outside the scene")

    def to_dict(self) -> dict:
        return {"dims": list(self.dims), "seed": self.seed, "name": self.name,
                "primitives": [p.to_dict() for p in self.primitives]}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(tuple(d["dims"]), tuple(Primitive.from_dict(p) for p in d.get("primitives", [])),
                   int(d.get("seed", 0)), d.get("name", ""))

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load_json(cls, path) -> "SceneSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def cell_centers(dims) -> list[np.ndarray]:
    axes = [np.arange(n) + 0.5 for n in dims]
    return np.meshgrid(*axes, indexing="ij")


def rasterize(spec: SceneSpec, depth: int | None = None, t: float = 0.0) -> IndicatorImage:
    """One-hot image of ``spec`` at time ``t``; uncovered cells are fluid."""
    if depth is not None:
        check_divisible(spec.dims, depth)
    labels = np.full(spec.dims, FLUID, dtype=np.int8)
    centers = cell_centers(spec.dims)
    for p in spec.primitives:
        labels[p.mask(centers, t)] = _TAGS[p.tag]
    return IndicatorImage.from_labels(labels)


def random_scene(dims, seed: int, n_solid=(0, 3), n_air=(1, 3), air_band=True) -> SceneSpec:
    """Random boxes and discs of solid and air; optional air band on top (y max)."""
    rng = np.random.default_rng(seed)
    dims = tuple(dims)
    prims = []
    if air_band:
        h = rng.uniform(0.1, 0.3) * dims[1]
        prims.append(half_space(1, dims[1] - h, tag="air", below=False, ndim=len(dims)))
    for tag, (lo_n, hi_n) in (("solid", n_solid), ("air", n_air)):
        for _ in range(rng.integers(lo_n, hi_n + 1)):
            if rng.random() < 0.5:
                c = [rng.uniform(0, n) for n in dims]
                prims.append(disc(c, rng.uniform(0.05, 0.2) * min(dims), tag=tag))
            else:
                lo = [rng.uniform(0, 0.8 * n) for n in dims]
                hi = [l + rng.uniform(0.1, 0.3) * n for l, n in zip(lo, dims)]
                prims.append(box(lo, hi, tag=tag))
    return SceneSpec(dims, tuple(prims), seed=seed, name=f"random-{seed}")


# --------------------------------------------------------------------------
# .scn files


def write_scn(path, I: IndicatorImage):
    with open(path, "wb") as fh:
        fh.write(SCN_MAGIC)
        fh.write(struct.pack("<II", SCN_VERSION, I.ndim))
        fh.write(struct.pack(f"<{I.ndim}I", *I.dims))
        fh.write(CHANNEL_ORDER)
        fh.write(I.data.astype("<f4").tobytes(order="C"))


def read_scn(path) -> IndicatorImage:
    raw = Path(path).read_bytes()
    if raw[:4] != SCN_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version, ndim = struct.unpack_from("<II", raw, 4)
    if version != SCN_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    dims = struct.unpack_from(f"<{ndim}I", raw, 12)
    off = 12 + 4 * ndim
    if raw[off:off + 4] != CHANNEL_ORDER:
        raise FormatError(f"{path}: channel order tag {raw[off:off + 4]!r} not supported")
    off += 4
    count = 3 * int(np.prod(dims))
    if len(raw) - off != 4 * count:
        raise FormatError(f"{path}: payload has {len(raw) - off} bytes, expected {4 * count}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape((3,) + tuple(dims))
    return IndicatorImage(data.astype(np.float32))

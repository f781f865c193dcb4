"""Container height-maps and object footprints.

Cell ``(u, v)`` covers ``[u*cell, (u+1)*cell) x [v*cell, (v+1)*cell)`` of the
container floor; ``H[u, v]`` is the highest occupied point above the floor.
Everything below an object's top surface counts as filled.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import EmptyCloud, NoValidPixels, OutOfBounds
from .geometry import PinholeIntrinsics, PointCloud, Pose, Rotation, as_points, unproject_pixels

DEFAULT_CELL = 1e-3
OVERFLOW_TOL = 1e-9
_SNAP = 1e-6


def grid_count(length: float, cell: float) -> int:
    return max(1, int(math.ceil(length / cell - 1e-9)))


@dataclass(frozen=True)
class Container:
    """Inner box of the target container; ``pose`` maps container frame to camera frame."""

    dims: Tuple[float, float, float]
    pose: Pose = field(default_factory=Pose)

    def __post_init__(self):
        dims = tuple(float(d) for d in self.dims)
        if len(dims) != 3 or min(dims) <= 0:
            raise ValueError("container dimensions must be positive")
        object.__setattr__(self, "dims", dims)

    @property
    def volume(self) -> float:
        lx, ly, lz = self.dims
        return lx * ly * lz


@dataclass(frozen=True, eq=False)
class HeightMap:
    container: Container
    cell_size: float
    grid: np.ndarray

    def __post_init__(self):
        g = np.array(self.grid, dtype=float)
        expect = (grid_count(self.container.dims[0], self.cell_size), grid_count(self.container.dims[1], self.cell_size))
        if g.shape != expect:
            raise ValueError(f"grid shape {g.shape} does not match container ({expect})")
        if np.any(g < 0) or not np.all(np.isfinite(g)):
            raise ValueError("heights must be finite and non-negative")
        g.flags.writeable = False
        object.__setattr__(self, "grid", g)

    @classmethod
    def empty(cls, container: Container, cell_size: float = DEFAULT_CELL) -> "HeightMap":
        shape = (grid_count(container.dims[0], cell_size), grid_count(container.dims[1], cell_size))
        return cls(container, cell_size, np.zeros(shape))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.grid.shape

    def with_grid(self, grid: np.ndarray) -> "HeightMap":
        return HeightMap(self.container, self.cell_size, grid)

    def cell_of(self, x: float, y: float) -> Tuple[int, int]:
        return int(math.floor(x / self.cell_size + _SNAP)), int(math.floor(y / self.cell_size + _SNAP))


@dataclass(frozen=True, eq=False)
class Footprint:
    """Per-cell vertical extent of a rotated object.

    ``offsets`` are cell indices relative to the footprint's lower-left cell;
    ``bottom``/``top`` are heights relative to the object frame origin.
    ``origin_xy`` locates the frame origin (meters) from the lower-left corner.
    """

    offsets: np.ndarray
    bottom: np.ndarray
    top: np.ndarray
    origin_xy: Tuple[float, float]
    cell_size: float

    @property
    def extent(self) -> Tuple[int, int]:
        return int(self.offsets[:, 0].max()) + 1, int(self.offsets[:, 1].max()) + 1

    def __len__(self) -> int:
        return len(self.offsets)


def _group_reduce(keys: np.ndarray, values: np.ndarray):
    order = np.argsort(keys, kind="stable")
    k = keys[order]
    v = values[order]
    starts = np.flatnonzero(np.r_[True, k[1:] != k[:-1]])
    return k[starts], np.minimum.reduceat(v, starts), np.maximum.reduceat(v, starts)


def fill_radius(points: np.ndarray, cell_size: float) -> int:
    """Neighborhood radius (cells) over which sparse per-cell extents are pooled.

    Point spacing is estimated as ``sqrt(area / N)`` with the area of the
    cloud's bounding box; a window twice that wide holds a sample of every
    face with overwhelming probability for uniform surface samples.
    """
    ext = np.ptp(points, axis=0)
    area = 2.0 * (ext[0] * ext[1] + ext[1] * ext[2] + ext[0] * ext[2])
    spacing = math.sqrt(area / len(points)) if area > 0 else 0.0
    return max(1, int(math.ceil(2.0 * spacing / cell_size - 1e-9)))


def rasterize(cloud, rotation: Rotation, cell_size: float, closing: bool = True) -> Footprint:
    """Rotate an object cloud, bin it into cells, and record min/max height per cell.

    With ``closing`` the footprint mask is morphologically closed and every
    cell takes the lowest bottom and highest top within ``fill_radius``
    cells, so sparse clouds do not leave holes or one-sided cells. This only
    ever lowers bottoms and raises tops (conservative for collisions).
    """
    pts = as_points(cloud)
    if len(pts) == 0:
        raise EmptyCloud("cannot rasterize an empty cloud")
    pts = rotation.apply(pts)
    lo = pts[:, :2].min(axis=0)
    span = pts[:, :2].max(axis=0) - lo
    n_u, n_v = (max(1, int(math.ceil(s / cell_size - 1e-9))) for s in span)
    iu = np.clip(np.floor((pts[:, 0] - lo[0]) / cell_size).astype(np.int64), 0, n_u - 1)
    iv = np.clip(np.floor((pts[:, 1] - lo[1]) / cell_size).astype(np.int64), 0, n_v - 1)
    keys, zmin, zmax = _group_reduce(iu * n_v + iv, pts[:, 2])

    bottom = np.full((n_u, n_v), np.inf)
    top = np.full((n_u, n_v), -np.inf)
    bottom.flat[keys] = zmin
    top.flat[keys] = zmax
    mask = np.isfinite(bottom)
    if closing and mask.size > 1:
        r = fill_radius(pts, cell_size)
        size = 2 * r + 1
        padded = np.pad(mask, r)
        mask = ndimage.binary_closing(padded, structure=np.ones((size, size), bool))[r:-r, r:-r] | mask
        bottom = ndimage.minimum_filter(bottom, size=size, mode="constant", cval=np.inf)
        top = ndimage.maximum_filter(top, size=size, mode="constant", cval=-np.inf)
    cu, cv = np.nonzero(mask)
    return Footprint(
        offsets=np.stack([cu, cv], axis=1),
        bottom=bottom[cu, cv],
        top=top[cu, cv],
        origin_xy=(float(-lo[0]), float(-lo[1])),
        cell_size=cell_size,
    )


def footprint_cells(h: HeightMap, fp: Footprint, at: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    u = fp.offsets[:, 0] + int(at[0])
    v = fp.offsets[:, 1] + int(at[1])
    n_u, n_v = h.shape
    if u.min() < 0 or v.min() < 0 or u.max() >= n_u or v.max() >= n_v:
        raise OutOfBounds(f"footprint at {tuple(at)} leaves the {h.shape} grid")
    return u, v


def lowest_placeable_height(h: HeightMap, fp: Footprint, at: Tuple[int, int]) -> float:
    """Rest height of the object frame dropped straight down at cell ``at``."""
    u, v = footprint_cells(h, fp, at)
    return float(np.max(h.grid[u, v] - fp.bottom))


class _RowRuns:
    """Footprint cells grouped into horizontal runs of equal bottom height."""

    def __init__(self, fp: Footprint):
        order = np.lexsort((fp.offsets[:, 1], fp.offsets[:, 0]))
        off = fp.offsets[order]
        b = fp.bottom[order]
        brk = np.r_[True, (off[1:, 0] != off[:-1, 0]) | (off[1:, 1] != off[:-1, 1] + 1) | (b[1:] != b[:-1])]
        starts = np.flatnonzero(brk)
        lengths = np.diff(np.r_[starts, len(off)])
        self.rows = off[starts, 0]
        self.cols = off[starts, 1]
        self.lengths = lengths
        self.bottoms = b[starts]


def placeable_height_map(h: HeightMap, fp: Footprint) -> np.ndarray:
    """Lowest placeable height for every in-bounds anchor cell.

    Returns an array of shape ``(U - nu + 1, V - nv + 1)`` (possibly empty).
    Each run of equal-bottom cells contributes one shifted sliding-window max.
    """
    n_u, n_v = h.shape
    e_u, e_v = fp.extent
    a_u, a_v = n_u - e_u + 1, n_v - e_v + 1
    if a_u <= 0 or a_v <= 0:
        return np.zeros((max(a_u, 0), max(a_v, 0)))
    grid = h.grid
    runs = _RowRuns(fp)
    window_max: Dict[int, np.ndarray] = {}
    out = np.full((a_u, a_v), -np.inf)
    for r, c, length, beta in zip(runs.rows, runs.cols, runs.lengths, runs.bottoms):
        m = window_max.get(length)
        if m is None:
            filt = ndimage.maximum_filter1d(grid, size=int(length), axis=1, mode="nearest")
            m = filt[:, length // 2 : length // 2 + n_v - length + 1]
            window_max[length] = m
        np.maximum(out, m[r : r + a_u, c : c + a_v] - beta, out=out)
    return out


def placement_gain_map(h: HeightMap, fp: Footprint, z: np.ndarray) -> np.ndarray:
    """Per-anchor sum of height increase when resting at ``z`` (same shape as ``z``)."""
    a_u, a_v = z.shape
    gain = np.zeros_like(z)
    for (du, dv), t in zip(fp.offsets, fp.top):
        gain += np.maximum(z + t - h.grid[du : du + a_u, dv : dv + a_v], 0.0)
    return gain


def place(h: HeightMap, fp: Footprint, at: Tuple[int, int], z: float) -> HeightMap:
    u, v = footprint_cells(h, fp, at)
    floor_z = float(np.max(h.grid[u, v] - fp.bottom))
    if z < floor_z - 1e-12:
        raise ValueError(f"z={z} penetrates the height-map (lowest placeable {floor_z})")
    grid = np.array(h.grid)
    grid[u, v] = np.maximum(grid[u, v], z + fp.top)
    return h.with_grid(grid)


def integrated_volume(h: HeightMap) -> float:
    return float(h.grid.sum()) * h.cell_size**2


def overflow(h: HeightMap) -> bool:
    return bool(np.any(h.grid > h.container.dims[2] + OVERFLOW_TOL))


def heightmap_from_depth(
    intr: PinholeIntrinsics, depth_map: np.ndarray, container: Container, cell_size: float = DEFAULT_CELL
) -> HeightMap:
    """Max-height per cell over every valid depth pixel that lands inside the container footprint."""
    depth = np.asarray(depth_map, dtype=float)
    vv, uu = np.nonzero(np.isfinite(depth) & (depth > 0))
    if len(uu) == 0:
        raise NoValidPixels("depth map has no valid pixels")
    cam = unproject_pixels(intr, uu.astype(float), vv.astype(float), depth[vv, uu])
    pts = container.pose.inverse().apply(cam)
    lx, ly, _ = container.dims
    inside = (pts[:, 0] >= 0) & (pts[:, 0] < lx) & (pts[:, 1] >= 0) & (pts[:, 1] < ly)
    hm = HeightMap.empty(container, cell_size)
    grid = np.zeros(hm.shape)
    pts = pts[inside]
    if len(pts):
        iu = np.minimum((pts[:, 0] / cell_size).astype(np.int64), hm.shape[0] - 1)
        iv = np.minimum((pts[:, 1] / cell_size).astype(np.int64), hm.shape[1] - 1)
        np.maximum.at(grid, (iu, iv), np.maximum(pts[:, 2], 0.0))
    return hm.with_grid(grid)


# --- binary export --------------------------------------------------------------

_MAGIC = b"DPHM"
_HEADER = struct.Struct("<4sIIIdddd")


def write_heightmap(h: HeightMap, stream: BinaryIO) -> None:
    """Header ``(magic, version, U, V, cell, Lx, Ly, Lz)`` then U*V little-endian float32, row-major."""
    n_u, n_v = h.shape
    lx, ly, lz = h.container.dims
    stream.write(_HEADER.pack(_MAGIC, 1, n_u, n_v, h.cell_size, lx, ly, lz))
    stream.write(np.ascontiguousarray(h.grid, dtype="<f4").tobytes())


def read_heightmap(stream: BinaryIO, pose: Optional[Pose] = None) -> HeightMap:
    head = stream.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise ValueError("truncated height-map header")
    magic, version, n_u, n_v, cell, lx, ly, lz = _HEADER.unpack(head)
    if magic != _MAGIC or version != 1:
        raise ValueError("not a version-1 height-map file")
    data = stream.read(4 * n_u * n_v)
    if len(data) != 4 * n_u * n_v:
        raise ValueError("truncated height-map grid")
    grid = np.frombuffer(data, dtype="<f4").reshape(n_u, n_v).astype(float)
    return HeightMap(Container((lx, ly, lz), pose or Pose()), cell, grid)

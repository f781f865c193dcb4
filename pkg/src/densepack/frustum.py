"""Camera-aligned frustum voxel grids.

Voxel ``(d, h, w)`` covers depth slab ``d`` (linear between the near and far
planes) and one sub-pixel cell of the 2D box. All voxels sharing ``(h, w)``
lie on one camera ray.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from skimage.measure import marching_cubes

from .errors import EmptyCloud, EmptySurface, IndexOutOfRange, InvalidBox, NonWatertightMesh
from .geometry import (
    PinholeIntrinsics,
    PointCloud,
    Pose,
    TriangleMesh,
    project_points,
    sample_mesh_surface,
    unproject_pixels,
)
from .meshes import points_inside

DEFAULT_RESOLUTION = (96, 64, 64)
NEAR_MARGIN = 0.01
MIN_NEAR = 1e-3
AMBIGUITY_LIMIT = 1e-3


@dataclass(frozen=True)
class Frustum:
    intrinsics: PinholeIntrinsics
    box2d: Tuple[float, float, float, float]
    near: float
    far: float
    resolution: Tuple[int, int, int] = DEFAULT_RESOLUTION

    def __post_init__(self):
        x0, y0, x1, y1 = (float(v) for v in self.box2d)
        if not (x0 < x1 and y0 < y1):
            raise InvalidBox(f"degenerate 2D box {self.box2d}")
        if not (0 < self.near < self.far):
            raise ValueError("require 0 < near < far")
        res = tuple(int(r) for r in self.resolution)
        if len(res) != 3 or min(res) < 2:
            raise ValueError("resolution must be three counts >= 2")
        object.__setattr__(self, "box2d", (x0, y0, x1, y1))
        object.__setattr__(self, "resolution", res)

    @property
    def depth_step(self) -> float:
        return (self.far - self.near) / self.resolution[0]

    @property
    def pixel_steps(self) -> Tuple[float, float]:
        """Sub-pixel cell size ``(du, dv)`` along image x (W) and y (H)."""
        x0, y0, x1, y1 = self.box2d
        _, n_h, n_w = self.resolution
        return (x1 - x0) / n_w, (y1 - y0) / n_h

    def index_to_camera(self, d, h, w) -> np.ndarray:
        """Exact frustum map for (possibly fractional) voxel-center indices."""
        d, h, w = (np.asarray(a, dtype=float) for a in (d, h, w))
        du, dv = self.pixel_steps
        depth = self.near + (d + 0.5) * self.depth_step
        u = self.box2d[0] + (w + 0.5) * du
        v = self.box2d[1] + (h + 0.5) * dv
        return unproject_pixels(self.intrinsics, u, v, depth)

    def voxel_centers(self) -> np.ndarray:
        n_d, n_h, n_w = self.resolution
        d, h, w = np.meshgrid(np.arange(n_d), np.arange(n_h), np.arange(n_w), indexing="ij")
        return self.index_to_camera(d, h, w)

    def voxel_volumes(self) -> np.ndarray:
        """Exact volume of every voxel, ``(D, H, W)``."""
        n_d, n_h, n_w = self.resolution
        du, dv = self.pixel_steps
        z0 = self.near + np.arange(n_d) * self.depth_step
        z1 = z0 + self.depth_step
        slab = du * dv / (self.intrinsics.fx * self.intrinsics.fy) * (z1**3 - z0**3) / 3.0
        return np.broadcast_to(slab[:, None, None], (n_d, n_h, n_w)).copy()

    def point_indices(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Integer voxel indices ``(N, 3)`` for camera-frame points and an in-frustum mask."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        idx = np.zeros((len(pts), 3), dtype=np.int64)
        valid = pts[:, 2] > 0
        if not valid.any():
            return idx, valid
        uvz = project_points(self.intrinsics, pts[valid])
        du, dv = self.pixel_steps
        d = np.floor((uvz[:, 2] - self.near) / self.depth_step)
        h = np.floor((uvz[:, 1] - self.box2d[1]) / dv)
        w = np.floor((uvz[:, 0] - self.box2d[0]) / du)
        sub = np.stack([d, h, w], axis=1)
        ok = np.all((sub >= 0) & (sub < np.array(self.resolution)), axis=1)
        idx[valid] = np.where(ok[:, None], sub, 0).astype(np.int64)
        valid[np.flatnonzero(valid)[~ok]] = False
        return idx, valid


@dataclass(frozen=True, eq=False)
class FeatureVolume:
    frustum: Frustum
    channels: np.ndarray  # (C, D, H, W)


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    frustum: Frustum
    probabilities: np.ndarray  # (D, H, W)

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.shape != tuple(self.frustum.resolution):
            raise ValueError(f"grid shape {p.shape} does not match resolution {self.frustum.resolution}")
        if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
            raise ValueError("occupancy probabilities must lie in [0, 1]")
        object.__setattr__(self, "probabilities", p)


def build_frustum(
    intr: PinholeIntrinsics,
    box2d: Sequence[float],
    partial_cloud: PointCloud,
    scene_far: float,
    resolution: Sequence[int] = DEFAULT_RESOLUTION,
    near_margin: float = NEAR_MARGIN,
) -> Frustum:
    if len(partial_cloud) == 0:
        raise EmptyCloud("frustum needs at least one observed point")
    x0, y0, x1, y1 = box2d
    if not (x0 < x1 and y0 < y1):
        raise InvalidBox(f"degenerate 2D box {tuple(box2d)}")
    z = partial_cloud.points[:, 2]
    if np.any(z <= 0):
        raise ValueError("partial cloud points must have positive depth")
    near = max(float(z.min()) - near_margin, MIN_NEAR)
    return Frustum(intr, tuple(box2d), near, float(scene_far), tuple(resolution))


def voxel_center(f: Frustum, d: int, h: int, w: int) -> np.ndarray:
    for i, n in zip((d, h, w), f.resolution):
        if not 0 <= i < n:
            raise IndexOutOfRange(f"voxel index {(d, h, w)} outside {f.resolution}")
    return f.index_to_camera(d, h, w)


def voxelize_cloud(f: Frustum, cloud: PointCloud, mask_flags: Optional[Sequence[bool]] = None) -> FeatureVolume:
    """Fill RGB (channels 0-2) and the instance-mask flag (channel 3) per occupied voxel.

    Points outside the frustum are ignored; on collisions the later point wins.
    """
    n_d, n_h, n_w = f.resolution
    vol = np.zeros((4, n_d, n_h, n_w))
    if len(cloud) == 0:
        return FeatureVolume(f, vol)
    if cloud.colors is None:
        raise ValueError("voxelize_cloud needs per-point colors")
    mask = np.ones(len(cloud), dtype=bool) if mask_flags is None else np.asarray(mask_flags, dtype=bool)
    idx, valid = f.point_indices(cloud.points)
    sel = np.flatnonzero(valid)
    if len(sel) == 0:
        return FeatureVolume(f, vol)
    flat = np.ravel_multi_index(idx[sel].T, f.resolution)
    # keep the last occurrence of each voxel
    _, first_rev = np.unique(flat[::-1], return_index=True)
    keep = sel[len(sel) - 1 - first_rev]
    d, h, w = idx[keep].T
    vol[0:3, d, h, w] = cloud.colors[keep].T
    vol[3, d, h, w] = mask[keep].astype(float)
    return FeatureVolume(f, vol)


def occupancy_from_mesh(f: Frustum, mesh: TriangleMesh, mesh_pose: Pose = Pose()) -> OccupancyGrid:
    """Label voxels whose center lies inside the posed mesh (mesh frame -> camera frame)."""
    posed = mesh.transformed(mesh_pose)
    centers = f.voxel_centers().reshape(-1, 3)
    inside, ambiguous = points_inside(centers, posed)
    if ambiguous.mean() > AMBIGUITY_LIMIT:
        raise NonWatertightMesh(
            f"inside test disagrees across ray directions on {ambiguous.mean():.2%} of voxels"
        )
    return OccupancyGrid(f, inside.reshape(f.resolution).astype(float))


def extract_mesh(o: OccupancyGrid, threshold: float = 0.5) -> TriangleMesh:
    """Marching Cubes in index space, vertices warped through the exact frustum map.

    The grid is zero-padded on every face so the surface is always closed.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie strictly between 0 and 1")
    p = o.probabilities
    if not np.any(p > threshold):
        raise EmptySurface("no voxel exceeds the iso-threshold")
    padded = np.pad(p, 1, mode="constant", constant_values=0.0)
    verts, faces, _, _ = marching_cubes(padded, level=threshold)
    idx = verts.astype(float) - 1.0
    cam = o.frustum.index_to_camera(idx[:, 0], idx[:, 1], idx[:, 2])
    mesh = TriangleMesh(cam, faces)
    if mesh.signed_volume() < 0:
        mesh = mesh.flipped()
    return mesh


def complete_to_cloud(o: OccupancyGrid, threshold: float, n_points: int, rng: np.random.Generator) -> PointCloud:
    return sample_mesh_surface(extract_mesh(o, threshold), n_points, rng)

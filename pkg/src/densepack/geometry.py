"""Foundational 3D value types and routines.

Points are ``(N, 3)`` float64 arrays in meters. Rotations are unit quaternions
stored as ``(w, x, y, z)`` with the double cover canonicalized to ``w >= 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyMesh, NonPositiveDepth

Vec3 = Tuple[float, float, float]

_EPS_AREA = 1e-20


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _canonical(q: np.ndarray) -> np.ndarray:
    q = q / np.linalg.norm(q)
    if q[0] < 0.0:
        q = -q
    return q


@dataclass(frozen=True)
class Rotation:
    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        q = np.array([self.w, self.x, self.y, self.z], dtype=float)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("quaternion must be finite and non-zero")
        q = _canonical(q)
        for name, value in zip("wxyz", q):
            object.__setattr__(self, name, float(value))

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, q: Sequence[float]) -> "Rotation":
        return cls(*map(float, q))

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle: float) -> "Rotation":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        s = math.sin(angle / 2.0)
        return cls(math.cos(angle / 2.0), *(axis * s))

    @classmethod
    def from_yaw(cls, angle: float) -> "Rotation":
        return cls(math.cos(angle / 2.0), 0.0, 0.0, math.sin(angle / 2.0))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Rotation":
        m = np.asarray(m, dtype=float)
        # Shepperd's method, branch on the largest diagonal term
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if tr > 0:
            s = math.sqrt(tr + 1.0) * 2
            q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
            q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        elif m[1, 1] > m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
            q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        else:
            s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
            q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        return cls(*q)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def as_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
            ]
        )

    def __mul__(self, other: "Rotation") -> "Rotation":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Rotation(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def inverse(self) -> "Rotation":
        return Rotation(self.w, -self.x, -self.y, -self.z)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.as_matrix().T

    def angle_to(self, other: "Rotation") -> float:
        d = abs(float(np.dot(self.as_array(), other.as_array())))
        return 2.0 * math.acos(min(1.0, d))


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``p -> R p + t``."""

    rotation: Rotation = field(default_factory=Rotation.identity)
    translation: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self):
        t = tuple(float(v) for v in self.translation)
        if len(t) != 3 or not all(math.isfinite(v) for v in t):
            raise ValueError("translation must be three finite numbers")
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=float)
        return cls(Rotation.from_matrix(m[:3, :3]), tuple(m[:3, 3]))

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.as_matrix()
        m[:3, 3] = self.translation
        return m

    def __matmul__(self, other: "Pose") -> "Pose":
        t = self.rotation.apply(np.asarray(other.translation)) + np.asarray(self.translation)
        return Pose(self.rotation * other.rotation, tuple(t))

    def inverse(self) -> "Pose":
        r_inv = self.rotation.inverse()
        return Pose(r_inv, tuple(-r_inv.apply(np.asarray(self.translation))))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.rotation.apply(points) + np.asarray(self.translation)


@dataclass(frozen=True)
class PinholeIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_matrix(cls, k: np.ndarray, width: int, height: int) -> "PinholeIntrinsics":
        k = np.asarray(k, dtype=float)
        return cls(float(k[0, 0]), float(k[1, 1]), float(k[0, 2]), float(k[1, 2]), int(width), int(height))

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", _readonly(pts))
        if self.colors is not None:
            cols = np.array(self.colors, dtype=float).reshape(-1, 3)
            if len(cols) != len(pts):
                raise ValueError("colors must match points in length")
            object.__setattr__(self, "colors", _readonly(cols))

    def __len__(self) -> int:
        return len(self.points)

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return PointCloud(points, self.colors)

    def scaled(self, s: float) -> "PointCloud":
        return self.with_points(self.points * s)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle mesh. Zero-area triangles are dropped on construction."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 3)
        t = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        if len(t):
            cross = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
            keep = 0.5 * np.linalg.norm(cross, axis=1) > _EPS_AREA
            t = t[keep]
        object.__setattr__(self, "vertices", _readonly(v))
        object.__setattr__(self, "triangles", _readonly(t))

    def triangle_corners(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        t = self.triangles
        return self.vertices[t[:, 0]], self.vertices[t[:, 1]], self.vertices[t[:, 2]]

    def areas(self) -> np.ndarray:
        a, b, c = self.triangle_corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def normals(self) -> np.ndarray:
        a, b, c = self.triangle_corners()
        n = np.cross(b - a, c - a)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def signed_volume(self) -> float:
        """Enclosed volume by the divergence theorem; positive for outward winding."""
        a, b, c = self.triangle_corners()
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def euler_characteristic(self) -> int:
        t = self.triangles
        edges = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        n_edges = len(np.unique(edges, axis=0))
        n_verts = len(np.unique(t))
        return int(n_verts - n_edges + len(t))

    def is_closed(self) -> bool:
        """Every undirected edge is shared by exactly two triangles."""
        t = self.triangles
        if len(t) == 0:
            return False
        edges = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def flipped(self) -> "TriangleMesh":
        return TriangleMesh(self.vertices, self.triangles[:, ::-1])

    def transformed(self, pose: Pose) -> "TriangleMesh":
        return TriangleMesh(pose.apply(self.vertices), self.triangles)

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


# --- transforms and camera model -------------------------------------------------


def transform_cloud(pose: Pose, cloud: PointCloud) -> PointCloud:
    return PointCloud(pose.apply(cloud.points), cloud.colors)


def project_points(intr: PinholeIntrinsics, points: np.ndarray) -> np.ndarray:
    """Vectorized projection; returns ``(N, 3)`` rows of ``(u, v, depth)``."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    z = p[:, 2]
    if np.any(z <= 0):
        raise NonPositiveDepth("cannot project points with z <= 0")
    u = intr.fx * p[:, 0] / z + intr.cx
    v = intr.fy * p[:, 1] / z + intr.cy
    return np.stack([u, v, z], axis=1)


def unproject_pixels(intr: PinholeIntrinsics, u, v, depth) -> np.ndarray:
    u, v, depth = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (u, v, depth)))
    if np.any(depth <= 0):
        raise NonPositiveDepth("depth must be positive")
    x = (u - intr.cx) * depth / intr.fx
    y = (v - intr.cy) * depth / intr.fy
    return np.stack([x, y, depth], axis=-1)


def project(intr: PinholeIntrinsics, p: Sequence[float]) -> Tuple[float, float, float]:
    u, v, d = project_points(intr, np.asarray(p, dtype=float))[0]
    return float(u), float(v), float(d)


def unproject(intr: PinholeIntrinsics, u: float, v: float, depth: float) -> np.ndarray:
    return unproject_pixels(intr, u, v, depth)


# --- sampling ---------------------------------------------------------------------


def sample_uniform_quaternions(rng: np.random.Generator, n: int) -> np.ndarray:
    """Haar-uniform unit quaternions via normalized 4D Gaussians, canonical ``w >= 0``."""
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0] *= -1.0
    return q


def quaternions_to_matrices(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((len(q), 3, 3))
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - z * w)
    m[:, 0, 2] = 2 * (x * z + y * w)
    m[:, 1, 0] = 2 * (x * y + z * w)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - x * w)
    m[:, 2, 0] = 2 * (x * z - y * w)
    m[:, 2, 1] = 2 * (y * z + x * w)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def sample_uniform_rotation(rng: np.random.Generator) -> Rotation:
    return Rotation.from_array(sample_uniform_quaternions(rng, 1)[0])


def sample_mesh_surface(mesh: TriangleMesh, n: int, rng: np.random.Generator) -> PointCloud:
    """Area-weighted triangle choice, then a uniform point inside the triangle."""
    if len(mesh.triangles) == 0:
        raise EmptyMesh("mesh has no triangles with positive area")
    areas = mesh.areas()
    total = areas.sum()
    if not total > 0:
        raise EmptyMesh("mesh has zero surface area")
    idx = rng.choice(len(areas), size=n, p=areas / total)
    r1 = rng.random(n)
    r2 = rng.random(n)
    # fold the unit square onto the triangle
    flip = r1 + r2 > 1.0
    r1[flip] = 1.0 - r1[flip]
    r2[flip] = 1.0 - r2[flip]
    a, b, c = mesh.triangle_corners()
    a, b, c = a[idx], b[idx], c[idx]
    pts = a + r1[:, None] * (b - a) + r2[:, None] * (c - a)
    return PointCloud(pts)


def as_points(cloud_or_points) -> np.ndarray:
    if isinstance(cloud_or_points, PointCloud):
        return cloud_or_points.points
    return np.asarray(cloud_or_points, dtype=float).reshape(-1, 3)


def stack_clouds(clouds: Iterable[PointCloud]) -> PointCloud:
    clouds = list(clouds)
    return PointCloud(np.concatenate([c.points for c in clouds]) if clouds else np.zeros((0, 3)))

"""Oriented boxes: sampled minimum-volume fitting and exact overlap volumes."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import EmptyCloud
from .geometry import (
    PointCloud,
    Pose,
    Rotation,
    TriangleMesh,
    Vec3,
    as_points,
    quaternions_to_matrices,
    sample_uniform_quaternions,
)
from .meshes import box_mesh

MIN_EXTENT = 1e-3

# Unit-cube corner signs, ordered so that the face table below is outward CCW.
_CORNER_SIGNS = np.array(
    [
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, 1],
        [1, -1, 1],
        [1, 1, 1],
        [-1, 1, 1],
    ],
    dtype=float,
)
_FACES = [
    (0, 3, 2, 1),
    (4, 5, 6, 7),
    (0, 1, 5, 4),
    (2, 3, 7, 6),
    (1, 2, 6, 5),
    (0, 4, 7, 3),
]


@dataclass(frozen=True)
class OrientedBox3D:
    """Box with full extents ``dimensions`` in the frame ``pose`` (box -> world)."""

    pose: Pose
    dimensions: Vec3

    def __post_init__(self):
        dims = tuple(float(d) for d in self.dimensions)
        if len(dims) != 3 or not all(d > 0 and math.isfinite(d) for d in dims):
            raise ValueError("box dimensions must be positive and finite")
        object.__setattr__(self, "dimensions", dims)

    @property
    def volume(self) -> float:
        dx, dy, dz = self.dimensions
        return dx * dy * dz

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.pose.translation)

    def corners(self) -> np.ndarray:
        half = 0.5 * np.asarray(self.dimensions)
        return self.pose.apply(_CORNER_SIGNS * half)

    def faces(self) -> List[np.ndarray]:
        c = self.corners()
        return [c[list(f)] for f in _FACES]

    def half_spaces(self) -> Tuple[np.ndarray, np.ndarray]:
        """Outward normals ``n`` and offsets ``d`` with the box = ``{x : n.x <= d}``."""
        r = self.pose.rotation.as_matrix()
        c = self.center
        half = 0.5 * np.asarray(self.dimensions)
        normals = np.vstack([r.T, -r.T])
        offsets = np.concatenate([r.T @ c + half, -(r.T @ c) + half])
        return normals, offsets

    def contains(self, points, slack: float = 1e-9) -> np.ndarray:
        local = self.pose.inverse().apply(as_points(points))
        return np.all(np.abs(local) <= 0.5 * np.asarray(self.dimensions) + slack, axis=1)

    def to_mesh(self) -> TriangleMesh:
        return box_mesh(self.dimensions).transformed(self.pose)


def _clamped_volume(extents: np.ndarray, min_extent: float) -> np.ndarray:
    return np.prod(np.maximum(extents, min_extent), axis=-1)


def _frame_extents(points: np.ndarray, mats: np.ndarray, chunk: int = 256) -> Tuple[np.ndarray, np.ndarray]:
    lo = np.empty((len(mats), 3))
    hi = np.empty((len(mats), 3))
    for s in range(0, len(mats), chunk):
        local = np.einsum("ni,kij->knj", points, mats[s : s + chunk])
        lo[s : s + chunk] = local.min(axis=1)
        hi[s : s + chunk] = local.max(axis=1)
    return lo, hi


_PATTERN = np.array([d for d in itertools.product((-1, 0, 1), repeat=3) if any(d)], dtype=float)
_PATTERN /= np.linalg.norm(_PATTERN, axis=1, keepdims=True)


def _rotvec_matrix(v: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(v))
    if theta == 0.0:
        return np.eye(3)
    k = v / theta
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(theta) * kx + (1 - math.cos(theta)) * (kx @ kx)


def _hull_vertices(points: np.ndarray) -> np.ndarray:
    if len(points) <= 64:
        return points
    try:
        return points[ConvexHull(points).vertices]
    except (QhullError, ValueError):
        return points


def fit_min_volume_box(
    cloud,
    n_rotations: int = 4096,
    rng: np.random.Generator | None = None,
    *,
    refine_rounds: int = 6,
    refine_step_deg: float = 5.0,
    min_extent: float = MIN_EXTENT,
) -> OrientedBox3D:
    """Smallest enclosing box over sampled rotation frames, then local refinement.

    Refinement is a pattern search over the 26 combined small rotations about
    the box axes, repeated until no move helps and then halving the step.
    Among equal volumes the earliest sample wins.
    """
    pts = as_points(cloud)
    if len(pts) == 0:
        raise EmptyCloud("cannot fit a box to an empty cloud")
    rng = np.random.default_rng(0) if rng is None else rng
    pts = _hull_vertices(pts)

    mats = quaternions_to_matrices(sample_uniform_quaternions(rng, n_rotations))
    lo, hi = _frame_extents(pts, mats)
    vols = _clamped_volume(hi - lo, min_extent)
    best = int(np.argmin(vols))
    frame = mats[best]
    best_vol = float(vols[best])

    def volume_of(m):
        local = pts @ m
        return float(_clamped_volume(local.max(axis=0) - local.min(axis=0), min_extent))

    step = math.radians(refine_step_deg)
    for _ in range(refine_rounds):
        moves = [_rotvec_matrix(d * step) for d in _PATTERN]
        improved = True
        while improved:
            improved = False
            for delta in moves:
                cand = frame @ delta
                v = volume_of(cand)
                if v < best_vol:
                    frame, best_vol, improved = cand, v, True
        step /= 2.0

    # re-orthonormalize the accumulated frame
    u, _, vt = np.linalg.svd(frame)
    frame = u @ vt
    if np.linalg.det(frame) < 0:
        frame[:, 2] *= -1
    rot = Rotation.from_matrix(frame)
    # extents are taken in the stored quaternion's frame so containment holds to round-off
    local = pts @ rot.as_matrix()
    lo, hi = local.min(axis=0), local.max(axis=0)
    dims = np.maximum(hi - lo, min_extent)
    center = rot.as_matrix() @ (0.5 * (lo + hi))
    return OrientedBox3D(Pose(rot, tuple(center)), tuple(dims))


# --- convex polytope clipping --------------------------------------------------


def _clip_polygon(poly: np.ndarray, n: np.ndarray, d: float, tol: float):
    """Sutherland-Hodgman against one half-space; returns (kept polygon, points on the cut)."""
    dist = poly @ n - d
    out, cut = [], []
    k = len(poly)
    for i in range(k):
        p, q = poly[i], poly[(i + 1) % k]
        dp, dq = dist[i], dist[(i + 1) % k]
        if dp <= tol:
            out.append(p)
            if dp >= -tol:
                cut.append(p)
        if (dp < -tol and dq > tol) or (dp > tol and dq < -tol):
            x = p + (q - p) * (dp / (dp - dq))
            out.append(x)
            cut.append(x)
    return (np.array(out) if len(out) >= 3 else None), cut


def _order_cap(points: List[np.ndarray], n: np.ndarray, tol: float):
    if len(points) < 3:
        return None
    pts = np.array(points)
    uniq = [pts[0]]
    for p in pts[1:]:
        if min(np.linalg.norm(p - u) for u in uniq) > tol * 10:
            uniq.append(p)
    if len(uniq) < 3:
        return None
    pts = np.array(uniq)
    c = pts.mean(axis=0)
    a = np.cross(n, [1.0, 0.0, 0.0])
    if np.linalg.norm(a) < 0.1:
        a = np.cross(n, [0.0, 1.0, 0.0])
    a /= np.linalg.norm(a)
    b = np.cross(n, a)
    ang = np.arctan2((pts - c) @ b, (pts - c) @ a)
    return pts[np.argsort(ang)]


def clip_polytope(faces: Sequence[np.ndarray], normal: np.ndarray, offset: float, tol: float = 1e-12):
    """Keep the part of a convex polytope (list of face polygons) with ``normal.x <= offset``."""
    new_faces, cut_points = [], []
    for f in faces:
        kept, cut = _clip_polygon(f, normal, offset, tol)
        cut_points.extend(cut)
        if kept is not None:
            new_faces.append(kept)
    if not new_faces:
        return []
    # a face already lying on the plane is the cap
    on_plane = any(np.all(np.abs(f @ normal - offset) <= tol) for f in new_faces)
    cap = None if on_plane else _order_cap(cut_points, normal, tol)
    if cap is not None:
        new_faces.append(cap)
    return new_faces


def polytope_volume(faces: Sequence[np.ndarray]) -> float:
    """Volume of a convex polytope given as planar face polygons of any winding."""
    if len(faces) < 4:
        return 0.0
    ref = np.vstack(faces).mean(axis=0)
    vol = 0.0
    for f in faces:
        # Newell's method
        nx = np.cross(f, np.roll(f, -1, axis=0)).sum(axis=0)
        area2 = np.linalg.norm(nx)
        if area2 == 0.0:
            continue
        h = abs(float(np.dot(nx / area2, f[0] - ref)))
        vol += 0.5 * area2 * h / 3.0
    return vol


def intersection_volume(a: OrientedBox3D, b: OrientedBox3D) -> float:
    faces = a.faces()
    normals, offsets = b.half_spaces()
    for n, d in zip(normals, offsets):
        faces = clip_polytope(faces, n, float(d))
        if not faces:
            return 0.0
    return polytope_volume(faces)


def box_overlap(a: OrientedBox3D, b: OrientedBox3D) -> Tuple[float, float, float]:
    """Return ``(intersection_volume, iou, iog)`` with ``b`` as ground truth."""
    inter = min(intersection_volume(a, b), a.volume, b.volume)
    union = a.volume + b.volume - inter
    iou = inter / union if union > 0 else 0.0
    iog = inter / b.volume
    return inter, min(1.0, iou), min(1.0, iog)

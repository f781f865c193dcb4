"""Closed primitive meshes and vectorized ray casting."""

from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np

from .geometry import TriangleMesh

# Skewed directions so parity rays rarely graze axis-aligned edges.
PARITY_DIRECTIONS = np.array(
    [
        [0.5377, 0.8173, 0.2067],
        [-0.6818, 0.1942, 0.7054],
        [0.2477, -0.9286, 0.2762],
    ]
)
PARITY_DIRECTIONS /= np.linalg.norm(PARITY_DIRECTIONS, axis=1, keepdims=True)

_RAY_CHUNK = 1 << 20


def extrude_polygon(xy: Sequence[Sequence[float]], z0: float, z1: float, apex: int = 0) -> TriangleMesh:
    """Prism over a counter-clockwise polygon, caps fanned from vertex ``apex``.

    The polygon must be star-shaped with respect to ``apex``.
    """
    xy = np.asarray(xy, dtype=float)
    n = len(xy)
    bottom = np.column_stack([xy, np.full(n, z0)])
    top = np.column_stack([xy, np.full(n, z1)])
    verts = np.vstack([bottom, top])
    tris = []
    for i in range(n):
        j = (i + 1) % n
        tris.append((i, j, n + j))
        tris.append((i, n + j, n + i))
    for i in range(n):
        j = (i + 1) % n
        if apex in (i, j):
            continue
        tris.append((n + apex, n + i, n + j))
        tris.append((apex, j, i))
    return TriangleMesh(verts, np.array(tris))


def box_mesh(dims: Sequence[float], center: Sequence[float] = (0.0, 0.0, 0.0)) -> TriangleMesh:
    dx, dy, dz = (float(d) for d in dims)
    cx, cy, cz = (float(c) for c in center)
    xy = [
        (cx - dx / 2, cy - dy / 2),
        (cx + dx / 2, cy - dy / 2),
        (cx + dx / 2, cy + dy / 2),
        (cx - dx / 2, cy + dy / 2),
    ]
    return extrude_polygon(xy, cz - dz / 2, cz + dz / 2)


def cylinder_mesh(radius: float, height: float, segments: int = 48, z0: float = 0.0) -> TriangleMesh:
    """Upright cylinder around the z axis standing on ``z = z0``."""
    ang = 2 * np.pi * np.arange(segments) / segments
    xy = np.column_stack([radius * np.cos(ang), radius * np.sin(ang)])
    return extrude_polygon(xy, z0, z0 + height)


def lshape_mesh(length_x: float, length_y: float, thickness: float, height: float, z0: float = 0.0) -> TriangleMesh:
    """L-shaped prism; the inner corner is at ``(thickness, thickness)``."""
    a, b, t = length_x, length_y, thickness
    if not (0 < t < a and t < b):
        raise ValueError("thickness must be smaller than both arm lengths")
    xy = [(0, 0), (a, 0), (a, t), (t, t), (t, b), (0, b)]
    return extrude_polygon(xy, z0, z0 + height, apex=3)


def _ray_hits(origins: np.ndarray, direction: np.ndarray, a, e1, e2, eps: float = 1e-12):
    """Moller-Trumbore for many origins sharing one direction against a triangle batch.

    Returns the ray parameter ``t`` (``inf`` where the ray misses) of shape ``(R, T)``.
    """
    pvec = np.cross(direction, e2)  # (T, 3)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > eps
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origins[:, None, :] - a[None, :, :]  # (R, T, 3)
    u = np.einsum("rti,ti->rt", s, pvec) * inv
    q = np.cross(s, e1[None, :, :])
    v = np.einsum("rti,i->rt", q, direction) * inv
    t = np.einsum("rti,ti->rt", q, e2) * inv
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > eps)
    return np.where(hit, t, np.inf)


def _triangle_batches(mesh: TriangleMesh, n_rays: int):
    a, b, c = mesh.triangle_corners()
    e1, e2 = b - a, c - a
    step = max(1, _RAY_CHUNK // max(1, n_rays))
    for s in range(0, len(a), step):
        yield a[s : s + step], e1[s : s + step], e2[s : s + step]


def crossing_counts(origins: np.ndarray, direction: np.ndarray, mesh: TriangleMesh) -> np.ndarray:
    origins = np.asarray(origins, dtype=float).reshape(-1, 3)
    counts = np.zeros(len(origins), dtype=np.int64)
    for a, e1, e2 in _triangle_batches(mesh, len(origins)):
        counts += np.isfinite(_ray_hits(origins, direction, a, e1, e2)).sum(axis=1)
    return counts


def points_inside(points: np.ndarray, mesh: TriangleMesh) -> Tuple[np.ndarray, np.ndarray]:
    """Majority vote of ray parity over three fixed directions.

    Returns ``(inside, ambiguous)`` boolean arrays; ``ambiguous`` marks points
    where the three rays disagree.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    inside = np.zeros(len(points), dtype=bool)
    ambiguous = np.zeros(len(points), dtype=bool)
    if len(points) == 0 or len(mesh.triangles) == 0:
        return inside, ambiguous
    lo, hi = mesh.bounds()
    cand = np.all((points >= lo) & (points <= hi), axis=1)
    sub = points[cand]
    votes = np.zeros(len(sub), dtype=np.int64)
    for d in PARITY_DIRECTIONS:
        votes += crossing_counts(sub, d, mesh) % 2
    inside[cand] = votes >= 2
    ambiguous[cand] = (votes == 1) | (votes == 2)
    return inside, ambiguous


def first_hit(origins: np.ndarray, directions: np.ndarray, mesh: TriangleMesh) -> np.ndarray:
    """Distance along each (origin, direction) ray to the nearest triangle, ``inf`` on miss."""
    origins = np.asarray(origins, dtype=float).reshape(-1, 3)
    directions = np.asarray(directions, dtype=float).reshape(-1, 3)
    best = np.full(len(origins), np.inf)
    if len(mesh.triangles) == 0:
        return best
    a_all, b_all, c_all = mesh.triangle_corners()
    e1_all, e2_all = b_all - a_all, c_all - a_all
    step = max(1, _RAY_CHUNK // max(1, len(origins)))
    for s in range(0, len(a_all), step):
        a, e1, e2 = a_all[s : s + step], e1_all[s : s + step], e2_all[s : s + step]
        pvec = np.cross(directions[:, None, :], e2[None, :, :])  # (R, T, 3)
        det = np.einsum("rti,ti->rt", pvec, e1)
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        sv = origins[:, None, :] - a[None, :, :]
        u = np.einsum("rti,rti->rt", sv, pvec) * inv
        q = np.cross(sv, e1[None, :, :])
        v = np.einsum("rti,ri->rt", q, directions) * inv
        t = np.einsum("rti,ti->rt", q, e2) * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
        best = np.minimum(best, np.where(hit, t, np.inf).min(axis=1))
    return best


def merge_meshes(meshes: Sequence[TriangleMesh]) -> TriangleMesh:
    verts, tris, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + off)
        off += len(m.vertices)
    if not verts:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriangleMesh(np.vstack(verts), np.vstack(tris))


def mesh_bbox_dims(mesh: TriangleMesh) -> np.ndarray:
    lo, hi = mesh.bounds()
    return hi - lo


def scaled_mesh(mesh: TriangleMesh, scale: float, about: Optional[Sequence[float]] = None) -> TriangleMesh:
    c = np.zeros(3) if about is None else np.asarray(about, dtype=float)
    return TriangleMesh((mesh.vertices - c) * scale + c, mesh.triangles)

"""Sampling-based joint grasp/placement selection over a container height-map.

A placement is a lower-left anchor cell ``(u, v)``, an orientation from the
configured set and the rest height ``z`` of the grasp-frame origin. The gripper
pose ``q`` puts the grasp-frame origin at ``(u*cell + ox, v*cell + oy, z)``
rotated by the orientation, where ``(ox, oy)`` is the origin's offset from
the footprint's lower-left corner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import NoFeasiblePlan, OutOfBounds, ShapeMismatch
from .geometry import PointCloud, Pose, Rotation
from .heightmap import (
    OVERFLOW_TOL,
    Footprint,
    HeightMap,
    footprint_cells,
    placeable_height_map,
    rasterize,
)

DBLF = "dblf"
HM = "hm"
SAMPLED = "sampled"
EXHAUSTIVE = "exhaustive"


def yaw_orientations(n: int = 8) -> Tuple[Rotation, ...]:
    return tuple(Rotation.from_yaw(2.0 * math.pi * k / n) for k in range(n))


@dataclass(frozen=True, eq=False)
class GraspCandidate:
    id: str
    pose: Pose
    object_cloud: PointCloud

    def __post_init__(self):
        if len(self.object_cloud) == 0:
            raise ValueError("grasp candidate needs a non-empty object cloud")


@dataclass(frozen=True)
class PlannerConfig:
    samples: int = 4096
    epsilon: float = 1e-3
    orientations: Tuple[Rotation, ...] = field(default_factory=yaw_orientations)
    mode: str = SAMPLED
    seed: int = 0
    exhaustive_stride: float = 0.005  # meters

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.orientations:
            raise ValueError("orientation set must be non-empty")
        if self.mode not in (SAMPLED, EXHAUSTIVE):
            raise ValueError(f"unknown planner mode {self.mode!r}")
        object.__setattr__(self, "orientations", tuple(self.orientations))

    def stride_cells(self, cell_size: float) -> int:
        return max(1, int(round(self.exhaustive_stride / cell_size)))


@dataclass(frozen=True, eq=False)
class Plan:
    grasp_index: int
    grasp_id: str
    grasp: Pose
    placement: Pose
    cost: float
    cell: Tuple[int, int]
    rotation_index: int
    z: float
    footprint: Footprint = field(repr=False)


def cost_dblf(q: Pose, epsilon: float = 1e-3) -> float:
    x, y, z = q.translation
    return z + epsilon * (x + y)


def cost_hm(h: HeightMap, h_after: HeightMap) -> float:
    if h.shape != h_after.shape:
        raise ShapeMismatch(f"{h.shape} vs {h_after.shape}")
    return float(np.sum(h_after.grid - h.grid))


def placement_pose(fp: Footprint, rotation: Rotation, cell: Tuple[int, int], z: float, cell_size: float) -> Pose:
    ox, oy = fp.origin_xy
    return Pose(rotation, (cell[0] * cell_size + ox, cell[1] * cell_size + oy, z))


def anchor_of(fp: Footprint, q: Pose, cell_size: float) -> Tuple[int, int]:
    """Inverse of ``placement_pose`` for the xy part."""
    ox, oy = fp.origin_xy
    x, y, _ = q.translation
    return int(math.floor((x - ox) / cell_size + 1e-6)), int(math.floor((y - oy) / cell_size + 1e-6))


def motion_feasible(g: Pose, q: Pose, fp: Footprint, h: HeightMap) -> bool:
    """Geometric core of the straight-up retract / straight-down descend trajectory."""
    try:
        u, v = footprint_cells(h, fp, anchor_of(fp, q, h.cell_size))
    except OutOfBounds:
        return False
    z = q.translation[2]
    if np.any(z + fp.bottom < h.grid[u, v] - 1e-12):
        return False
    return bool(z + fp.top.max() <= h.container.dims[2] + OVERFLOW_TOL)


class FootprintCache:
    """Rasterizations keyed by cloud identity, orientation index and cell size."""

    def __init__(self):
        self._store: Dict[Tuple[int, int, float], Tuple[PointCloud, Footprint]] = {}

    def get(self, cloud: PointCloud, k: int, rotation: Rotation, cell_size: float) -> Footprint:
        key = (id(cloud), k, cell_size)
        hit = self._store.get(key)
        if hit is not None and hit[0] is cloud:
            return hit[1]
        fp = rasterize(cloud, rotation, cell_size)
        self._store[key] = (cloud, fp)
        return fp


def _footprints(h, grasps, cfg, cache):
    cache = cache if cache is not None else FootprintCache()
    return [
        [cache.get(g.object_cloud, k, r, h.cell_size) for k, r in enumerate(cfg.orientations)] for g in grasps
    ]


def _make_plan(h, grasps, cfg, fps, gi, k, cell, z, cost) -> Plan:
    fp = fps[gi][k]
    q = placement_pose(fp, cfg.orientations[k], cell, z, h.cell_size)
    return Plan(gi, grasps[gi].id, grasps[gi].pose, q, float(cost), (int(cell[0]), int(cell[1])), k, float(z), fp)


def _plan_sampled(h, grasps, cost, cfg, fps) -> Plan:
    rng = np.random.default_rng(cfg.seed)
    m = cfg.samples
    n_u, n_v = h.shape
    gi = rng.integers(0, len(grasps), m)
    su = rng.integers(0, n_u, m)
    sv = rng.integers(0, n_v, m)
    ki = rng.integers(0, len(cfg.orientations), m)
    costs = np.full(m, np.inf)
    zs = np.zeros(m)
    lz = h.container.dims[2]
    cell = h.cell_size
    group = gi * len(cfg.orientations) + ki
    for key in np.unique(group):
        g, k = divmod(int(key), len(cfg.orientations))
        fp = fps[g][k]
        e_u, e_v = fp.extent
        idx = np.flatnonzero(group == key)
        idx = idx[(su[idx] + e_u <= n_u) & (sv[idx] + e_v <= n_v)]
        if len(idx) == 0:
            continue
        hu = su[idx, None] + fp.offsets[None, :, 0]
        hv = sv[idx, None] + fp.offsets[None, :, 1]
        under = h.grid[hu, hv]
        z = np.max(under - fp.bottom[None, :], axis=1)
        ok = z + fp.top.max() <= lz + OVERFLOW_TOL
        if cost == HM:
            c = np.maximum(z[:, None] + fp.top[None, :] - under, 0.0).sum(axis=1)
        else:
            ox, oy = fp.origin_xy
            c = z + cfg.epsilon * ((su[idx] * cell + ox) + (sv[idx] * cell + oy))
        costs[idx] = np.where(ok, c, np.inf)
        zs[idx] = z
    best = int(np.argmin(costs))
    if not np.isfinite(costs[best]):
        raise NoFeasiblePlan(f"none of {m} sampled placements is feasible")
    return _make_plan(h, grasps, cfg, fps, int(gi[best]), int(ki[best]), (su[best], sv[best]), zs[best], costs[best])


def _plan_exhaustive(h, grasps, cost, cfg, fps) -> Plan:
    stride = cfg.stride_cells(h.cell_size)
    lz = h.container.dims[2]
    cell = h.cell_size
    n_k = len(cfg.orientations)
    best = None  # (cost, order, gi, k, cell, z)
    for g in range(len(grasps)):
        for k in range(n_k):
            fp = fps[g][k]
            z = placeable_height_map(h, fp)[::stride, ::stride]
            if z.size == 0:
                continue
            au = np.arange(z.shape[0]) * stride
            av = np.arange(z.shape[1]) * stride
            if cost == HM:
                c = np.zeros_like(z)
                for (du, dv), t in zip(fp.offsets, fp.top):
                    under = h.grid[du + au[:, None], dv + av[None, :]]
                    c += np.maximum(z + t - under, 0.0)
            else:
                ox, oy = fp.origin_xy
                c = z + cfg.epsilon * ((au[:, None] * cell + ox) + (av[None, :] * cell + oy))
            c = np.where(z + fp.top.max() <= lz + OVERFLOW_TOL, c, np.inf)
            flat = int(np.argmin(c))
            cmin = float(c.flat[flat])
            if not np.isfinite(cmin):
                continue
            a, b = divmod(flat, z.shape[1])
            order = (g, int(au[a]), int(av[b]), k)
            if best is None or cmin < best[0] or (cmin == best[0] and order < best[1]):
                best = (cmin, order, g, k, (au[a], av[b]), float(z[a, b]))
    if best is None:
        raise NoFeasiblePlan("no enumerated placement is feasible")
    cmin, _, g, k, anchor, z = best
    return _make_plan(h, grasps, cfg, fps, g, k, anchor, z, cmin)


def plan(
    h: HeightMap,
    grasps: Sequence[GraspCandidate],
    cost: str = DBLF,
    cfg: PlannerConfig = PlannerConfig(),
    cache: Optional[FootprintCache] = None,
) -> Plan:
    """Best feasible (grasp, placement) under ``cost``; raises ``NoFeasiblePlan``.

    Ties go to the earliest candidate: iteration order in sampled mode, and
    (grasp, cell row-major, orientation) order in exhaustive mode.
    """
    if not grasps:
        raise ValueError("plan needs at least one grasp candidate")
    if cost not in (DBLF, HM):
        raise ValueError(f"unknown cost {cost!r}")
    fps = _footprints(h, grasps, cfg, cache)
    if cfg.mode == EXHAUSTIVE:
        return _plan_exhaustive(h, grasps, cost, cfg, fps)
    return _plan_sampled(h, grasps, cost, cfg, fps)

"""Sequential packing episodes and paired multi-configuration trials.

The planner sees the provider's completed cloud; the physical outcome is the
item's ground-truth cloud dropped at the planned gripper pose. Perception
errors therefore show up as overflow or wasted space.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .boxes import fit_min_volume_box
from .errors import EmptyCloud, NoFeasiblePlan, OutOfBounds, PoolTooSmall
from .geometry import PointCloud, Pose, TriangleMesh, sample_mesh_surface
from .heightmap import (
    Container,
    HeightMap,
    integrated_volume,
    lowest_placeable_height,
    overflow,
    place,
)
from .meshes import box_mesh, cylinder_mesh, lshape_mesh
from .planner import DBLF, HM, FootprintCache, GraspCandidate, PlannerConfig, anchor_of, plan

DEFAULT_POINTS = 16384

ALL_PLACED = "all_placed"
OVERFLOW = "overflow"
NO_PLAN = "no_plan"


@dataclass(frozen=True, eq=False)
class Item:
    """Object with its frame at the bottom center of its bounding box, z up."""

    id: str
    mesh: TriangleMesh
    cloud: PointCloud
    canonical_pose: Pose = field(default_factory=Pose)

    @property
    def volume(self) -> float:
        return self.mesh.signed_volume()


def make_item(item_id: str, mesh: TriangleMesh, rng: np.random.Generator, n_points: int = DEFAULT_POINTS) -> Item:
    lo, hi = mesh.bounds()
    shift = np.array([(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, lo[2]])
    centered = TriangleMesh(mesh.vertices - shift, mesh.triangles)
    return Item(item_id, centered, sample_mesh_surface(centered, n_points, rng))


def visible_cloud(item: Item, n_points: int, rng: np.random.Generator) -> PointCloud:
    """Points on upward-facing triangles, as seen by one top-down camera."""
    up = item.mesh.normals()[:, 2] > 1e-9
    return sample_mesh_surface(TriangleMesh(item.mesh.vertices, item.mesh.triangles[up]), n_points, rng)


@dataclass(frozen=True)
class CompletionProvider:
    kind: str = "ground_truth"
    rate: float = 0.0
    magnitude: float = 0.0
    scale: float = 1.0

    KINDS = ("ground_truth", "fitted_box", "partial_only", "outlier_noise", "inflate")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.kind == "outlier_noise" and not (0 <= self.rate <= 1 and self.magnitude > 0):
            raise ValueError("outlier_noise needs rate in [0, 1] and magnitude > 0")
        if self.kind == "inflate" and not self.scale > 0:
            raise ValueError("inflate needs scale > 0")

    @classmethod
    def parse(cls, text: str) -> "CompletionProvider":
        """``ground_truth``, ``fitted_box``, ``partial_only``, ``outlier_noise:RATE:MAG`` or ``inflate:SCALE``."""
        kind, *args = text.strip().split(":")
        try:
            if kind == "outlier_noise":
                return cls(kind, rate=float(args[0]), magnitude=float(args[1]))
            if kind == "inflate":
                return cls(kind, scale=float(args[0]))
        except (IndexError, ValueError) as exc:
            raise ValueError(f"bad provider spec {text!r}") from exc
        if args:
            raise ValueError(f"provider {kind!r} takes no parameters")
        return cls(kind)

    @property
    def name(self) -> str:
        if self.kind == "outlier_noise":
            return f"outlier_noise:{self.rate:g}:{self.magnitude:g}"
        if self.kind == "inflate":
            return f"inflate:{self.scale:g}"
        return self.kind


def complete(
    provider: CompletionProvider,
    item: Item,
    visible: Optional[PointCloud],
    rng: Optional[np.random.Generator] = None,
    n_points: Optional[int] = None,
) -> PointCloud:
    rng = np.random.default_rng(0) if rng is None else rng
    gt = item.cloud
    n = len(gt) if n_points is None else n_points
    if provider.kind == "partial_only":
        if visible is None or len(visible) == 0:
            raise EmptyCloud("partial_only needs a non-empty visible cloud")
        return visible
    if len(gt) == 0:
        raise EmptyCloud(f"item {item.id} has no ground-truth cloud")
    if provider.kind == "ground_truth":
        return gt
    if provider.kind == "fitted_box":
        box = fit_min_volume_box(gt, 4096, rng)
        return sample_mesh_surface(box.to_mesh(), n, rng)
    if provider.kind == "inflate":
        c = gt.points.mean(axis=0)
        return gt.with_points((gt.points - c) * provider.scale + c)
    # outlier_noise
    pts = np.array(gt.points)
    k = int(round(provider.rate * len(pts)))
    if k:
        idx = rng.choice(len(pts), size=k, replace=False)
        d = rng.standard_normal((k, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = provider.magnitude * rng.random(k) ** (1.0 / 3.0)
        pts[idx] += d * r[:, None]
    return gt.with_points(pts)


@dataclass(frozen=True)
class Configuration:
    provider: CompletionProvider
    cost: str = DBLF

    @property
    def name(self) -> str:
        return f"{self.provider.name}/{self.cost}"


@dataclass
class StepRecord:
    step: int
    item_id: str
    cell: Tuple[int, int]
    rotation_index: int
    z: float
    cost: float
    volume: float
    z_actual: float

    def as_dict(self) -> dict:
        return {
            "step": self.step,
            "item_id": self.item_id,
            "cell": list(self.cell),
            "rotation_index": self.rotation_index,
            "z": self.z,
            "cost": self.cost,
            "volume": self.volume,
            "z_actual": self.z_actual,
        }


@dataclass
class EpisodeResult:
    success: bool
    packed_volume_fraction: float
    steps: List[StepRecord]
    termination_reason: str
    final_map: HeightMap = field(repr=False)
    maps: List[HeightMap] = field(default_factory=list, repr=False)


def run_episode(
    items: Sequence[Item],
    container: Container,
    provider: CompletionProvider,
    cfg: PlannerConfig = PlannerConfig(),
    cost: str = DBLF,
    *,
    cell_size: float = 1e-3,
    seed: int = 0,
    any_order: bool = True,
    keep_maps: bool = False,
) -> EpisodeResult:
    """Pack ``items`` one by one until all are placed, the container overflows, or no plan exists.

    With ``any_order`` the planner samples grasps over every remaining item;
    otherwise items go in the given order. ``maps`` holds the height-map before
    each step (and the final one) when ``keep_maps`` is set.
    """
    if not items:
        raise ValueError("episode needs at least one item")
    completed = []
    for i, it in enumerate(items):
        rng = np.random.default_rng([seed, i])
        vis = visible_cloud(it, len(it.cloud), rng) if provider.kind == "partial_only" else None
        completed.append(complete(provider, it, vis, rng))

    h = HeightMap.empty(container, cell_size)
    maps = [h] if keep_maps else []
    cache = FootprintCache()
    remaining = list(range(len(items)))
    steps: List[StepRecord] = []
    reason = ALL_PLACED
    while remaining:
        step = len(steps)
        cand = remaining if any_order else remaining[:1]
        grasps = [GraspCandidate(items[i].id, items[i].canonical_pose, completed[i]) for i in cand]
        try:
            p = plan(h, grasps, cost, replace(cfg, seed=_step_seed(seed, step)), cache)
        except NoFeasiblePlan:
            reason = NO_PLAN
            break
        idx = cand[p.grasp_index]
        item = items[idx]
        rot = cfg.orientations[p.rotation_index]
        true_fp = cache.get(item.cloud, p.rotation_index, rot, cell_size)
        anchor = anchor_of(true_fp, p.placement, cell_size)
        try:
            z_true = lowest_placeable_height(h, true_fp, anchor)
        except OutOfBounds:
            # the real object does not fit through the opening at this pose
            reason = OVERFLOW
            break
        h = place(h, true_fp, anchor, z_true)
        if keep_maps:
            maps.append(h)
        steps.append(
            StepRecord(step, item.id, p.cell, p.rotation_index, p.z, p.cost, integrated_volume(h), z_true)
        )
        remaining.remove(idx)
        if overflow(h):
            reason = OVERFLOW
            break

    success = reason == ALL_PLACED
    fraction = min(1.0, integrated_volume(h) / container.volume) if success else 1.0
    return EpisodeResult(success, fraction, steps, reason, h, maps)


def _step_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, step, 7]).generate_state(1)[0])


# --- trials ---------------------------------------------------------------------


@dataclass
class ReportRow:
    configuration: str
    packed_volume_mean: float
    packed_volume_se: float
    success_rate_mean: float
    success_rate_se: float
    episodes: int


REPORT_COLUMNS = (
    "configuration",
    "packed_volume_mean",
    "packed_volume_se",
    "success_rate_mean",
    "success_rate_se",
    "episodes",
)


@dataclass
class TrialReport:
    rows: List[ReportRow]
    episodes: List[List[EpisodeResult]] = field(default_factory=list, repr=False)
    subsets: List[List[str]] = field(default_factory=list, repr=False)

    def row(self, name: str) -> ReportRow:
        for r in self.rows:
            if r.configuration == name:
                return r
        raise KeyError(name)

    def write(self, stream: IO[str], sep: str = "\t") -> None:
        stream.write(sep.join(REPORT_COLUMNS) + "\n")
        for r in self.rows:
            vals = [f"{r.packed_volume_mean:.6f}", f"{r.packed_volume_se:.6f}", f"{r.success_rate_mean:.6f}", f"{r.success_rate_se:.6f}"]
            stream.write(sep.join([r.configuration, *vals, str(r.episodes)]) + "\n")


def mean_and_se(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and standard error (sample stddev / sqrt(n)); se is 0 for a single value."""
    a = np.asarray(values, dtype=float)
    if len(a) < 2:
        return float(a.mean()), 0.0
    return float(a.mean()), float(a.std(ddof=1) / math.sqrt(len(a)))


def trial_subset(pool_size: int, master_seed: int, trial: int, items_per_trial: Tuple[int, int]) -> List[int]:
    """Item indices (in packing order) for one trial; shared by every configuration."""
    rng = np.random.default_rng([master_seed, trial])
    lo, hi = items_per_trial
    k = int(rng.integers(lo, hi + 1))
    return [int(i) for i in rng.choice(pool_size, size=k, replace=False)]


def run_trials(
    item_pool: Sequence[Item],
    trial_count: int,
    configurations: Sequence[Configuration],
    master_seed: int = 0,
    *,
    container: Container,
    cfg: PlannerConfig = PlannerConfig(),
    cell_size: float = 1e-3,
    items_per_trial: Tuple[int, int] = (5, 15),
    any_order: bool = True,
) -> TrialReport:
    """Paired comparison: every configuration packs the same subset with the same seeds."""
    if len(item_pool) < items_per_trial[1]:
        raise PoolTooSmall(f"pool of {len(item_pool)} items, trials need up to {items_per_trial[1]}")
    per_config: List[List[EpisodeResult]] = [[] for _ in configurations]
    subsets = []
    for t in range(trial_count):
        subset = trial_subset(len(item_pool), master_seed, t, items_per_trial)
        items = [item_pool[i] for i in subset]
        subsets.append([it.id for it in items])
        seed = _step_seed(master_seed, 100000 + t)
        for c, conf in enumerate(configurations):
            per_config[c].append(
                run_episode(
                    items, container, conf.provider, cfg, conf.cost,
                    cell_size=cell_size, seed=seed, any_order=any_order,
                )
            )
    rows = []
    for conf, eps in zip(configurations, per_config):
        pv = mean_and_se([e.packed_volume_fraction for e in eps])
        sr = mean_and_se([1.0 if e.success else 0.0 for e in eps])
        rows.append(ReportRow(conf.name, pv[0], pv[1], sr[0], sr[1], len(eps)))
    return TrialReport(rows, per_config, subsets)


def write_episode_log(result: EpisodeResult, stream: IO[str], **context) -> None:
    """One JSON object per placement step; ``context`` keys are prepended to each record."""
    for s in result.steps:
        stream.write(json.dumps({**context, **s.as_dict()}) + "\n")


# --- synthetic item pools -------------------------------------------------------


@dataclass(frozen=True)
class SuiteConfig:
    """Desk-scale stand-in for the real-world packing protocol."""

    container_dims: Tuple[float, float, float] = (0.32, 0.26, 0.18)
    cell_size: float = 0.005
    pool_size: int = 30
    size_range: Tuple[float, float] = (0.04, 0.10)
    n_points: int = DEFAULT_POINTS

    @property
    def container(self) -> Container:
        return Container(self.container_dims)


def synthetic_mesh(kind: str, rng: np.random.Generator, size_range: Tuple[float, float]) -> TriangleMesh:
    lo, hi = size_range
    if kind == "cuboid":
        return box_mesh(rng.uniform(lo, hi, 3))
    if kind == "cylinder":
        r = rng.uniform(lo, hi) / 2
        return cylinder_mesh(r, rng.uniform(lo, hi), segments=32)
    if kind == "lshape":
        a, b = rng.uniform(lo, hi, 2)
        t = rng.uniform(0.3, 0.6) * min(a, b)
        return lshape_mesh(a, b, t, rng.uniform(lo, hi))
    raise ValueError(f"unknown synthetic item kind {kind!r}")


def synthetic_item_pool(
    n: int,
    seed: int = 0,
    kinds: Iterable[str] = ("cuboid", "cylinder", "lshape"),
    size_range: Tuple[float, float] = (0.04, 0.10),
    n_points: int = DEFAULT_POINTS,
) -> List[Item]:
    kinds = tuple(kinds)
    rng = np.random.default_rng(seed)
    pool = []
    for i in range(n):
        kind = kinds[int(rng.integers(len(kinds)))]
        pool.append(make_item(f"{kind}-{i:03d}", synthetic_mesh(kind, rng, size_range), rng, n_points))
    return pool

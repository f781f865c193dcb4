"""Shape-completion metrics: Chamfer distances, F1 at a threshold, and box overlap scores.

Clouds are compared after scaling so that the ground-truth box's longest edge
is 10 units long.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import IO, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .boxes import OrientedBox3D, box_overlap, fit_min_volume_box
from .errors import CountMismatch, EmptyCloud
from .geometry import PointCloud, TriangleMesh, as_points, sample_mesh_surface

NORMALIZED_LONGEST_EDGE = 10.0
DEFAULT_TAUS = (0.1, 0.3, 0.5)
DEFAULT_POINTS = 16384


@dataclass(frozen=True)
class ChamferResult:
    cd_l1: float
    cd_l2: float


@dataclass(frozen=True)
class BoxMetrics:
    iou: float
    iog: float
    f1: float


def harmonic_mean(a: float, b: float) -> float:
    return 0.0 if a + b == 0 else 2.0 * a * b / (a + b)


def normalization_scale(gt_box: OrientedBox3D) -> float:
    return NORMALIZED_LONGEST_EDGE / max(gt_box.dimensions)


def normalize_pair(pred: PointCloud, gt: PointCloud, gt_box: OrientedBox3D) -> Tuple[PointCloud, PointCloud]:
    s = normalization_scale(gt_box)
    return pred.scaled(s), gt.scaled(s)


def nearest_distances(src: np.ndarray, dst: np.ndarray, p: float = 2) -> np.ndarray:
    """Exact distance from every ``src`` point to its nearest ``dst`` point in the ``p`` norm."""
    d, _ = cKDTree(dst).query(src, k=1, p=p)
    return d


def _check(*clouds):
    for c in clouds:
        if len(c) == 0:
            raise EmptyCloud("metric needs non-empty clouds")


def chamfer(x, y) -> ChamferResult:
    px, py = as_points(x), as_points(y)
    _check(px, py)
    l2 = nearest_distances(px, py) ** 2
    l2b = nearest_distances(py, px) ** 2
    l1 = nearest_distances(px, py, p=1)
    l1b = nearest_distances(py, px, p=1)
    return ChamferResult(
        cd_l1=float(l1.mean()) + float(l1b.mean()),
        cd_l2=float(l2.mean()) + float(l2b.mean()),
    )


def f1_tau(x, y, tau: float) -> Tuple[float, float, float]:
    """Precision of ``x`` against ``y``, recall of ``y`` against ``x``, and their F1."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    px, py = as_points(x), as_points(y)
    _check(px, py)
    return f1_from_distances(nearest_distances(px, py), nearest_distances(py, px), tau)


def f1_from_distances(d_xy: np.ndarray, d_yx: np.ndarray, tau: float) -> Tuple[float, float, float]:
    precision = float(np.mean(d_xy <= tau))
    recall = float(np.mean(d_yx <= tau))
    return precision, recall, harmonic_mean(precision, recall)


def box_metrics(
    pred_cloud, gt_box: OrientedBox3D, n_rotations: int = 4096, rng: Optional[np.random.Generator] = None
) -> BoxMetrics:
    pts = as_points(pred_cloud)
    _check(pts)
    fitted = fit_min_volume_box(pts, n_rotations, rng)
    _, iou, iog = box_overlap(fitted, gt_box)
    return BoxMetrics(iou, iog, harmonic_mean(iou, iog))


METRIC_COLUMNS = ("instance_id", "cd_l1", "cd_l2", "f1_0.1", "f1_0.3", "f1_0.5", "box_iou", "box_iog", "box_f1")


@dataclass
class MetricRow:
    instance_id: str
    cd_l1: float
    cd_l2: float
    f1: Tuple[float, ...]
    box_iou: float
    box_iog: float
    box_f1: float

    def values(self) -> List[float]:
        return [self.cd_l1, self.cd_l2, *self.f1, self.box_iou, self.box_iog, self.box_f1]


@dataclass
class MetricReport:
    taus: Tuple[float, ...]
    rows: List[MetricRow] = field(default_factory=list)

    def aggregate(self) -> Optional[MetricRow]:
        """Unweighted mean over instances; ``None`` for an empty report."""
        if not self.rows:
            return None
        vals = np.array([r.values() for r in self.rows]).mean(axis=0)
        k = len(self.taus)
        return MetricRow("mean", vals[0], vals[1], tuple(vals[2 : 2 + k]), *vals[2 + k :])

    def columns(self) -> Tuple[str, ...]:
        return ("instance_id", "cd_l1", "cd_l2", *(f"f1_{t:g}" for t in self.taus), "box_iou", "box_iog", "box_f1")

    def write(self, stream: IO[str], sep: str = "\t") -> None:
        stream.write(sep.join(self.columns()) + "\n")
        rows = list(self.rows)
        agg = self.aggregate()
        if agg is not None:
            rows.append(agg)
        for r in rows:
            stream.write(sep.join([r.instance_id, *(f"{v:.6f}" for v in r.values())]) + "\n")


def instance_rng(seed: int, index: int) -> np.random.Generator:
    """Per-instance random stream used for ground-truth sampling and box fitting."""
    return np.random.default_rng([seed, index])


def ground_truth_cloud(mesh: TriangleMesh, seed: int, index: int, n_points: int = DEFAULT_POINTS) -> PointCloud:
    return sample_mesh_surface(mesh, n_points, instance_rng(seed, index))


def evaluate_instance(
    pred: PointCloud,
    gt_cloud: PointCloud,
    gt_box: OrientedBox3D,
    instance_id: str = "0",
    taus: Sequence[float] = DEFAULT_TAUS,
    n_rotations: int = 4096,
    rng: Optional[np.random.Generator] = None,
) -> MetricRow:
    _check(pred.points, gt_cloud.points)
    s = normalization_scale(gt_box)
    px, py = pred.points * s, gt_cloud.points * s
    d_xy = nearest_distances(px, py)
    d_yx = nearest_distances(py, px)
    l1 = nearest_distances(px, py, p=1).mean() + nearest_distances(py, px, p=1).mean()
    l2 = (d_xy**2).mean() + (d_yx**2).mean()
    f1s = tuple(f1_from_distances(d_xy, d_yx, t)[2] for t in taus)
    bm = box_metrics(pred, gt_box, n_rotations, rng)
    return MetricRow(instance_id, float(l1), float(l2), f1s, bm.iou, bm.iog, bm.f1)


def evaluate_scene(
    predictions: Sequence[PointCloud],
    gt_meshes: Sequence[TriangleMesh],
    gt_boxes: Sequence[OrientedBox3D],
    *,
    instance_ids: Optional[Sequence[str]] = None,
    taus: Sequence[float] = DEFAULT_TAUS,
    n_points: int = DEFAULT_POINTS,
    n_rotations: int = 4096,
    seed: int = 0,
) -> MetricReport:
    """Per-instance metric rows; ground-truth clouds come from ``ground_truth_cloud``."""
    if not (len(predictions) == len(gt_meshes) == len(gt_boxes)):
        raise CountMismatch(
            f"{len(predictions)} predictions vs {len(gt_meshes)} meshes vs {len(gt_boxes)} boxes"
        )
    ids = [str(i) for i in range(len(predictions))] if instance_ids is None else list(instance_ids)
    report = MetricReport(tuple(taus))
    for i, (pred, mesh, box) in enumerate(zip(predictions, gt_meshes, gt_boxes)):
        gt = ground_truth_cloud(mesh, seed, i, n_points)
        box_rng = np.random.default_rng([seed, i, 1])
        report.rows.append(evaluate_instance(pred, gt, box, ids[i], taus, n_rotations, box_rng))
    return report

import time

import numpy as np
import pytest

from densepack.boxes import OrientedBox3D, box_overlap, fit_min_volume_box, intersection_volume, polytope_volume
from densepack.errors import EmptyCloud
from densepack.geometry import PointCloud, Pose, Rotation, sample_uniform_rotation

CORNERS_123 = np.array([[x, y, z] for x in (0, 1) for y in (0, 2) for z in (0, 3)], float)


def unit_box(center=(0, 0, 0), rot=None, dims=(1, 1, 1)):
    return OrientedBox3D(Pose(rot or Rotation.identity(), tuple(center)), tuple(dims))


def random_box(rng, spread=0.6):
    return OrientedBox3D(
        Pose(sample_uniform_rotation(rng), tuple(rng.uniform(-spread, spread, 3))), tuple(rng.uniform(0.3, 1.5, 3))
    )


def mc_intersection(a, b, n, rng):
    # sample inside a's local frame box, count points also inside b
    local = (rng.random((n, 3)) - 0.5) * np.asarray(a.dimensions)
    pts = a.pose.apply(local)
    return a.volume * b.contains(pts).mean()


def test_single_point_box_is_clamped():
    b = fit_min_volume_box(PointCloud(np.array([[1.0, 2.0, 3.0]])), 64, np.random.default_rng(0))
    assert b.dimensions == pytest.approx((1e-3, 1e-3, 1e-3))
    assert np.allclose(b.center, [1, 2, 3])


def test_empty_cloud_rejected():
    with pytest.raises(EmptyCloud):
        fit_min_volume_box(PointCloud(np.zeros((0, 3))), 16, np.random.default_rng(0))


def test_fit_encloses_all_points(rng):
    pts = rng.normal(size=(500, 3)) * [1, 2, 0.5]
    b = fit_min_volume_box(pts, 512, rng)
    assert np.all(b.contains(pts, slack=1e-9))


def test_fit_corner_cloud_volume():
    b = fit_min_volume_box(CORNERS_123, 4096, np.random.default_rng(0))
    assert 6.0 - 1e-9 <= b.volume <= 6.3


def test_fit_rotation_invariance():
    rng = np.random.default_rng(7)
    for _ in range(5):
        r = sample_uniform_rotation(rng)
        b = fit_min_volume_box(r.apply(CORNERS_123), 4096, rng)
        assert np.allclose(sorted(b.dimensions), (1, 2, 3), rtol=0.03)


def test_fit_is_deterministic():
    a = fit_min_volume_box(CORNERS_123, 4096, np.random.default_rng(5))
    b = fit_min_volume_box(CORNERS_123, 4096, np.random.default_rng(5))
    assert a.dimensions == b.dimensions and a.pose.as_matrix().tolist() == b.pose.as_matrix().tolist()


def test_fit_runtime():
    t = time.perf_counter()
    fit_min_volume_box(np.random.default_rng(0).normal(size=(16384, 3)), 4096, np.random.default_rng(0))
    assert time.perf_counter() - t < 1.0


def test_overlap_identical():
    inter, iou, iog = box_overlap(unit_box(), unit_box())
    assert (inter, iou, iog) == pytest.approx((1, 1, 1), abs=1e-9)


def test_overlap_half_offset():
    inter, iou, iog = box_overlap(unit_box((0.5, 0, 0)), unit_box())
    assert inter == pytest.approx(0.5, abs=1e-9)
    assert iou == pytest.approx(1 / 3, abs=1e-9)
    assert iog == pytest.approx(0.5, abs=1e-9)


def test_disjoint_and_nested():
    assert box_overlap(unit_box((2, 0, 0)), unit_box())[0] == 0.0
    inner = unit_box(dims=(0.5, 0.5, 0.5), rot=Rotation.from_yaw(0.3))
    inter, iou, iog = box_overlap(inner, unit_box())
    assert inter == pytest.approx(0.125, abs=1e-12)
    assert iou == pytest.approx(0.125, abs=1e-12)


def test_intersection_symmetric(rng):
    for _ in range(30):
        a, b = random_box(rng), random_box(rng)
        assert intersection_volume(a, b) == pytest.approx(intersection_volume(b, a), abs=1e-12)


def test_intersection_bounded_by_volumes(rng):
    for _ in range(30):
        a, b = random_box(rng), random_box(rng)
        v = intersection_volume(a, b)
        assert -1e-12 <= v <= min(a.volume, b.volume) + 1e-12


def test_rotated_self_overlap():
    r = Rotation.from_axis_angle((0, 0, 1), np.pi / 4)
    inter, _, _ = box_overlap(unit_box(rot=r), unit_box())
    # regular octagon prism: area of square intersected with its 45-degree copy
    assert inter == pytest.approx(2 * (np.sqrt(2) - 1), rel=1e-12)


def test_box_faces_give_box_volume():
    b = unit_box(dims=(1, 2, 3), rot=Rotation.from_axis_angle((1, 1, 0), 0.7))
    assert polytope_volume(b.faces()) == pytest.approx(6.0, rel=1e-12)


@pytest.mark.slow
def test_overlap_matches_monte_carlo():
    rng = np.random.default_rng(11)
    for _ in range(10):
        a, b = random_box(rng), random_box(rng)
        exact = intersection_volume(a, b)
        est = mc_intersection(a, b, 1_000_000, rng)
        if exact > 0.02:
            assert abs(est - exact) / exact < 0.01

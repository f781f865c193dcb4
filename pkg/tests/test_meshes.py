import numpy as np
import pytest

from densepack.geometry import TriangleMesh
from densepack.meshes import (
    box_mesh,
    cylinder_mesh,
    first_hit,
    lshape_mesh,
    merge_meshes,
    points_inside,
)


@pytest.mark.parametrize(
    "mesh, volume",
    [
        (box_mesh((1, 2, 3)), 6.0),
        (lshape_mesh(2.0, 3.0, 0.5, 1.0), (2.0 * 0.5 + 2.5 * 0.5) * 1.0),
        (cylinder_mesh(1.0, 2.0, segments=64), 0.5 * 64 * np.sin(2 * np.pi / 64) * 2.0),
    ],
)
def test_primitives_watertight_with_analytic_volume(mesh, volume):
    assert mesh.is_closed()
    assert mesh.euler_characteristic() == 2
    assert mesh.signed_volume() == pytest.approx(volume, rel=1e-12)


def test_points_inside_matches_box_test(rng):
    m = box_mesh((1.0, 2.0, 0.5), (0.2, -0.1, 0.3))
    pts = rng.uniform(-1.5, 1.5, (5000, 3))
    inside, ambiguous = points_inside(pts, m)
    truth = np.all(np.abs(pts - [0.2, -0.1, 0.3]) < [0.5, 1.0, 0.25], axis=1)
    assert not ambiguous.any()
    assert np.array_equal(inside, truth)


def test_points_inside_lshape_concavity():
    m = lshape_mesh(1.0, 1.0, 0.3, 1.0)
    pts = np.array([[0.1, 0.9, 0.5], [0.9, 0.1, 0.5], [0.7, 0.7, 0.5], [0.5, 0.5, 1.5]])
    inside, _ = points_inside(pts, m)
    assert inside.tolist() == [True, True, False, False]


def test_first_hit_distance():
    m = box_mesh((1, 1, 1), (0, 0, 3))
    d = first_hit(np.zeros((3, 3)), np.array([[0, 0, 1], [0, 0, -1], [0.1, 0, 1]]), m)
    assert d[0] == pytest.approx(2.5)
    assert np.isinf(d[1])
    assert d[2] == pytest.approx(2.5)


def test_merge_preserves_volume():
    m = merge_meshes([box_mesh((1, 1, 1)), box_mesh((1, 1, 1), (3, 0, 0))])
    assert m.signed_volume() == pytest.approx(2.0)


def test_degenerate_triangles_dropped():
    m = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]], float), np.array([[0, 1, 2], [0, 1, 3]]))
    assert len(m.triangles) == 1

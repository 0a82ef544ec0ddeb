import numpy as np
import pytest

from airmosaic.kdtree import KdTree2, brute_force_nearest, brute_force_radius


def test_rejects_empty():
    with pytest.raises(ValueError):
        KdTree2(np.empty((0, 2)))


def test_single_point():
    t = KdTree2(np.array([[1.0, 2.0]]))
    idx, d = t.nearest((0.0, 2.0))
    assert idx == 0 and d == pytest.approx(1.0)


def test_nearest_matches_brute_force():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 100, size=(2000, 2))
    tree = KdTree2(pts)
    queries = rng.uniform(-10, 110, size=(2000, 2))
    for q in queries:
        i_t, d_t = tree.nearest(q)
        i_b, d_b = brute_force_nearest(pts, q)
        assert i_t == i_b
        assert abs(d_t - d_b) < 1e-12


def test_nearest_excluding_self():
    pts = np.array([[0.0, 0.0], [3.0, 0.0], [10.0, 0.0]])
    tree = KdTree2(pts)
    idx, d = tree.nearest(pts[0], exclude=0)
    assert idx == 1 and d == pytest.approx(3.0)


def test_radius_matches_brute_force():
    rng = np.random.default_rng(1)
    pts = rng.uniform(0, 50, size=(1500, 2))
    tree = KdTree2(pts)
    for q in rng.uniform(0, 50, size=(300, 2)):
        r = rng.uniform(0.5, 8.0)
        i_t, d_t = tree.radius(q, r)
        i_b, d_b = brute_force_radius(pts, q, r)
        np.testing.assert_array_equal(i_t, i_b)
        np.testing.assert_allclose(d_t, d_b, atol=1e-12)


def test_radius_cap_keeps_nearest():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    tree = KdTree2(pts)
    idx, dist = tree.radius((0.0, 0.0), 10.0, cap=2)
    np.testing.assert_array_equal(idx, [0, 1])
    np.testing.assert_allclose(dist, [0.0, 1.0])


def test_radius_boundary_inclusive():
    pts = np.array([[0.0, 0.0], [2.0, 0.0]])
    tree = KdTree2(pts)
    idx, _ = tree.radius((0.0, 0.0), 2.0)
    assert list(idx) == [0, 1]


def test_duplicate_points():
    pts = np.array([[1.0, 1.0], [1.0, 1.0], [5.0, 5.0]])
    tree = KdTree2(pts)
    idx, d = tree.nearest((1.0, 1.0))
    assert idx == 0  # ties resolve to the lowest index, like argmin
    assert d == 0.0
    ridx, _ = tree.radius((1.0, 1.0), 0.5)
    assert list(ridx) == [0, 1]


def test_clustered_distribution():
    rng = np.random.default_rng(2)
    centers = rng.uniform(0, 100, size=(10, 2))
    pts = np.concatenate([c + rng.normal(0, 0.3, size=(100, 2)) for c in centers])
    tree = KdTree2(pts)
    for q in rng.uniform(0, 100, size=(200, 2)):
        i_t, d_t = tree.nearest(q)
        i_b, d_b = brute_force_nearest(pts, q)
        assert i_t == i_b and abs(d_t - d_b) < 1e-12

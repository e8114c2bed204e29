import numpy as np
import pytest

from sceneflow import _backend
from sceneflow.maxflow import BinaryMrf, GraphCutSolver, energy

pytestmark = pytest.mark.skipif(_backend.get_impl("python") is _backend.get_impl(), reason="compiled core not built")

PY = _backend.get_impl("python")
CY = _backend.get_impl()


def test_backend_selection():
    assert _backend.BACKEND == "cython"
    with pytest.raises(ValueError):
        _backend.get_impl("fortran")


def test_ncc_points_equal(rng):
    a = rng.random((30, 40)).astype(np.float32)
    b = rng.random((30, 40)).astype(np.float32)
    xs, ys = rng.integers(0, 40, 500), rng.integers(0, 30, 500)
    qx, qy = rng.uniform(-3, 43, 500), rng.uniform(-3, 33, 500)
    p = _backend.ncc_points(a, b, xs, ys, qx, qy, impl=PY)
    c = _backend.ncc_points(a, b, xs, ys, qx, qy, impl=CY)
    np.testing.assert_array_equal(np.isnan(p), np.isnan(c))
    np.testing.assert_allclose(p[~np.isnan(p)], c[~np.isnan(c)], atol=1e-12)


def test_shift_volume_and_box_sums_equal(rng):
    a = rng.random((20, 30))
    b = rng.random((20, 30))
    p = _backend.ncc_shift_volume(a, b, -2, 6, impl=PY)
    c = _backend.ncc_shift_volume(a, b, -2, 6, impl=CY)
    np.testing.assert_array_equal(np.isnan(p), np.isnan(c))
    np.testing.assert_array_equal(p[~np.isnan(p)], c[~np.isnan(c)])
    pad = np.ascontiguousarray(rng.random((24, 34)))
    o1, o2 = np.empty((20, 30)), np.empty((20, 30))
    PY.box_sums(pad, o1)
    CY.box_sums(pad, o2)
    np.testing.assert_array_equal(o1, o2)


def test_sgm_aggregate_equal(rng):
    cost = rng.integers(0, 1024, (15, 20, 12)).astype(np.int32)
    valid = rng.random((15, 20)) < 0.9
    dirs = np.array([(0, 1), (0, -1), (1, 0), (-1, 0), (1, 1), (-1, -1), (1, -1), (-1, 1)], np.int32)
    p1 = rng.integers(50, 300, 8).astype(np.int32)
    p2 = (p1[:, None, None] * rng.uniform(1, 3, (8, 15, 20))).astype(np.int32)  # per-pixel P2
    for na, nb in ((12, 1), (4, 3)):
        s1, m1 = _backend.sgm_aggregate(cost, valid, na, nb, dirs, p1, p2, impl=PY)
        s2, m2 = _backend.sgm_aggregate(cost, valid, na, nb, dirs, p1, p2, impl=CY)
        np.testing.assert_array_equal(s1, s2)
        np.testing.assert_array_equal(m1, m2)


def test_maxflow_equal(rng):
    for _ in range(30):
        m = BinaryMrf(rng.normal(size=(9, 11)), rng.normal(size=(9, 11)), rng.random((4, 9, 11)))
        g = GraphCutSolver(m)
        tr = np.rint((m.unary0 - m.unary1).ravel() * 2**24).astype(np.int64)
        f1, s1 = _backend.maxflow(tr, g.tail, g.head, g.cap, impl=PY)
        f2, s2 = _backend.maxflow(tr, g.tail, g.head, g.cap, impl=CY)
        assert f1 == f2
        # cuts may differ on ties, their energies may not
        assert energy(m, s1.reshape(9, 11)) == energy(m, s2.reshape(9, 11))


def test_geodesic_kernels_equal(rng):
    d = rng.random((25, 30)) * 5
    np.testing.assert_array_equal(_backend.geodesic_distance(d, 3, 28, 6, impl=PY),
                                  _backend.geodesic_distance(d, 3, 28, 6, impl=CY))
    fu, fv = rng.normal(size=(25, 30)), rng.normal(size=(25, 30))
    valid = rng.random((25, 30)) < 0.5
    ys, xs = rng.integers(0, 25, 40), rng.integers(0, 30, 40)
    a = _backend.geodesic_wmedian(fu, fv, valid, d, ys, xs, 5, 2.0, impl=PY)
    b = _backend.geodesic_wmedian(fu, fv, valid, d, ys, xs, 5, 2.0, impl=CY)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_threads_do_not_change_results(rng):
    a = rng.random((30, 40)).astype(np.float32)
    xs, ys = rng.integers(0, 40, 1000), rng.integers(0, 30, 1000)
    qx, qy = rng.uniform(0, 39, 1000), rng.uniform(0, 29, 1000)
    np.testing.assert_array_equal(_backend.ncc_points(a, a, xs, ys, qx, qy, threads=1),
                                  _backend.ncc_points(a, a, xs, ys, qx, qy, threads=4))
    np.testing.assert_array_equal(_backend.ncc_shift_volume(a, a, 0, 9, threads=1),
                                  _backend.ncc_shift_volume(a, a, 0, 9, threads=3))

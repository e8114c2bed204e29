import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sceneflow.maxflow import OFFSETS, BinaryMrf, GraphCutSolver, energy, min_cut, quantize, resolve


def _oracle_energy(u0, u1, w, labels):
    # independent energy: explicit loop over 8-neighbour edges
    h, wd = labels.shape
    e = 0.0
    for y in range(h):
        for x in range(wd):
            e += u1[y, x] if labels[y, x] else u0[y, x]
            for k, (dy, dx) in enumerate(OFFSETS):
                yy, xx = y + dy, x + dx
                if 0 <= yy < h and 0 <= xx < wd and labels[y, x] != labels[yy, xx]:
                    e += w[k, y, x]
    return e


def random_mrf(rng, max_free=16, fixed_frac=0.2):
    while True:
        h, w = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        fixed = np.where(rng.random((h, w)) < fixed_frac, rng.integers(0, 2, (h, w)), -1).astype(np.int8)
        if (fixed < 0).sum() <= max_free:
            break
    u0 = rng.normal(size=(h, w))
    u1 = rng.normal(size=(h, w))
    wts = rng.random((4, h, w)) * rng.random() * 2
    return BinaryMrf(u0, u1, wts, fixed)


def brute_force(mrf):
    fixed = mrf.fixed
    free = np.flatnonzero(fixed.ravel() < 0)
    best = np.inf
    for bits in itertools.product([False, True], repeat=len(free)):
        lab = (fixed == 1).ravel().copy()
        lab[free] = bits
        best = min(best, energy(mrf, lab.reshape(fixed.shape)))
    return best


def test_energy_matches_loop_oracle(rng):
    for _ in range(20):
        m = random_mrf(rng)
        lab = rng.random(m.shape) < 0.5
        assert energy(m, lab) == pytest.approx(_oracle_energy(m.unary0, m.unary1, m.weights, lab), abs=1e-9)


def test_min_cut_equals_exhaustive(rng):
    for _ in range(100):
        m = random_mrf(rng)
        lab, e = min_cut(m)
        assert e == brute_force(m)
        assert np.all(lab[m.fixed == 1]) and not np.any(lab[m.fixed == 0])


def test_zero_weights_pick_smaller_unary(rng):
    u0, u1 = rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
    lab, _ = min_cut(BinaryMrf(u0, u1, np.zeros((4, 5, 6))))
    np.testing.assert_array_equal(lab, quantize(u1) < quantize(u0))


def test_three_by_three_potts(rng):
    for _ in range(10):
        m = BinaryMrf(rng.normal(size=(3, 3)), rng.normal(size=(3, 3)), np.ones((4, 3, 3)))
        assert min_cut(m)[1] == brute_force(m)


def test_hard_background_stays():
    u0 = np.zeros((3, 3))
    u1 = np.full((3, 3), -5.0)
    fixed = np.full((3, 3), -1, np.int8)
    fixed[1, 1] = 0
    lab, _ = min_cut(BinaryMrf(u0, u1, np.ones((4, 3, 3)), fixed))
    assert not lab[1, 1] and lab.sum() == 8


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        BinaryMrf(np.zeros((2, 2)), np.zeros((2, 2)), -np.ones((4, 2, 2)))
    with pytest.raises(ValueError):
        BinaryMrf(np.zeros((2, 2)), np.zeros((2, 2)), np.ones((3, 2, 2)))


def test_resolve_equals_fresh_solve(rng):
    for _ in range(100):
        u0, u1 = rng.normal(size=(8, 8)), rng.normal(size=(8, 8))
        w = rng.random((4, 8, 8))
        solver = GraphCutSolver(BinaryMrf(u0, u1, w))
        solver.min_cut()
        v0, v1 = rng.normal(size=(8, 8)), rng.normal(size=(8, 8))
        lab, e = resolve(solver, v0, v1)
        lab2, e2 = min_cut(BinaryMrf(v0, v1, w))
        np.testing.assert_array_equal(lab, lab2)
        assert e == e2


def test_resolve_unchanged_and_single_flip(rng):
    u0, u1 = rng.normal(size=(6, 6)), rng.normal(size=(6, 6))
    solver = GraphCutSolver(BinaryMrf(u0, u1, np.zeros((4, 6, 6))))
    lab, _ = solver.min_cut()
    np.testing.assert_array_equal(solver.resolve(u0, u1)[0], lab)
    v0, v1 = u0.copy(), u1.copy()
    v0[2, 3], v1[2, 3] = u1[2, 3], u0[2, 3]
    lab2, _ = solver.resolve(v0, v1)
    diff = lab2 != lab
    assert diff.sum() <= 1 and (diff.sum() == 0 or diff[2, 3])
    with pytest.raises(ValueError):
        solver.resolve(np.zeros((2, 2)), np.zeros((2, 2)))


@given(st.integers(0, 2**31 - 1), st.floats(0.0, 3.0))
def test_raising_foreground_cost_never_grows_foreground(seed, delta):
    rng = np.random.default_rng(seed)
    u0, u1 = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    w = rng.random((4, 4, 5))
    a, _ = min_cut(BinaryMrf(u0, u1, w))
    b, _ = min_cut(BinaryMrf(u0, u1 + delta, w))
    assert b.sum() <= a.sum()


def test_quantized_energies_are_exact(rng):
    m = BinaryMrf(rng.normal(size=(30, 30)), rng.normal(size=(30, 30)), rng.random((4, 30, 30)))
    lab = rng.random((30, 30)) < 0.5
    # any summation order gives the same value on the quantization grid
    e1 = energy(m, lab)
    terms = np.concatenate([np.where(lab, m.unary1, m.unary0).ravel()[::-1]]
                           + [m.weights[k][p][(lab[p] != lab[q])] for k, (p, q) in enumerate(_slices(lab.shape))])
    assert e1 == float(np.sum(terms[::-1]))


def _slices(shape):
    from sceneflow.maxflow import edge_slices

    return [edge_slices(shape, k) for k in range(4)]

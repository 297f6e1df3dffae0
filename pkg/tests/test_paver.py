import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reachstay.interval import Box
from reachstay.paver import (INSIDE, OUTSIDE, PARTIAL, CoverageIndex, Paver, covers, intersect, paver_covers,
                             subtract, subtract_box)


def B(lo, hi):
    return Box.from_bounds(lo, hi)


def test_seam_is_covered():
    p = Paver.from_boxes([B([0, 0], [1, 1]), B([1, 0], [2, 1])])
    assert paver_covers(p, B([0.5, 0.2], [1.5, 0.8])) == INSIDE
    assert paver_covers(p, B([0.5, 0.2], [2.5, 0.8])) == PARTIAL
    assert paver_covers(p, B([3, 3], [4, 4])) == OUTSIDE


def test_l_shape_hull_would_be_wrong():
    p = Paver.from_boxes([B([0, 0], [2, 1]), B([0, 1], [1, 2])])
    assert paver_covers(p, B([1.2, 1.2], [1.8, 1.8])) == OUTSIDE
    assert paver_covers(p, B([0.5, 0.5], [1.5, 1.5])) == PARTIAL


def test_touching_face_is_partial():
    p = Paver.from_boxes([B([0, 0], [1, 1])])
    assert paver_covers(p, B([1, 0], [2, 1])) == PARTIAL
    assert paver_covers(p, B([1.5, 0], [2, 1])) == OUTSIDE


def test_empty_paver():
    p = Paver.empty(2)
    assert paver_covers(p, B([0, 0], [1, 1])) == OUTSIDE
    assert len(Paver.from_boxes([], n=2)) == 0


def test_infinite_query_never_inside():
    p = Paver.from_boxes([B([-10, -10], [10, 10])])
    idx = CoverageIndex(p)
    res = idx.classify(np.array([[-np.inf, 0.0]]), np.array([[0.0, 1.0]]))
    assert res[0] == PARTIAL


def _oracle(boxes, qlo, qhi):
    axes = [np.arange(qlo[d], qhi[d] + 1e-9, 0.25) for d in range(len(qlo))]
    pts = np.array(list(itertools.product(*axes)))
    cov = np.zeros(len(pts), dtype=bool)
    for lo, hi in boxes:
        cov |= np.all((pts >= lo) & (pts <= hi), axis=1)
    if cov.all():
        return INSIDE
    if not cov.any():
        return OUTSIDE
    return PARTIAL


@st.composite
def grid_boxes(draw, n=2, k=6):
    out = []
    for _ in range(draw(st.integers(1, k))):
        lo = [draw(st.integers(0, 6)) for _ in range(n)]
        hi = [a + draw(st.integers(1, 3)) for a in lo]
        out.append((np.array(lo, float), np.array(hi, float)))
    return out


@st.composite
def half_queries(draw, n=2):
    lo = [draw(st.integers(-2, 16)) / 2 for _ in range(n)]
    hi = [a + draw(st.integers(1, 6)) / 2 for a in lo]
    return np.array(lo), np.array(hi)


@settings(max_examples=300, deadline=None)
@given(grid_boxes(), st.lists(half_queries(), min_size=1, max_size=8))
def test_classify_matches_lattice_oracle(boxes, queries):
    p = Paver(np.array([b[0] for b in boxes]), np.array([b[1] for b in boxes]))
    idx = CoverageIndex(p)
    qlo = np.array([q[0] for q in queries])
    qhi = np.array([q[1] for q in queries])
    got = idx.classify(qlo, qhi)
    want = [_oracle(boxes, a, b) for a, b in queries]
    assert got.tolist() == want


@settings(max_examples=100, deadline=None)
@given(grid_boxes(n=3, k=4), st.lists(half_queries(n=3), min_size=1, max_size=4))
def test_classify_matches_oracle_3d(boxes, queries):
    p = Paver(np.array([b[0] for b in boxes]), np.array([b[1] for b in boxes]))
    got = CoverageIndex(p).classify(np.array([q[0] for q in queries]), np.array([q[1] for q in queries]))
    assert got.tolist() == [_oracle(boxes, a, b) for a, b in queries]


@settings(max_examples=200, deadline=None)
@given(grid_boxes(), half_queries())
def test_subtract_box_is_exact_difference(boxes, q):
    p = Paver(np.array([b[0] for b in boxes]), np.array([b[1] for b in boxes]))
    d = subtract_box(p, q)
    # pieces stay inside p and have no interior overlap with q
    assert covers(p, d)
    inter = np.all((d.lo < q[1]) & (d.hi > q[0]), axis=1)
    assert not inter.any()
    # p is covered by the difference plus q
    both = Paver.concat([d, Paver(q[0][None], q[1][None])])
    assert covers(both, p)
    assert d.volume() <= p.volume() + 1e-12


def test_subtract_and_intersect_volumes():
    p = Paver.from_boxes([B([0, 0], [4, 4])])
    q = Paver.from_boxes([B([1, 1], [2, 2]), B([3, 0], [5, 1])])
    d = subtract(p, q)
    assert d.volume() == pytest.approx(16 - 1 - 1)
    i = intersect(p, B([3, 3], [6, 6]))
    assert i.volume() == pytest.approx(1.0)
    assert len(intersect(p, B([4, 0], [5, 1]))) == 0


def test_canonical_ignores_order():
    a = Paver.from_boxes([B([0, 0], [1, 1]), B([1, 0], [2, 1])])
    b = Paver.from_boxes([B([1, 0], [2, 1]), B([0, 0], [1, 1])])
    assert a.same_set_as(b) and a.digest() == b.digest()


def test_contains_points():
    p = Paver.from_boxes([B([0, 0], [1, 1])])
    got = p.contains_points(np.array([[0.5, 0.5], [1.0, 1.0], [1.5, 0.5]]))
    assert got.tolist() == [True, True, False]


def test_direct_fallback_agrees_with_grid(monkeypatch):
    rng = np.random.default_rng(1)
    lo = rng.integers(0, 10, (40, 2)).astype(float)
    p = Paver(lo, lo + rng.integers(1, 4, (40, 2)))
    qlo = rng.integers(-4, 24, (500, 2)) / 2
    qhi = qlo + rng.integers(1, 6, (500, 2)) / 2
    grid = CoverageIndex(p).classify(qlo, qhi)
    # small enough to disable the global grid, large enough for the per-query local grids
    monkeypatch.setattr("reachstay.paver.MAX_GRID_CELLS", 100)
    idx = CoverageIndex(p)
    assert not idx.grid
    assert np.array_equal(idx.classify(qlo, qhi), grid)

import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reachstay import interval as ia
from reachstay.interval import EMPTY, IA, Box, Interval, apply, bisect_arrays

mpmath.mp.dps = 60


def random_boxes(rng, k, lo=-5.0, hi=5.0, wmax=2.0):
    a = rng.uniform(lo, hi, k)
    w = rng.uniform(0, wmax, k) * (rng.random(k) < 0.95)
    return a, a + w


def inside(rng, a, b):
    return a + rng.random(a.shape) * (b - a)


def fr(x):
    return Fraction(float(x))


def test_examples():
    assert Interval(1, 2) + Interval(3, 4) == Interval(4, 6)
    r = Interval(-1, 2) * Interval(-3, 1)
    assert r == Interval(-6, 3)
    s = apply("sin", Interval(0, 0))
    assert s.lo <= 0 <= s.hi and s.width < 1e-300
    assert (Interval(1, 2) / Interval(-1, 1)) == Interval(-math.inf, math.inf)
    assert (EMPTY + Interval(0, 1)).is_empty


ARITH = {
    "add": (lambda x, y: x + y, lambda p, q: p + q),
    "sub": (lambda x, y: x - y, lambda p, q: p - q),
    "mul": (lambda x, y: x * y, lambda p, q: p * q),
    "div": (lambda x, y: x / y, lambda p, q: p / q),
}


@pytest.mark.parametrize("op", sorted(ARITH))
def test_arith_containment_exact(op):
    rng = np.random.default_rng(hash(op) % 2**32)
    f_ia, f_ex = ARITH[op]
    a1, b1 = random_boxes(rng, 10_000)
    a2, b2 = random_boxes(rng, 10_000)
    if op == "div":
        # keep zero out of the divisor so the result is finite
        a2, b2 = np.abs(a2) + 0.1, np.abs(a2) + 0.1 + (b2 - a2)
    r = f_ia(IA(a1, b1), IA(a2, b2))
    x, y = inside(rng, a1, b1), inside(rng, a2, b2)
    for i in range(0, 10_000, 7):
        v = f_ex(fr(x[i]), fr(y[i]))
        assert fr(r.lo[i]) <= v <= fr(r.hi[i])
    # endpoints themselves, checked exactly on every sample
    for ea, eb in ((a1, a2), (a1, b2), (b1, a2), (b1, b2)):
        for i in range(0, 10_000, 13):
            v = f_ex(fr(ea[i]), fr(eb[i]))
            assert fr(r.lo[i]) <= v <= fr(r.hi[i])


def test_division_by_zero_straddling_is_whole_line():
    r = IA(1.0, 2.0) / IA(-0.5, 0.5)
    assert r.lo == -math.inf and r.hi == math.inf


UNARY = {
    "sin": (ia.sin, mpmath.sin, (-20, 20)),
    "cos": (ia.cos, mpmath.cos, (-20, 20)),
    "tan": (ia.tan, mpmath.tan, (-1.5, 1.5)),
    "atan": (ia.atan, mpmath.atan, (-50, 50)),
    "exp": (ia.exp, mpmath.exp, (-30, 30)),
    "sqrt": (ia.sqrt, mpmath.sqrt, (0, 100)),
    "abs": (ia.iabs, abs, (-10, 10)),
    "mod2pi": (ia.mod2pi, lambda v: v - 2 * mpmath.pi * mpmath.floor(v / (2 * mpmath.pi)), (-30, 30)),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_containment(name):
    f, ref, (lo, hi) = UNARY[name]
    rng = np.random.default_rng(len(name))
    a, b = random_boxes(rng, 10_000, lo, hi, wmax=1.0)
    b = np.minimum(b, hi)
    r = f(IA(a, b))
    x = inside(rng, a, b)
    for i in range(10_000):
        v = ref(mpmath.mpf(float(x[i])))
        assert mpmath.mpf(float(r.lo[i])) <= v <= mpmath.mpf(float(r.hi[i])), (name, a[i], b[i], x[i])


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_power_containment(n):
    rng = np.random.default_rng(n)
    a, b = random_boxes(rng, 10_000, -3, 3)
    r = ia.power(IA(a, b), n)
    x = inside(rng, a, b)
    for i in range(0, 10_000, 3):
        v = fr(x[i]) ** n
        assert fr(r.lo[i]) <= v <= fr(r.hi[i])


def test_power_even_straddle():
    r = ia.power(IA(-2.0, 1.0), 2)
    assert r.lo == 0.0 and r.hi == 4.0


@pytest.mark.parametrize("name", ["sin", "cos", "atan", "exp", "abs", "sqrt"])
def test_convergence_on_shrinking_boxes(name):
    """Width of the image goes to zero along nested boxes shrinking to a point."""
    f, _, (lo, hi) = UNARY[name]
    rng = np.random.default_rng(7)
    c = rng.uniform(max(lo, 0.1) if name == "sqrt" else lo, hi, 100)
    prev = None
    for k in range(1, 40):
        r = 2.0 ** -k
        img = f(IA(c - r, c + r))
        w = img.hi - img.lo
        if prev is not None:
            assert np.all(w <= prev * 1.0000001 + 1e-300)
        prev = w
    scale = 1.0 + np.maximum(np.abs(img.lo), np.abs(img.hi))
    assert np.all(prev / scale < 1e-9)


unit = st.floats(-100, 100, allow_nan=False)


@st.composite
def nested(draw):
    a = draw(unit)
    b = a + draw(st.floats(0, 10))
    s = a + (b - a) * draw(st.floats(0, 1))
    t = s + (b - s) * draw(st.floats(0, 1))
    return (a, b), (s, t)


@st.composite
def nested_positive(draw):
    (a, b), (s, t) = draw(nested())
    shift = 0.5 - a
    return (a + shift, b + shift), (s + shift, t + shift)


@settings(max_examples=300, deadline=None)
@given(nested(), nested(), nested_positive(), st.sampled_from(["add", "sub", "mul", "div"]))
def test_monotone_binary(p, q, qpos, op):
    (outer1, inner1) = p
    (outer2, inner2) = qpos if op == "div" else q
    f = ARITH[op][0]
    big = f(IA(*outer1), IA(*outer2))
    small = f(IA(*inner1), IA(*inner2))
    assert big.lo <= small.lo and small.hi <= big.hi


@settings(max_examples=300, deadline=None)
@given(nested(), st.sampled_from(["sin", "cos", "atan", "exp", "abs", "mod2pi"]))
def test_monotone_unary(p, name):
    (outer, inner) = p
    f = UNARY[name][0]
    big = f(IA(*outer))
    small = f(IA(*inner))
    assert big.lo <= small.lo and small.hi <= big.hi


@st.composite
def boxes(draw, n=None):
    n = n or draw(st.integers(1, 4))
    lo = [draw(st.floats(-50, 50)) for _ in range(n)]
    hi = [v + draw(st.floats(0, 20)) for v in lo]
    return Box.from_bounds(lo, hi)


@settings(max_examples=300, deadline=None)
@given(boxes(), st.floats(0, 5))
def test_erode_inflate_adjunction(b, r):
    assert b.subset_of(b.inflate(r).erode(r))
    e = b.erode(r)
    if not e.is_empty:
        assert e.inflate(r).subset_of(b)


@settings(max_examples=300, deadline=None)
@given(boxes())
def test_bisect_partition(b):
    left, right = b.bisect()
    j = b.widest_dim()
    for d in range(len(b)):
        if d != j:
            assert left[d] == b[d] == right[d]
    assert left[j].lo == b[j].lo and right[j].hi == b[j].hi
    assert left[j].hi == right[j].lo
    assert b[j].lo <= left[j].hi <= b[j].hi


def test_bisect_examples():
    l, r = Box.from_bounds([0, 0], [2, 1]).bisect()
    assert l == Box.from_bounds([0, 0], [1, 1]) and r == Box.from_bounds([1, 0], [2, 1])
    l, r = Box.from_bounds([0, 0], [1, 1]).bisect()
    assert l == Box.from_bounds([0, 0], [0.5, 1])
    l, r = Box.from_bounds([0, 0, 0], [1, 4, 2]).bisect()
    assert l == Box.from_bounds([0, 0, 0], [1, 2, 2])
    # halving a subnormal underflows; the split point must stay in the box
    tiny = 5e-324
    l, r = Box.from_bounds([tiny], [tiny]).bisect()
    assert l[0].hi == r[0].lo == tiny
    assert IA(np.array([tiny]), np.array([tiny])).mid()[0] == tiny


def test_bisect_arrays_matches_box_bisect():
    rng = np.random.default_rng(3)
    lo = rng.uniform(-1, 1, (50, 3))
    hi = lo + rng.uniform(0, 1, (50, 3))
    blo, bhi = bisect_arrays(lo, hi)
    for i in range(50):
        l, r = Box.from_bounds(lo[i], hi[i]).bisect()
        assert np.array_equal(blo[2 * i], l.lo) and np.array_equal(bhi[2 * i], l.hi)
        assert np.array_equal(blo[2 * i + 1], r.lo) and np.array_equal(bhi[2 * i + 1], r.hi)


def test_erode_inflate_examples():
    b = Box.from_bounds([0, 0], [4, 2]).erode(0.5)
    assert b == Box.from_bounds([0.5, 0.5], [3.5, 1.5])
    assert Box.from_bounds([0], [1]).erode(0.6).is_empty
    b = Box.from_bounds([0, 0], [1, 1])
    assert b.erode(0) == b
    assert Box.from_bounds([0], [1]).inflate(0.5) == Box.from_bounds([-0.5], [1.5])
    assert b.contains((0.5, 0.5))
    assert not Box.from_bounds([0], [1]).intersects(Box.from_bounds([2], [3]))

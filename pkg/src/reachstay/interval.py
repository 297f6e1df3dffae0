"""Interval arithmetic with directed rounding.

Two layers live here:

* ``IA`` -- an interval *array* (``lo``/``hi`` numpy arrays of any broadcastable
  shape).  Every inclusion function in the package is evaluated through it, so
  thousands of boxes and control values are processed in one numpy call.
* ``Interval`` and ``Box`` -- small immutable scalar types used at API
  boundaries and in tests.

Rounding: ``+ - * /`` are rounded to the correct directed neighbour using
error-free transformations (TwoSum, Dekker's TwoProduct), so exact results stay
exact and inexact ones move outward by one ulp.  Library transcendental
functions are not correctly rounded; their results are padded by a few ulps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

INF = math.inf
_MAX = np.finfo(float).max
_SPLIT = 134217729.0  # 2**27 + 1
_LIB_ULPS = 4  # padding for libm-style functions
_TRIG_SLACK = 1e-10

TWO_PI_LO = float(np.nextafter(math.tau, -INF))
TWO_PI_HI = float(np.nextafter(math.tau, INF))
HALF_PI_HI = float(np.nextafter(math.pi / 2, INF))


def _down(x):
    return np.nextafter(x, -INF)


def _up(x):
    return np.nextafter(x, INF)


def _pad_down(x, k=_LIB_ULPS):
    for _ in range(k):
        x = _down(x)
    return x


def _pad_up(x, k=_LIB_ULPS):
    for _ in range(k):
        x = _up(x)
    return x


# --- error-free transformations -------------------------------------------

def _add_dir(a, b):
    """Return (RD(a+b), RU(a+b))."""
    with np.errstate(invalid="ignore", over="ignore"):
        s = a + b
        bb = s - a
        e = (a - (s - bb)) + (b - bb)
        lo = np.where(e < 0, _down(s), s)
        hi = np.where(e > 0, _up(s), s)
        ovf = np.isinf(s) & np.isfinite(a) & np.isfinite(b)
        if np.any(ovf):
            lo = np.where(ovf & (s > 0), _MAX, lo)
            hi = np.where(ovf & (s < 0), -_MAX, hi)
    return lo, hi


def _add_side(a, b, up: bool):
    """RU(a+b) if up else RD(a+b), rounding only the lanes that need it."""
    with np.errstate(invalid="ignore", over="ignore"):
        s = a + b
        bb = s - a
        e = (a - (s - bb)) + (b - bb)
        out = np.where(e > 0, _up(s), s) if up else np.where(e < 0, _down(s), s)
        ovf = np.isinf(s) & np.isfinite(a) & np.isfinite(b)
        if np.any(ovf):
            out = np.where(ovf & ((s < 0) if up else (s > 0)), -_MAX if up else _MAX, out)
    return out


def _sub_dir(a, b):
    return _add_dir(a, -np.asarray(b))


def _two_prod(a, b):
    p = a * b
    c = _SPLIT * a
    ah = c - (c - a)
    al = a - ah
    c = _SPLIT * b
    bh = c - (c - b)
    bl = b - bh
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def _mul_dir(a, b):
    """Return (RD(a*b), RU(a*b)) with 0*inf taken as 0."""
    with np.errstate(invalid="ignore", over="ignore", under="ignore"):
        p, e = _two_prod(a, b)
        safe = (np.abs(a) < 1e290) & (np.abs(b) < 1e290) & (np.abs(p) > 1e-290)
        lo = np.where(safe, np.where(e < 0, _down(p), p), _down(p))
        hi = np.where(safe, np.where(e > 0, _up(p), p), _up(p))
        exact = (a == 0) | (b == 0) | np.isinf(a) | np.isinf(b)
        lo = np.where(exact, p, lo)
        hi = np.where(exact, p, hi)
        nan = np.isnan(p)
        if np.any(nan):
            lo = np.where(nan, 0.0, lo)
            hi = np.where(nan, 0.0, hi)
    return lo, hi


def _short(x):
    """True where x has at most 26 significant bits (Veltkamp split is exact)."""
    c = _SPLIT * x
    return ((c - (c - x)) == x) & (np.abs(x) < 1e290)


def _mul_hull(alo, ahi, blo, bhi):
    """Outward hull of the four endpoint products.

    A correctly rounded product lies within half an ulp of the exact one, so
    one nextafter step on an extreme is enough. An extreme is kept as is when
    every product attaining it is exact: a zero or infinite factor, or two
    short factors whose product neither overflows nor underflows.
    """
    with np.errstate(invalid="ignore", over="ignore", under="ignore"):
        a = [np.asarray(v, dtype=float) for v in (alo, ahi)]
        b = [np.asarray(v, dtype=float) for v in (blo, bhi)]
        sa = [_short(v) | (v == 0) | np.isinf(v) for v in a]
        sb = [_short(v) | (v == 0) | np.isinf(v) for v in b]
        p, ok = [], []
        for i in (0, 1):
            for j in (0, 1):
                q = a[i] * b[j]
                zero = (a[i] == 0) | (b[j] == 0)
                q = np.where(np.isnan(q), 0.0, q)  # 0 * inf
                big = np.isinf(q) & ~np.isinf(a[i]) & ~np.isinf(b[j])
                tiny = (np.abs(q) < 1e-290) & ~zero
                p.append(q)
                ok.append(zero | (sa[i] & sb[j] & ~big & ~tiny))
        lo = np.minimum(np.minimum(p[0], p[1]), np.minimum(p[2], p[3]))
        hi = np.maximum(np.maximum(p[0], p[1]), np.maximum(p[2], p[3]))
        move_lo = np.zeros(lo.shape, dtype=bool)
        move_hi = np.zeros(hi.shape, dtype=bool)
        for q, e in zip(p, ok):
            move_lo |= (q == lo) & ~e
            move_hi |= (q == hi) & ~e
        lo = np.where(move_lo, _down(lo), lo)
        hi = np.where(move_hi, _up(hi), hi)
    return lo, hi


def _div_dir(a, b):
    """Return (RD(a/b), RU(a/b)); b must not be zero."""
    with np.errstate(invalid="ignore", over="ignore", under="ignore", divide="ignore"):
        q = a / b
        p, e = _two_prod(q, b)
        r = (a - p) - e
        sgn = np.sign(r) * np.sign(b)
        safe = (
            (np.abs(q) < 1e290) & (np.abs(b) < 1e290) & (np.abs(q) > 1e-290)
            & (np.abs(a) > 1e-290)
        )
        lo = np.where(safe, np.where(sgn < 0, _down(q), q), _down(q))
        hi = np.where(safe, np.where(sgn > 0, _up(q), q), _up(q))
        exact = (a == 0) | np.isinf(a) | np.isinf(b)
        lo = np.where(exact, q, lo)
        hi = np.where(exact, q, hi)
    return lo, hi


def _sanitize(lo, hi):
    if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
        lo = np.where(np.isnan(lo), -INF, lo)
        hi = np.where(np.isnan(hi), INF, hi)
    return lo, hi


def _has_integer(tlo, thi):
    """True where [tlo, thi] (slightly inflated) contains an integer."""
    return np.floor(thi + _TRIG_SLACK) >= np.ceil(tlo - _TRIG_SLACK)


# --- interval arrays --------------------------------------------------------

class IA:
    """Interval array: elementwise intervals ``[lo, hi]`` with broadcasting."""

    __slots__ = ("lo", "hi")
    __array_priority__ = 1000

    def __init__(self, lo, hi=None):
        lo = np.asarray(lo, dtype=float)
        hi = lo if hi is None else np.asarray(hi, dtype=float)
        self.lo = lo
        self.hi = hi

    @staticmethod
    def lift(x) -> "IA":
        return x if isinstance(x, IA) else IA(x)

    @classmethod
    def entire(cls, shape=()) -> "IA":
        return cls(np.full(shape, -INF), np.full(shape, INF))

    @property
    def shape(self):
        return np.broadcast_shapes(self.lo.shape, self.hi.shape)

    def __getitem__(self, idx) -> "IA":
        return IA(self.lo[idx], self.hi[idx])

    def __repr__(self):
        return f"IA(lo={self.lo!r}, hi={self.hi!r})"

    def width(self):
        with np.errstate(invalid="ignore"):
            return self.hi - self.lo

    def mid(self):
        # halving first avoids overflow; the clip undoes underflow on subnormals
        m = np.clip(0.5 * self.lo + 0.5 * self.hi, self.lo, self.hi)
        return np.where(np.isfinite(m), m, 0.0)

    def mag(self):
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    def contains(self, x) -> np.ndarray:
        return (self.lo <= x) & (x <= self.hi)

    def subset_of(self, other: "IA") -> np.ndarray:
        return (other.lo <= self.lo) & (self.hi <= other.hi)

    def hull(self, other: "IA") -> "IA":
        return IA(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    # arithmetic
    def __neg__(self):
        return IA(-self.hi, -self.lo)

    def __pos__(self):
        return self

    def __add__(self, other):
        o = IA.lift(other)
        lo = _add_side(self.lo, o.lo, False)
        hi = _add_side(self.hi, o.hi, True)
        return IA(lo, hi)

    __radd__ = __add__

    def __sub__(self, other):
        o = IA.lift(other)
        lo = _add_side(self.lo, -np.asarray(o.hi), False)
        hi = _add_side(self.hi, -np.asarray(o.lo), True)
        return IA(lo, hi)

    def __rsub__(self, other):
        return IA.lift(other) - self

    def __mul__(self, other):
        o = IA.lift(other)
        return IA(*_mul_hull(self.lo, self.hi, o.lo, o.hi))

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = IA.lift(other)
        zero = (o.lo <= 0) & (o.hi >= 0)
        # keep the divisor away from 0 where it straddles; those lanes are replaced below
        blo = np.where(zero, 1.0, o.lo)
        bhi = np.where(zero, 1.0, o.hi)
        l1, h1 = _div_dir(self.lo, blo)
        l2, h2 = _div_dir(self.lo, bhi)
        l3, h3 = _div_dir(self.hi, blo)
        l4, h4 = _div_dir(self.hi, bhi)
        lo = np.minimum(np.minimum(l1, l2), np.minimum(l3, l4))
        hi = np.maximum(np.maximum(h1, h2), np.maximum(h3, h4))
        lo = np.where(zero, -INF, lo)
        hi = np.where(zero, INF, hi)
        return IA(*_sanitize(lo, hi))

    def __rtruediv__(self, other):
        return IA.lift(other) / self

    def __pow__(self, n):
        return power(self, n)


# --- elementary functions ---------------------------------------------------

def _pow_nonneg(x, n, rounding):
    """x**n for x >= 0 by binary powering with one-sided rounding."""
    pick = 0 if rounding == "down" else 1
    result = np.ones_like(x)
    base = x
    while n:
        if n & 1:
            result = _mul_dir(result, base)[pick]
        n >>= 1
        if n:
            base = _mul_dir(base, base)[pick]
    return result


def power(x: IA, n: int) -> IA:
    if int(n) != n or n < 0:
        raise ValueError(f"only non-negative integer powers are supported, got {n!r}")
    n = int(n)
    x = IA.lift(x)
    if n == 0:
        return IA(np.ones(x.shape), np.ones(x.shape))
    if n == 1:
        return x
    lo, hi = np.broadcast_arrays(x.lo, x.hi)
    alo, ahi = np.abs(lo), np.abs(hi)
    if n % 2:
        # odd powers are increasing; sign handled via |x|
        plo = np.where(lo >= 0, _pow_nonneg(alo, n, "down"), -_pow_nonneg(alo, n, "up"))
        phi = np.where(hi >= 0, _pow_nonneg(ahi, n, "up"), -_pow_nonneg(ahi, n, "down"))
        return IA(plo, phi)
    mn = np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(alo, ahi))
    mx = np.maximum(alo, ahi)
    return IA(_pow_nonneg(mn, n, "down"), _pow_nonneg(mx, n, "up"))


def exp(x: IA) -> IA:
    x = IA.lift(x)
    with np.errstate(over="ignore"):
        lo = np.maximum(_pad_down(np.exp(x.lo)), 0.0)
        hi = _pad_up(np.exp(x.hi))
    return IA(lo, hi)


def sqrt(x: IA) -> IA:
    """Square root restricted to the non-negative part of the argument."""
    x = IA.lift(x)
    lo = np.maximum(x.lo, 0.0)
    hi = np.maximum(x.hi, 0.0)
    return IA(np.maximum(_down(np.sqrt(lo)), 0.0), _up(np.sqrt(hi)))


def iabs(x: IA) -> IA:
    x = IA.lift(x)
    lo, hi = np.broadcast_arrays(x.lo, x.hi)
    straddle = (lo <= 0) & (hi >= 0)
    mn = np.where(straddle, 0.0, np.minimum(np.abs(lo), np.abs(hi)))
    return IA(mn, np.maximum(np.abs(lo), np.abs(hi)))


def atan(x: IA) -> IA:
    x = IA.lift(x)
    lo = np.maximum(_pad_down(np.arctan(x.lo)), -HALF_PI_HI)
    hi = np.minimum(_pad_up(np.arctan(x.hi)), HALF_PI_HI)
    return IA(lo, hi)


def _sin_cos(x: IA, phase: float) -> IA:
    """sin(x + phase) for phase in {0, pi/2}; extrema located conservatively."""
    lo, hi = np.broadcast_arrays(x.lo, x.hi)
    fn = np.sin if phase == 0.0 else np.cos
    with np.errstate(invalid="ignore"):
        a, b = fn(lo), fn(hi)
        vlo = _pad_down(np.minimum(a, b))
        vhi = _pad_up(np.maximum(a, b))
        # maxima of sin(t + phase) at t = pi/2 - phase + 2k pi, minima at -pi/2 - phase + 2k pi
        cmax = math.pi / 2 - phase
        cmin = -math.pi / 2 - phase
        has_max = _has_integer((lo - cmax) / math.tau, (hi - cmax) / math.tau)
        has_min = _has_integer((lo - cmin) / math.tau, (hi - cmin) / math.tau)
        wide = ~(np.isfinite(lo) & np.isfinite(hi)) | (hi - lo >= TWO_PI_LO) | (
            np.maximum(np.abs(lo), np.abs(hi)) > 1e6
        )
    vhi = np.where(has_max | wide, 1.0, vhi)
    vlo = np.where(has_min | wide, -1.0, vlo)
    return IA(np.maximum(vlo, -1.0), np.minimum(vhi, 1.0))


def sin(x: IA) -> IA:
    return _sin_cos(IA.lift(x), 0.0)


def cos(x: IA) -> IA:
    return _sin_cos(IA.lift(x), math.pi / 2)


def tan(x: IA) -> IA:
    """Tangent; whole line where a pole may lie inside the argument."""
    x = IA.lift(x)
    lo, hi = np.broadcast_arrays(x.lo, x.hi)
    with np.errstate(invalid="ignore"):
        pole = _has_integer((lo - math.pi / 2) / math.pi, (hi - math.pi / 2) / math.pi)
        pole |= ~(np.isfinite(lo) & np.isfinite(hi)) | (hi - lo >= math.pi)
        tlo = _pad_down(np.tan(lo))
        thi = _pad_up(np.tan(hi))
    return IA(np.where(pole, -INF, tlo), np.where(pole, INF, thi))


def mod2pi(x: IA) -> IA:
    """Reduction modulo 2*pi into [0, 2*pi); falls back to the full period."""
    x = IA.lift(x)
    lo, hi = np.broadcast_arrays(x.lo, x.hi)
    with np.errstate(invalid="ignore"):
        k = np.floor(lo / math.tau)
        k = np.where(np.isfinite(k), k, 0.0)
        shift = IA(k) * IA(TWO_PI_LO, TWO_PI_HI)
        red = IA(lo, hi) - shift
        inside = (red.lo >= 0) & (red.hi < TWO_PI_LO) & np.isfinite(lo) & np.isfinite(hi)
    return IA(np.where(inside, red.lo, 0.0), np.where(inside, red.hi, TWO_PI_HI))


# --- scalar types -----------------------------------------------------------

@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if math.isnan(self.lo) or math.isnan(self.hi):
            raise ValueError("interval endpoints must not be NaN")

    @classmethod
    def point(cls, x: float) -> "Interval":
        return cls(float(x), float(x))

    @property
    def is_empty(self) -> bool:
        return self.lo > self.hi

    @property
    def width(self) -> float:
        return 0.0 if self.is_empty else self.hi - self.lo

    @property
    def mid(self) -> float:
        return min(max(0.5 * self.lo + 0.5 * self.hi, self.lo), self.hi)

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def subset_of(self, other: "Interval") -> bool:
        return self.is_empty or (other.lo <= self.lo and self.hi <= other.hi)

    def intersects(self, other: "Interval") -> bool:
        return not (self.is_empty or other.is_empty) and self.lo <= other.hi and other.lo <= self.hi

    def hull(self, other: "Interval") -> "Interval":
        if self.is_empty:
            return other
        if other.is_empty:
            return self
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def as_ia(self) -> IA:
        return IA(self.lo, self.hi)

    @staticmethod
    def from_ia(v: IA) -> "Interval":
        return Interval(float(v.lo), float(v.hi))

    def _binary(self, other, op):
        other = other if isinstance(other, Interval) else Interval.point(other)
        if self.is_empty or other.is_empty:
            return EMPTY
        return Interval.from_ia(op(self.as_ia(), other.as_ia()))

    def __add__(self, other):
        return self._binary(other, IA.__add__)

    def __radd__(self, other):
        return self + other

    def __sub__(self, other):
        return self._binary(other, IA.__sub__)

    def __rsub__(self, other):
        return Interval.point(other) - self

    def __mul__(self, other):
        return self._binary(other, IA.__mul__)

    def __rmul__(self, other):
        return self * other

    def __truediv__(self, other):
        return self._binary(other, IA.__truediv__)

    def __rtruediv__(self, other):
        return Interval.point(other) / self

    def __neg__(self):
        return EMPTY if self.is_empty else Interval(-self.hi, -self.lo)

    def __pow__(self, n: int):
        return EMPTY if self.is_empty else Interval.from_ia(power(self.as_ia(), n))


EMPTY = Interval(INF, -INF)

_UNARY = {
    "sin": sin,
    "cos": cos,
    "tan": tan,
    "atan": atan,
    "exp": exp,
    "sqrt": sqrt,
    "abs": iabs,
    "mod2pi": mod2pi,
}


def apply(name: str, x: Interval) -> Interval:
    """Evaluate a named elementary function on a scalar interval."""
    if x.is_empty:
        return EMPTY
    return Interval.from_ia(_UNARY[name](x.as_ia()))


@dataclass(frozen=True)
class Box:
    dims: tuple[Interval, ...]

    @classmethod
    def from_bounds(cls, lo: Sequence[float], hi: Sequence[float]) -> "Box":
        if len(lo) != len(hi):
            raise ValueError("lo and hi must have equal length")
        return cls(tuple(Interval(float(a), float(b)) for a, b in zip(lo, hi)))

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[float]]) -> "Box":
        return cls(tuple(Interval(float(a), float(b)) for a, b in pairs))

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def lo(self) -> np.ndarray:
        return np.array([d.lo for d in self.dims])

    @property
    def hi(self) -> np.ndarray:
        return np.array([d.hi for d in self.dims])

    @property
    def is_empty(self) -> bool:
        return any(d.is_empty for d in self.dims)

    @property
    def width(self) -> float:
        return max(d.width for d in self.dims) if self.dims else 0.0

    @property
    def center(self) -> np.ndarray:
        return np.array([d.mid for d in self.dims])

    def widest_dim(self) -> int:
        # lowest index wins ties
        w = [d.width for d in self.dims]
        return w.index(max(w))

    def bisect(self) -> tuple["Box", "Box"]:
        j = self.widest_dim()
        d = self.dims[j]
        m = d.mid
        left = self.dims[:j] + (Interval(d.lo, m),) + self.dims[j + 1:]
        right = self.dims[:j] + (Interval(m, d.hi),) + self.dims[j + 1:]
        return Box(left), Box(right)

    def erode(self, r: float) -> "Box":
        """Pontryagin difference with the sup-norm ball of radius r (rounded inward)."""
        if r < 0:
            raise ValueError("erosion radius must be non-negative")
        dims = []
        for d in self.dims:
            lo = float(_add_dir(d.lo, r)[1])
            hi = float(_sub_dir(d.hi, r)[0])
            if lo > hi:
                return Box(tuple(EMPTY for _ in self.dims))
            dims.append(Interval(lo, hi))
        return Box(tuple(dims))

    def inflate(self, r: float) -> "Box":
        if r < 0:
            raise ValueError("inflation radius must be non-negative")
        return Box(tuple(
            Interval(float(_sub_dir(d.lo, r)[0]), float(_add_dir(d.hi, r)[1])) for d in self.dims
        ))

    def contains(self, x: Sequence[float]) -> bool:
        return len(x) == self.ndim and all(d.contains(v) for d, v in zip(self.dims, x))

    def subset_of(self, other: "Box") -> bool:
        return all(a.subset_of(b) for a, b in zip(self.dims, other.dims))

    def intersects(self, other: "Box") -> bool:
        return all(a.intersects(b) for a, b in zip(self.dims, other.dims))

    def hull(self, other: "Box") -> "Box":
        return Box(tuple(a.hull(b) for a, b in zip(self.dims, other.dims)))

    def as_ia(self) -> IA:
        return IA(self.lo, self.hi)

    def __iter__(self):
        return iter(self.dims)

    def __len__(self):
        return len(self.dims)

    def __getitem__(self, i) -> Interval:
        return self.dims[i]


def box_widths(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Max-width of each row box in ``(N, n)`` bound arrays."""
    return np.max(hi - lo, axis=-1) if lo.shape[-1] else np.zeros(lo.shape[:-1])


def bisect_arrays(lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bisect each row box along its widest dimension.

    Children are interleaved: row ``2i`` is the left half of box ``i`` and row
    ``2i+1`` its right half, which keeps work lists in FIFO order.
    """
    n = lo.shape[0]
    j = np.argmax(hi - lo, axis=1)  # argmax returns the first maximum
    rows = np.arange(n)
    a, b = lo[rows, j], hi[rows, j]
    mid = np.clip(0.5 * a + 0.5 * b, a, b)
    left_hi = hi.copy()
    left_hi[rows, j] = mid
    right_lo = lo.copy()
    right_lo[rows, j] = mid
    out_lo = np.empty((2 * n, lo.shape[1]))
    out_hi = np.empty_like(out_lo)
    out_lo[0::2], out_hi[0::2] = lo, left_hi
    out_lo[1::2], out_hi[1::2] = right_lo, hi
    return out_lo, out_hi

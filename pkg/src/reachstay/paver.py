"""Box collections (pavers), exact union-coverage queries and box subtraction."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .interval import Box

INSIDE, PARTIAL, OUTSIDE = 1, 0, -1

# Above this many grid cells the coverage index falls back to per-query work.
MAX_GRID_CELLS = 30_000_000


@dataclass(frozen=True, eq=False)
class Paver:
    """Boxes stored as (N, n) bound arrays.  Order is meaningful (FIFO output)."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.ascontiguousarray(self.lo, dtype=float)
        hi = np.ascontiguousarray(self.hi, dtype=float)
        if lo.ndim != 2 or lo.shape != hi.shape:
            raise ValueError("paver bounds must be matching (N, n) arrays")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def empty(cls, n: int) -> "Paver":
        return cls(np.zeros((0, n)), np.zeros((0, n)))

    @classmethod
    def from_boxes(cls, boxes: Iterable[Box], n: int | None = None) -> "Paver":
        boxes = [b for b in boxes if not b.is_empty]
        if not boxes:
            if n is None:
                raise ValueError("dimension needed for an empty paver")
            return cls.empty(n)
        return cls(np.array([b.lo for b in boxes]), np.array([b.hi for b in boxes]))

    @classmethod
    def concat(cls, parts: Sequence["Paver"], n: int | None = None) -> "Paver":
        parts = [p for p in parts if p is not None]
        if not parts:
            return cls.empty(n or 0)
        return cls(np.concatenate([p.lo for p in parts]), np.concatenate([p.hi for p in parts]))

    @property
    def n(self) -> int:
        return self.lo.shape[1]

    def __len__(self) -> int:
        return self.lo.shape[0]

    def __getitem__(self, idx) -> "Paver":
        return Paver(self.lo[idx], self.hi[idx])

    def boxes(self) -> list[Box]:
        return [Box.from_bounds(l, h) for l, h in zip(self.lo, self.hi)]

    def widths(self) -> np.ndarray:
        if len(self) == 0:
            return np.zeros(0)
        return np.max(self.hi - self.lo, axis=1)

    def volume(self) -> float:
        return float(np.sum(np.prod(self.hi - self.lo, axis=1)))

    def canonical(self) -> bytes:
        """Order-independent byte representation (rows lexsorted)."""
        rows = np.concatenate([self.lo, self.hi], axis=1)
        if len(rows):
            order = np.lexsort(rows.T[::-1])
            rows = rows[order]
        return rows.tobytes()

    def same_set_as(self, other: "Paver") -> bool:
        return len(self) == len(other) and self.canonical() == other.canonical()

    def digest(self) -> str:
        return hashlib.sha256(self.canonical()).hexdigest()

    def contains_points(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if len(self) == 0:
            return np.zeros(x.shape[0], dtype=bool)
        return index_for(self).classify(x, x) == INSIDE


# --- coverage index ----------------------------------------------------------------

class CoverageIndex:
    """Exact union coverage over the rectilinear grid spanned by the boxes' own faces.

    Each grid cell lies entirely inside or entirely outside the union, so
    counting covered cells in a query's cell range decides coverage exactly
    (no hull approximation, seams between adjacent boxes are handled).
    """

    def __init__(self, p: Paver):
        self.p = p
        self.n = p.n
        self.empty = len(p) == 0
        if self.empty:
            return
        self.coords = [np.unique(np.concatenate([p.lo[:, d], p.hi[:, d]])) for d in range(self.n)]
        self.shape = tuple(max(len(c) - 1, 1) for c in self.coords)
        self.grid = int(np.prod(self.shape, dtype=np.int64)) <= MAX_GRID_CELLS
        if self.grid:
            self._build()

    def _cell_range_closed_box(self, lo, hi):
        a = np.stack([np.searchsorted(self.coords[d], lo[:, d]) for d in range(self.n)], axis=1)
        b = np.stack([np.searchsorted(self.coords[d], hi[:, d]) for d in range(self.n)], axis=1)
        return a, b

    def _build(self):
        p = self.p
        a, b = self._cell_range_closed_box(p.lo, p.hi)
        # degenerate (zero-width) dimensions cover no cell volume
        keep = np.all(b > a, axis=1)
        a, b = a[keep], b[keep]
        diff = np.zeros(tuple(s + 1 for s in self.shape), dtype=np.int32)
        n = self.n
        for corner in range(1 << n):
            idx = []
            sign = 1
            for d in range(n):
                if corner >> d & 1:
                    idx.append(b[:, d])
                    sign = -sign
                else:
                    idx.append(a[:, d])
            np.add.at(diff, tuple(idx), sign)
        for d in range(n):
            np.cumsum(diff, axis=d, out=diff)
        occ = (diff[tuple(slice(0, s) for s in self.shape)] > 0).astype(np.int64)
        S = np.zeros(tuple(s + 1 for s in self.shape), dtype=np.int64)
        S[tuple(slice(1, None) for _ in range(n))] = occ
        for d in range(n):
            np.cumsum(S, axis=d, out=S)
        self.S = S

    def _count(self, i0, i1):
        """Covered cells in [i0, i1) per query (prefix-sum inclusion-exclusion)."""
        n = self.n
        total = np.zeros(i0.shape[0], dtype=np.int64)
        for corner in range(1 << n):
            idx = []
            sign = 1
            for d in range(n):
                if corner >> d & 1:
                    idx.append(i0[:, d])
                    sign = -sign
                else:
                    idx.append(i1[:, d])
            total += sign * self.S[tuple(idx)]
        return total

    def classify(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """INSIDE / OUTSIDE / PARTIAL for each query box (rows of lo, hi)."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        shape = lo.shape[:-1]
        lo = lo.reshape(-1, self.n)
        hi = hi.reshape(-1, self.n)
        Q = lo.shape[0]
        out = np.full(Q, OUTSIDE, dtype=np.int8)
        if self.empty or Q == 0:
            return out.reshape(shape)
        bad = ~(np.all(np.isfinite(lo), axis=1) & np.all(np.isfinite(hi), axis=1))
        if self.grid:
            res = self._classify_grid(lo, hi)
        else:
            res = self._classify_direct(lo, hi)
        res[bad & (res == INSIDE)] = PARTIAL
        nan = np.any(np.isnan(lo) | np.isnan(hi), axis=1)
        res[nan] = PARTIAL
        return res.reshape(shape)

    def _classify_grid(self, lo, hi):
        n = self.n
        Q = lo.shape[0]
        res = np.full(Q, PARTIAL, dtype=np.int8)
        cmin = np.array([c[0] for c in self.coords])
        cmax = np.array([c[-1] for c in self.coords])
        ncell = np.array(self.shape)
        # intersection with closed cells
        j0 = np.empty((Q, n), dtype=np.int64)
        j1 = np.empty((Q, n), dtype=np.int64)
        for d in range(n):
            c = self.coords[d]
            j0[:, d] = np.searchsorted(c, lo[:, d], side="left") - 1
            j1[:, d] = np.searchsorted(c, hi[:, d], side="right") - 1
        miss = np.any((lo > cmax) | (hi < cmin), axis=1)
        j0 = np.clip(j0, 0, ncell - 1)
        j1 = np.clip(j1, 0, ncell - 1)
        hit = np.zeros(Q, dtype=bool)
        ok = ~miss
        if ok.any():
            hit[ok] = self._count(j0[ok], j1[ok] + 1) > 0
        res[~hit] = OUTSIDE
        # containment over the interior cell range
        cand = hit & np.all((lo >= cmin) & (hi <= cmax), axis=1)
        if cand.any():
            l, h = lo[cand], hi[cand]
            i0 = np.empty(l.shape, dtype=np.int64)
            i1 = np.empty(l.shape, dtype=np.int64)
            for d in range(n):
                c = self.coords[d]
                i0[:, d] = np.searchsorted(c, l[:, d], side="right") - 1
                i1[:, d] = np.searchsorted(c, h[:, d], side="left") - 1
            flat = i1 < i0  # zero-width query dimension sitting on a grid line
            i0 = np.where(flat, np.minimum(i0, ncell - 1), i0)
            i1 = np.where(flat, i0, i1)
            i0 = np.clip(i0, 0, ncell - 1)
            i1 = np.clip(i1, 0, ncell - 1)
            need = np.prod(i1 - i0 + 1, axis=1)
            full = self._count(i0, i1 + 1) == need
            sub = np.nonzero(cand)[0][full]
            res[sub] = INSIDE
        return res

    def _classify_direct(self, lo, hi):
        """Slow exact path: per query, build a local grid over the boxes it touches."""
        res = np.empty(lo.shape[0], dtype=np.int8)
        P = self.p
        for q in range(lo.shape[0]):
            touch = np.all((P.lo <= hi[q]) & (P.hi >= lo[q]), axis=1)
            if not touch.any():
                res[q] = OUTSIDE
                continue
            sub = Paver(np.maximum(P.lo[touch], lo[q]), np.minimum(P.hi[touch], hi[q]))
            local = CoverageIndex(sub)
            if not local.grid:
                res[q] = PARTIAL
                continue
            inside = local._classify_grid(lo[q:q + 1], hi[q:q + 1])[0] == INSIDE
            res[q] = INSIDE if inside else PARTIAL
        return res


_INDEX_CACHE: dict[int, tuple[Paver, CoverageIndex]] = {}


def index_for(p: Paver) -> CoverageIndex:
    hit = _INDEX_CACHE.get(id(p))
    if hit is not None and hit[0] is p:
        return hit[1]
    idx = CoverageIndex(p)
    if len(_INDEX_CACHE) > 8:
        _INDEX_CACHE.clear()
    _INDEX_CACHE[id(p)] = (p, idx)
    return idx


def paver_covers(p: Paver, b: Box) -> int:
    """INSIDE if the union of p covers b, OUTSIDE if disjoint, else PARTIAL."""
    if len(p) == 0:
        return OUTSIDE
    return int(index_for(p).classify(np.array([b.lo]), np.array([b.hi]))[0])


# --- set operations ---------------------------------------------------------------

def intersect(p: Paver, b: Box | tuple[np.ndarray, np.ndarray]) -> Paver:
    """Boxes of p clipped to b; pieces with empty interior are dropped."""
    blo, bhi = (np.array(b.lo), np.array(b.hi)) if isinstance(b, Box) else b
    lo = np.maximum(p.lo, blo)
    hi = np.minimum(p.hi, bhi)
    keep = np.all(lo < hi, axis=1)
    return Paver(lo[keep], hi[keep])


def subtract_box(p: Paver, b: Box | tuple[np.ndarray, np.ndarray]) -> Paver:
    """p minus the interior of b, split into boxes (closure of the difference)."""
    blo, bhi = (np.array(b.lo), np.array(b.hi)) if isinstance(b, Box) else b
    hit = np.all((p.lo < bhi) & (p.hi > blo), axis=1)
    keep = Paver(p.lo[~hit], p.hi[~hit])
    lo, hi = p.lo[hit].copy(), p.hi[hit].copy()
    parts_lo, parts_hi = [keep.lo], [keep.hi]
    for d in range(p.n):
        below = lo[:, d] < blo[d]
        if below.any():
            pl, ph = lo[below].copy(), hi[below].copy()
            ph[:, d] = blo[d]
            parts_lo.append(pl)
            parts_hi.append(ph)
        above = hi[:, d] > bhi[d]
        if above.any():
            pl, ph = lo[above].copy(), hi[above].copy()
            pl[:, d] = bhi[d]
            parts_lo.append(pl)
            parts_hi.append(ph)
        lo[:, d] = np.maximum(lo[:, d], blo[d])
        hi[:, d] = np.minimum(hi[:, d], bhi[d])
    return Paver(np.concatenate(parts_lo), np.concatenate(parts_hi))


def subtract(p: Paver, q: Paver) -> Paver:
    out = p
    for l, h in zip(q.lo, q.hi):
        out = subtract_box(out, (l, h))
    return out


def intersect_paver(p: Paver, q: Paver) -> Paver:
    parts = [intersect(p, (l, h)) for l, h in zip(q.lo, q.hi)]
    return Paver.concat(parts, p.n)


def covers(outer: Paver, inner: Paver) -> bool:
    """True when the union of ``outer`` contains every box of ``inner``."""
    if len(inner) == 0:
        return True
    if len(outer) == 0:
        return False
    return bool(np.all(index_for(outer).classify(inner.lo, inner.hi) == INSIDE))

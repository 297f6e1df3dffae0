"""Nested fixed-point synthesis for reach-and-stay, a finite-grid oracle and ROA targets."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from . import expr as ex
from .dynamics import Spec, SystemModel
from .expr import Expr, Program
from .interval import IA, Box
from .paver import INSIDE, OUTSIDE, CoverageIndex, Paver, intersect_paver, subtract
from .pred import (Budget, BudgetExceeded, ControlTable, FreeSpace, IneqTarget, MapImage,
                   PaverTarget, cpred, hull_count, sivia)
from .reach import TaylorConfig, TaylorImage

TAG_INNER, TAG_UNDET, TAG_OUTSIDE = "inner", "undet", "outside"
_UNDET, _OUT = 0, -1
HULL_BLOCKS = 16


class SynthError(ValueError):
    pass


class SynthesisBudgetError(RuntimeError):
    def __init__(self, msg: str, partial: "SynthResult"):
        super().__init__(msg)
        self.partial = partial


@dataclass(frozen=True)
class PrecisionSchedule:
    """Precision of the outer (reach) and inner (stay) predecessor calls.

    With ``shrink`` set, the outer precision is multiplied by it after every
    outer iteration until it reaches ``eps_min``.  ``eps_spec`` controls the
    paving of the target and of the free space (defaults to the inner value).
    """

    eps_outer: float
    eps_inner: float | None = None
    shrink: float | None = None
    eps_min: float | None = None
    eps_spec: float | None = None

    def __post_init__(self):
        vals = [self.eps_outer, self.inner, self.spec]
        if self.eps_min is not None:
            vals.append(self.eps_min)
        if not all(v > 0 for v in vals):
            raise SynthError("precisions must be positive")
        if self.shrink is not None and not 0 < self.shrink <= 1:
            raise SynthError("shrink factor must lie in (0, 1]")
        if self.eps_min is not None and self.eps_min > min(self.eps_outer, self.inner):
            raise SynthError("eps_min must not exceed the other precisions")

    @property
    def inner(self) -> float:
        return self.eps_inner if self.eps_inner is not None else self.eps_outer

    @property
    def spec(self) -> float:
        return self.eps_spec if self.eps_spec is not None else self.inner

    def outer_at(self, i: int) -> float:
        if self.shrink is None:
            return self.eps_outer
        floor = self.eps_min if self.eps_min is not None else self.eps_outer * self.shrink ** 20
        return max(floor, self.eps_outer * self.shrink ** i)

    def settled(self, i: int) -> bool:
        return self.shrink is None or self.shrink == 1 or self.outer_at(i) == self.outer_at(i + 1)


@dataclass
class Regions:
    """Initial split of the state space: G1 = X minus target, G2 = X within target."""

    G1: Paver
    G2: Paver
    G1_tags: np.ndarray  # tags of G1 boxes (undetermined pieces of the target boundary)
    excluded: Paver      # boxes removed as (possibly) colliding
    excluded_tags: np.ndarray


@dataclass
class SynthResult:
    winning: Paver
    table: ControlTable
    undetermined: Paver
    outside: Paver
    controls: np.ndarray
    outer_iterations: int
    inner_iterations: list[int]
    stats: dict
    partial: bool = False

    def tagged_boxes(self) -> tuple[np.ndarray, np.ndarray, list[str]]:
        lo = np.concatenate([self.winning.lo, self.undetermined.lo, self.outside.lo])
        hi = np.concatenate([self.winning.hi, self.undetermined.hi, self.outside.hi])
        tags = ([TAG_INNER] * len(self.winning) + [TAG_UNDET] * len(self.undetermined)
                + [TAG_OUTSIDE] * len(self.outside))
        return lo, hi, tags


def _disjoint(boxes: Sequence[Box], n: int) -> Paver:
    out = Paver.empty(n)
    for b in boxes:
        piece = Paver(np.array([b.lo]), np.array([b.hi]))
        if len(out):
            piece = subtract(piece, out)
        out = Paver.concat([out, piece], n)
    return out


def prepare_regions(spec: Spec, eps: float, budget: Budget | None = None, threads: int = 1) -> Regions:
    """Free-space and target pavings that seed the fixed point."""
    n = spec.n
    X = Paver(np.array([spec.X.lo]), np.array([spec.X.hi]))
    excl, excl_tags = [], []
    if spec.obstacles:
        free = FreeSpace([IneqTarget(o) for o in spec.obstacles])
        X, und, out = sivia(X, free, eps, budget=budget, threads=threads)
        excl += [und, out]
        excl_tags += [np.full(len(und), _UNDET), np.full(len(out), _OUT)]
    T = _disjoint(spec.target, n) if spec.target else Paver(np.array([spec.X.lo]), np.array([spec.X.hi]))
    A = intersect_paver(X, T)
    G1 = subtract(X, T)
    tags = [np.full(len(G1), _OUT)]
    parts = [G1]
    if spec.target_ineq:
        inside, und, out = sivia(A, IneqTarget(spec.target_ineq), eps, budget=budget, threads=threads)
        parts += [und, out]
        tags += [np.full(len(und), _UNDET), np.full(len(out), _OUT)]
        A = inside
    return Regions(Paver.concat(parts, n), A, np.concatenate(tags).astype(np.int8),
                   Paver.concat(excl, n), np.concatenate(excl_tags).astype(np.int8) if excl_tags
                   else np.zeros(0, dtype=np.int8))


def make_image(sys: SystemModel, taylor: TaylorConfig | None = None, form: str = "natural"):
    if sys.kind == "discrete":
        return MapImage(sys, form)
    if taylor is None:
        if sys.tau is None:
            raise SynthError("sampled-data synthesis needs a sampling time")
        taylor = TaylorConfig(tau=sys.tau, delta=sys.delta)
    return TaylorImage(sys, taylor)


def synthesize(sys: SystemModel, spec: Spec, sched: PrecisionSchedule, *,
               taylor: TaylorConfig | None = None, form: str = "natural",
               budget: Budget | None = None, threads: int = 1,
               on_iteration: Callable | None = None, image=None,
               incremental: bool = True, invariant_target: bool = False) -> SynthResult:
    """Inner approximation of the winning set and its control table.

    Follows the two-level fixed point with G1/G2 bookkeeping.  With
    ``incremental`` the outer predecessor call skips G1 boxes whose recorded
    image hulls cannot meet the boxes won in the previous iteration; their
    classification could not change, so the sets computed are the same.

    ``invariant_target`` declares the target invariant under the true flow
    (a certified Lyapunov sublevel set).  The stay loop is then skipped and
    the inner paving of the target is kept whole.  Only meaningful without
    control choice or disturbance.  The table then also covers the boxes
    straddling the target boundary, which are not part of the winning set.
    """
    if spec.n != sys.n:
        raise SynthError("spec and system dimensions differ")
    t0 = time.monotonic()
    n = sys.n
    M = sys.num_controls
    image = image if image is not None else make_image(sys, taylor, form)
    delta = sys.delta
    if invariant_target and (M != 1 or delta > 0):
        raise SynthError("an invariant target needs a single control value and no disturbance")
    regions = prepare_regions(spec, sched.spec, budget, threads)
    B = hull_count(image, HULL_BLOCKS) if incremental else 0

    G1 = regions.G1
    G1_tags = regions.G1_tags
    G1_hlo = np.full((len(G1), max(B, 1), n), np.nan)
    G1_hhi = G1_hlo.copy()
    G2 = regions.G2
    G2_tags = np.zeros(len(G2), dtype=np.int8)

    Y: Paver | None = None
    Ytil = Paver.empty(n)
    dY = Paver.empty(n)
    tables: list[ControlTable] = []
    snapshot = (Ytil, [])
    outer = 0
    inner_counts: list[int] = []
    evaluated = 0
    last_eps = None

    def result(win, tabs, partial, G1_, G1t, G2_, G2t):
        und = [G1_[G1t == _UNDET], G2_[G2t == _UNDET], regions.excluded[regions.excluded_tags == _UNDET]]
        out = [G1_[G1t == _OUT], G2_[G2t == _OUT], regions.excluded[regions.excluded_tags == _OUT]]
        table = ControlTable.concat(tabs, n, M)
        stats = {
            "outer_iterations": outer,
            "inner_iterations": list(inner_counts),
            "winning_boxes": len(win),
            "table_entries": len(table),
            "boxes_evaluated": evaluated,
            "winning_volume": win.volume(),
            "controls": M,
            "wall_time_s": time.monotonic() - t0,
        }
        return SynthResult(win, table, Paver.concat(und, n), Paver.concat(out, n), sys.controls,
                           outer, list(inner_counts), stats, partial)

    try:
        while Y is None or not (Ytil.same_set_as(Y) and sched.settled(outer - 1)):
            Y = Ytil
            eps_o = sched.outer_at(outer)
            outer += 1
            # outer step: which G1 boxes can reach Y
            if incremental and Y is not None and len(G1):
                cand = np.isnan(G1_hlo[:, 0, 0])
                if len(dY):
                    hit = CoverageIndex(dY).classify(G1_hlo, G1_hhi) != OUTSIDE
                    cand |= hit.any(axis=1)
                if last_eps is not None and eps_o != last_eps:
                    cand |= (G1_tags == _UNDET) & (G1.widths() >= eps_o)
            else:
                cand = np.ones(len(G1), dtype=bool)
            last_eps = eps_o
            rz = cpred(G1[cand], PaverTarget(Y), eps_o, image, delta, budget=budget,
                       threads=threads, hull_blocks=B)
            evaluated += rz.evaluated
            tabs_iter = [rz.K]
            Z = Paver.concat([Y, rz.inner], n)
            # inner loop: largest subset of G2 that can stay within Z and itself
            V = G2
            G2_parts, G2_tag_parts = [], []
            Xcur = None
            Xt = Paver.concat([Z, V], n)
            count = 0
            rv = None
            Vprev = None
            if invariant_target:
                # the flow never leaves the target, so its inner paving stays as is
                Vprev = V
                if len(V):
                    tabs_iter.append(ControlTable(V, np.ones((len(V), M), dtype=bool)))
                if outer == 1:
                    # trajectories may cross the paving inside the target; the single
                    # control is also offered on the boxes straddling its boundary
                    rim = regions.G1[regions.G1_tags == _UNDET]
                    if len(rim):
                        tabs_iter.append(ControlTable(rim, np.ones((len(rim), M), dtype=bool)))
            while Vprev is None or not V.same_set_as(Vprev):
                Xcur = Xt
                Vprev = V
                count += 1
                rv = cpred(V, PaverTarget(Xcur), sched.inner, image, delta, budget=budget, threads=threads)
                evaluated += rv.evaluated
                Xt = Paver.concat([Z, rv.inner], n)
                V = rv.inner
                G2_parts += [rv.undetermined, rv.outside]
                G2_tag_parts += [np.full(len(rv.undetermined), _UNDET), np.full(len(rv.outside), _OUT)]
            inner_counts.append(count)
            if rv is not None:
                tabs_iter.append(rv.K)
            G2 = Paver.concat(G2_parts, n)
            G2_tags = np.concatenate(G2_tag_parts).astype(np.int8) if G2_tag_parts else np.zeros(0, np.int8)
            tables.extend(tabs_iter)
            Ytil = Xt
            dY = Paver.concat([rz.inner, V], n)
            # G1 <- undetermined and outside parts, plus the boxes skipped this round
            ru, ro = rz.undetermined, rz.outside
            keep = ~cand
            G1 = Paver.concat([ru, ro, G1[keep]], n)
            G1_tags = np.concatenate([np.full(len(ru), _UNDET), np.full(len(ro), _OUT),
                                      G1_tags[keep]]).astype(np.int8)
            if B:
                G1_hlo = np.concatenate([rz.hulls["undetermined"][0], rz.hulls["outside"][0], G1_hlo[keep]])
                G1_hhi = np.concatenate([rz.hulls["undetermined"][1], rz.hulls["outside"][1], G1_hhi[keep]])
            else:
                G1_hlo = np.full((len(G1), 1, n), np.nan)
                G1_hhi = G1_hlo.copy()
            snapshot = (Ytil, list(tables), G1, G1_tags, G2, G2_tags)
            if on_iteration is not None:
                on_iteration(outer, Ytil, G1, G2)
    except BudgetExceeded as err:
        if len(snapshot) == 2:
            win, tabs = snapshot
            part = result(win, tabs, True, regions.G1, regions.G1_tags, regions.G2,
                          np.full(len(regions.G2), _UNDET, dtype=np.int8))
        else:
            win, tabs, g1, g1t, g2, g2t = snapshot
            part = result(win, tabs, True, g1, g1t, g2, g2t)
        raise SynthesisBudgetError(str(err), part) from None
    return result(Ytil, tables, False, G1, G1_tags, G2, G2_tags)


# --- finite-grid oracle -------------------------------------------------------------

@dataclass
class FiniteSystem:
    """Explicit transition system: succ[s][u] lists successor cells, -1 meaning 'left X'."""

    num_states: int
    succ: list[list[np.ndarray]]


def oracle_win_set(fs: FiniteSystem, omega: np.ndarray) -> np.ndarray:
    """Exact nested fixed point on a finite system (bool mask over cells)."""
    S = fs.num_states
    omega = np.asarray(omega, dtype=bool)
    # flatten transitions: one row per (state, control) pair
    pair_state, offsets, flat = [], [0], []
    for s in range(S):
        for succ in fs.succ[s]:
            succ = np.asarray(succ, dtype=np.int64)
            succ = np.where(succ < 0, S, succ)
            if succ.size == 0:
                continue
            pair_state.append(s)
            flat.append(succ)
            offsets.append(offsets[-1] + succ.size)
    pair_state = np.asarray(pair_state, dtype=np.int64)
    flat = np.concatenate(flat) if flat else np.zeros(0, dtype=np.int64)
    starts = np.asarray(offsets[:-1], dtype=np.int64)

    def pre(A: np.ndarray) -> np.ndarray:
        if pair_state.size == 0:
            return np.zeros(S, dtype=bool)
        ext = np.append(A, False)
        ok = np.minimum.reduceat(ext[flat].astype(np.int8), starts).astype(bool)
        res = np.zeros(S, dtype=bool)
        np.logical_or.at(res, pair_state, ok)
        return res

    Ytil = np.zeros(S, dtype=bool)
    Y = None
    while Y is None or not np.array_equal(Y, Ytil):
        Y = Ytil
        Z = pre(Y)
        Xt = omega | Z
        Xc = None
        while Xc is None or not np.array_equal(Xc, Xt):
            Xc = Xt
            Xt = Z | (Xc & pre(Xc))
        Ytil = Xc
    return Y


@dataclass
class GridAbstraction:
    system: FiniteSystem
    lo: np.ndarray      # (S, n) cell bounds
    hi: np.ndarray
    omega: np.ndarray   # bool mask of cells inside the target
    shape: tuple[int, ...]


def grid_abstraction(sys: SystemModel, spec: Spec, h: float, samples: int = 3,
                     step: Callable | None = None) -> GridAbstraction:
    """Finite abstraction by point simulation on a uniform grid of cell size ~h.

    Each cell is sampled on a samples^n sub-grid of interior points; with
    delta > 0 every sample is also pushed by the 3^n disturbance corners.
    """
    n = sys.n
    Xlo, Xhi = np.array(spec.X.lo), np.array(spec.X.hi)
    shape = tuple(max(1, int(round((Xhi[d] - Xlo[d]) / h))) for d in range(n))
    edges = [np.linspace(Xlo[d], Xhi[d], shape[d] + 1) for d in range(n)]
    idx = np.array(list(np.ndindex(*shape)))
    lo = np.stack([edges[d][idx[:, d]] for d in range(n)], axis=1)
    hi = np.stack([edges[d][idx[:, d] + 1] for d in range(n)], axis=1)
    S = lo.shape[0]
    frac = (np.arange(samples) + 0.5) / samples
    sub = np.array(list(np.ndindex(*([samples] * n))))
    pts = lo[:, None, :] + frac[sub][None, :, :] * (hi - lo)[:, None, :]   # (S, P, n)
    P = pts.shape[1]
    if sys.delta > 0:
        dcorners = np.array(list(np.ndindex(*([3] * n)))) - 1.0
        dvec = dcorners * sys.delta
    else:
        dvec = np.zeros((1, n))
    step = step or (lambda x, u: sys.step_numeric(x, np.full(len(x), u)))
    succ: list[list[np.ndarray]] = [[] for _ in range(S)]
    flat_pts = pts.reshape(-1, n)
    for u in range(sys.num_controls):
        y = step(flat_pts, u)
        y = (y[:, None, :] + dvec[None, :, :]).reshape(S, P * len(dvec), n)
        inside = np.all((y >= Xlo) & (y <= Xhi), axis=2)
        cell = np.zeros(y.shape[:2], dtype=np.int64)
        for d in range(n):
            k = np.clip(np.searchsorted(edges[d], y[..., d], side="right") - 1, 0, shape[d] - 1)
            cell = cell * shape[d] + k
        cell = np.where(inside & ~spec.in_obstacle(y.reshape(-1, n)).reshape(cell.shape), cell, -1)
        for s in range(S):
            succ[s].append(np.unique(cell[s]))
    centers = 0.5 * (lo + hi)
    omega = spec.in_target(centers)
    # only cells wholly inside target boxes count as target cells
    if spec.target:
        whole = np.zeros(S, dtype=bool)
        for t in spec.target:
            whole |= np.all((lo >= t.lo) & (hi <= t.hi), axis=1)
        omega &= whole
    return GridAbstraction(FiniteSystem(S, succ), lo, hi, omega, shape)


# --- region-of-attraction targets ---------------------------------------------------------

@dataclass
class RoaTarget:
    A: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    r: float
    c: float
    lam_min: float
    norm_P: float

    def quadratic(self, c: float | None = None) -> Expr:
        """x'Px - c as an expression (the target is where it is <= 0)."""
        c = self.c if c is None else c
        return quadratic_form(self.P, c)


def quadratic_form(P: np.ndarray, c: float) -> Expr:
    n = P.shape[0]
    acc = ex.ZERO
    for i in range(n):
        for j in range(n):
            if P[i, j] != 0:
                acc = ex.add(acc, ex.mul(ex.const(P[i, j]), ex.mul(ex.var("x", i), ex.var("x", j))))
    return ex.sub(acc, ex.const(c))


def lyapunov_matrix(A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Solve A'P + PA = -Q for symmetric P."""
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if np.any(np.linalg.eigvals(A).real >= 0):
        raise SynthError("A is not Hurwitz")
    if not np.allclose(Q, Q.T) or np.any(np.linalg.eigvalsh(Q) <= 0):
        raise SynthError("Q must be symmetric positive definite")
    P = linalg.solve_continuous_lyapunov(A.T, -Q)
    return 0.5 * (P + P.T)


def jacobian_at_zero(field: Sequence[Expr], n: int) -> np.ndarray:
    rows = [[ex.diff(f, "x", i) for i in range(n)] for f in field]
    prog = Program([e for r in rows for e in r])
    vals = prog.numeric({"x": [np.zeros(1) for _ in range(n)], "u": [], "w": []})
    return np.array([float(np.ravel(v)[0]) for v in vals]).reshape(n, n)


def _higher_order(field: Sequence[Expr], A: np.ndarray) -> list[Expr]:
    n = A.shape[0]
    g = []
    for i, f in enumerate(field):
        lin = ex.ZERO
        for j in range(n):
            if A[i, j] != 0:
                lin = ex.add(lin, ex.mul(ex.const(A[i, j]), ex.var("x", j)))
        g.append(ex.sub(f, lin))
    return g


def _ellipse_box(P: np.ndarray, c: float, pad: float = 1e-9) -> Box:
    half = np.sqrt(c * np.diag(np.linalg.inv(P))) * (1 + 1e-6) + pad
    return Box.from_bounds(-half, half)


def _certify(P: np.ndarray, c: float, value_exprs: Sequence[Expr], jac_exprs: Sequence[Expr],
             jac_bound: float, eps: float, max_boxes: int) -> bool:
    """Pave the ellipsoid's bounding box; every box must be outside the ellipsoid,
    have a negative upper bound of ``value_exprs[0]``, or (near the origin)
    satisfy the Jacobian Frobenius bound on hull(box, 0)."""
    n = P.shape[0]
    V = IneqTarget([quadratic_form(P, c)])
    val = Program(list(value_exprs))
    jac = Program(list(jac_exprs))
    b = _ellipse_box(P, c)
    lo, hi = np.array([b.lo]), np.array([b.hi])
    total = 0
    from .interval import bisect_arrays
    while len(lo):
        total += len(lo)
        if total > max_boxes:
            return False
        st = V.classify(lo, hi)
        done = st == OUTSIDE
        xs = [IA(lo[:, i], hi[:, i]) for i in range(n)]
        v = val.interval({"x": xs})[0]
        done |= np.broadcast_to(v.hi, done.shape) < 0
        hl = np.minimum(lo, 0.0)
        hh = np.maximum(hi, 0.0)
        J = jac.interval({"x": [IA(hl[:, i], hh[:, i]) for i in range(n)]})
        fro = IA(0.0)
        for e in J:
            fro = fro + e * e
        done |= np.broadcast_to(fro.hi, done.shape) < jac_bound ** 2
        rest = ~done
        if not rest.any():
            return True
        if np.any(np.max(hi[rest] - lo[rest], axis=1) < eps):
            return False
        lo, hi = bisect_arrays(lo[rest], hi[rest])
    return True


def certify_sr(field: Sequence[Expr], A: np.ndarray, P: np.ndarray, r: float, c: float,
               eps: float = 1e-3, max_boxes: int = 2_000_000) -> bool:
    """Check that the ellipsoid {x'Px <= c} lies in S_r = {||g(x)|| < r||x||} (plus the origin)."""
    n = A.shape[0]
    g = _higher_order(field, A)
    gsq = ex.ZERO
    for gi in g:
        gsq = ex.add(gsq, ex.pow_(gi, 2))
    xsq = ex.ZERO
    for i in range(n):
        xsq = ex.add(xsq, ex.pow_(ex.var("x", i), 2))
    value = ex.sub(gsq, ex.mul(ex.const(r * r), xsq))
    jac = [ex.diff(gi, "x", i) for gi in g for i in range(n)]
    return _certify(P, c, [value], jac, r, eps, max_boxes)


def certify_decrease(field: Sequence[Expr], A: np.ndarray, P: np.ndarray, Q: np.ndarray, c: float,
                     eps: float = 1e-3, max_boxes: int = 2_000_000) -> bool:
    """Check that V(x) = x'Px strictly decreases along the field on {x'Px <= c} minus the origin."""
    n = A.shape[0]
    vdot = ex.ZERO
    for i in range(n):
        for j in range(n):
            if P[i, j] != 0:
                vdot = ex.add(vdot, ex.mul(ex.const(2.0 * P[i, j]), ex.mul(ex.var("x", i), field[j])))
    g = _higher_order(field, A)
    jac = [ex.diff(gi, "x", i) for gi in g for i in range(n)]
    lam = float(np.linalg.eigvalsh(Q).min())
    bound = lam / (2.0 * float(np.linalg.norm(P, 2)))
    return _certify(P, c, [vdot], jac, bound, eps, max_boxes)


def roa_target(A: np.ndarray | None, Q: np.ndarray, field: Sequence[Expr], *,
               c_max: float = 10.0, c_min: float = 1e-3, tol: float = 1e-3,
               factor: float = 0.9, eps: float = 1e-3) -> RoaTarget:
    """Quadratic Lyapunov target {x'Px <= c} from the linearisation at the origin.

    r takes ``factor`` times the strict bound lambda_min(Q)/(2||P||); c is the
    largest value (by bisection) for which the ellipsoid is certified inside S_r.
    """
    n = len(field)
    if A is None:
        A = jacobian_at_zero(field, n)
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    P = lyapunov_matrix(A, Q)
    lam = float(np.linalg.eigvalsh(Q).min())
    normP = float(np.linalg.norm(P, 2))
    r = factor * lam / (2.0 * normP)
    if not certify_sr(field, A, P, r, c_min, eps):
        raise SynthError(f"no certified ellipsoid down to c = {c_min}")
    lo_c, hi_c = c_min, c_max
    if certify_sr(field, A, P, r, c_max, eps):
        lo_c = c_max
    while hi_c - lo_c > tol and lo_c < c_max:
        mid = 0.5 * (lo_c + hi_c)
        if certify_sr(field, A, P, r, mid, eps):
            lo_c = mid
        else:
            hi_c = mid
    return RoaTarget(A, Q, P, r, lo_c, lam, normP)


def strict_radius_ok(Q: np.ndarray, P: np.ndarray, r: float) -> bool:
    """The decrease condition on r: -lambda_min(Q) + 2 r ||P|| < 0."""
    return -float(np.linalg.eigvalsh(Q).min()) + 2.0 * r * float(np.linalg.norm(P, 2)) < 0

"""Branch-and-bound predecessor approximation and set inversion."""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .expr import Expr, Program
from .interval import IA, _add_dir, _sub_dir, bisect_arrays
from .paver import INSIDE, OUTSIDE, PARTIAL, CoverageIndex, Paver

# boxes x controls x disturbance cells evaluated per chunk
CHUNK_PAIRS = 200_000
# screen controls in blocks once there are at least this many
SCREEN_MIN = 16


class PredError(ValueError):
    pass


class BudgetExceeded(RuntimeError):
    """Resource cap hit.  ``partial`` carries a sound partial result."""

    def __init__(self, msg: str, partial=None):
        super().__init__(msg)
        self.partial = partial


@dataclass
class Budget:
    max_boxes: int | None = None
    max_seconds: float | None = None
    boxes: int = 0
    start: float = field(default_factory=time.monotonic)

    def charge(self, k: int) -> None:
        self.boxes += int(k)

    def exceeded(self) -> str | None:
        if self.max_boxes is not None and self.boxes > self.max_boxes:
            return f"box budget of {self.max_boxes} exceeded"
        if self.max_seconds is not None and time.monotonic() - self.start > self.max_seconds:
            return f"time budget of {self.max_seconds}s exceeded"
        return None


# --- target sets ------------------------------------------------------------------

class TargetSet(Protocol):
    def classify(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Three-valued membership of boxes given as (..., n) bound arrays."""


class EmptyTarget:
    def classify(self, lo, hi):
        return np.full(np.shape(lo)[:-1], OUTSIDE, dtype=np.int8)


class PaverTarget:
    """Union of boxes, with exact coverage for the inside test."""

    def __init__(self, p: Paver):
        self.paver = p
        self.index = CoverageIndex(p)

    def classify(self, lo, hi):
        if len(self.paver) == 0:
            return EmptyTarget().classify(lo, hi)
        return self.index.classify(lo, hi)


class IneqTarget:
    """The set {x : g_i(x) <= 0 for all i}."""

    def __init__(self, exprs: Sequence[Expr]):
        self.exprs = tuple(exprs)
        self.prog = Program(self.exprs)

    def values(self, lo, hi) -> tuple[np.ndarray, np.ndarray]:
        n = lo.shape[-1]
        flo = lo.reshape(-1, n)
        fhi = hi.reshape(-1, n)
        vals = self.prog.interval({"x": [IA(flo[:, i], fhi[:, i]) for i in range(n)]})
        Q = flo.shape[0]
        glo = np.stack([np.broadcast_to(v.lo, (Q,)) for v in vals], axis=1)
        ghi = np.stack([np.broadcast_to(v.hi, (Q,)) for v in vals], axis=1)
        return glo, ghi

    def classify(self, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        shape = lo.shape[:-1]
        glo, ghi = self.values(lo, hi)
        res = np.full(glo.shape[0], PARTIAL, dtype=np.int8)
        res[np.all(ghi <= 0, axis=1)] = INSIDE
        # NaN bounds compare False and so never certify either way
        res[np.any(glo > 0, axis=1)] = OUTSIDE
        return res.reshape(shape)


class IntersectTarget:
    def __init__(self, parts: Sequence[TargetSet]):
        self.parts = list(parts)

    def classify(self, lo, hi):
        res = None
        for p in self.parts:
            c = p.classify(lo, hi)
            if res is None:
                res = c.copy()
            else:
                res = np.where((res == OUTSIDE) | (c == OUTSIDE), OUTSIDE,
                               np.where((res == INSIDE) & (c == INSIDE), INSIDE, PARTIAL)).astype(np.int8)
        return res


class FreeSpace:
    """Complement of a union of (closed) obstacle sets."""

    def __init__(self, obstacles: Sequence[TargetSet]):
        self.obstacles = list(obstacles)

    def classify(self, lo, hi):
        res = np.full(np.shape(lo)[:-1], INSIDE, dtype=np.int8)
        for o in self.obstacles:
            c = o.classify(lo, hi)
            res = np.where(c == INSIDE, OUTSIDE, np.where((c == PARTIAL) & (res == INSIDE), PARTIAL, res))
        return res.astype(np.int8)


# --- image operators ----------------------------------------------------------------

class IdentityImage:
    """Image of a box is the box itself (turns cpred into set inversion)."""

    num_controls = 1

    def __call__(self, lo, hi, controls=None):
        return lo[:, None, None, :], hi[:, None, None, :]


class MapImage:
    """Inclusion function of a discrete-time map."""

    def __init__(self, sys, form: str = "natural"):
        self.sys = sys
        self.form = form
        self.num_controls = sys.num_controls
        self.num_cells = sys.disturbance_cells()[0].shape[0]

    def __call__(self, lo, hi, controls=None):
        return self.sys.eval_field(lo, hi, self.form, controls)

    def block_image(self, lo, hi, ulo, uhi, gid):
        return self.sys.eval_field_blocks(lo, hi, self.form, ulo, uhi, gid)

    def pair_image(self, lo, hi, ctrl):
        u = self.sys.controls[ctrl]
        return self.sys.eval_field_blocks(lo, hi, self.form, u, u, self.sys.control_groups[ctrl], paired=True)


@dataclass(frozen=True)
class ControlBlocks:
    """Contiguous runs of controls inside one mode group, with their bounding boxes."""

    members: tuple[np.ndarray, ...]
    ulo: np.ndarray  # (B, m)
    uhi: np.ndarray
    gid: np.ndarray  # (B,)

    def __len__(self):
        return len(self.members)

    @property
    def owner(self) -> np.ndarray:
        """Block index of every control."""
        M = sum(len(m) for m in self.members)
        own = np.empty(M, dtype=int)
        for b, m in enumerate(self.members):
            own[m] = b
        return own


def control_blocks(sys, count: int) -> ControlBlocks:
    """Split the controls into about ``count`` blocks, proportionally per mode group."""
    M = sys.num_controls
    members = []
    for g in sys.groups:
        idx = np.sort(np.asarray(g.controls, dtype=int))
        k = max(1, min(len(idx), int(round(count * len(idx) / M))))
        members.extend(np.array_split(idx, k))
    members.sort(key=lambda a: int(a[0]))
    ulo = np.array([sys.controls[m].min(axis=0) for m in members]).reshape(len(members), sys.m)
    uhi = np.array([sys.controls[m].max(axis=0) for m in members]).reshape(len(members), sys.m)
    gid = sys.control_groups[[int(m[0]) for m in members]]
    return ControlBlocks(tuple(members), ulo, uhi, gid)


# --- results --------------------------------------------------------------------------

@dataclass
class ControlTable:
    """Boxes paired with the set of controls certified on each (a bool mask row)."""

    boxes: Paver
    valid: np.ndarray  # (K, M) bool

    @classmethod
    def empty(cls, n: int, M: int) -> "ControlTable":
        return cls(Paver.empty(n), np.zeros((0, M), dtype=bool))

    def __len__(self):
        return len(self.boxes)

    @classmethod
    def concat(cls, parts: Sequence["ControlTable"], n: int, M: int) -> "ControlTable":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty(n, M)
        return cls(Paver.concat([p.boxes for p in parts]), np.concatenate([p.valid for p in parts]))

    def first_control(self) -> np.ndarray:
        return np.argmax(self.valid, axis=1)


@dataclass
class CPredResult:
    K: ControlTable
    inner: Paver
    undetermined: Paver
    outside: Paver
    sweeps: int = 0
    evaluated: int = 0
    hulls: dict | None = None


# --- branch and bound --------------------------------------------------------------------

def _chunks(N: int, per_box: int) -> list[slice]:
    size = max(1, CHUNK_PAIRS // max(per_box, 1))
    return [slice(i, min(i + size, N)) for i in range(0, N, size)]


@dataclass
class Paving:
    """Output of branch and bound: three pavers plus per-box payload rows."""

    inner: Paver
    undetermined: Paver
    outside: Paver
    data: dict[str, dict[str, np.ndarray]]
    sweeps: int = 0
    evaluated: int = 0


class _Acc:
    def __init__(self):
        self.lo, self.hi, self.data = [], [], {}

    def add(self, lo, hi, mask, payload):
        if not mask.any():
            return
        self.lo.append(lo[mask])
        self.hi.append(hi[mask])
        for k, v in (payload or {}).items():
            self.data.setdefault(k, []).append(v[mask])

    def paver(self, n):
        if not self.lo:
            return Paver.empty(n)
        return Paver(np.concatenate(self.lo), np.concatenate(self.hi))

    def arrays(self, template):
        out = {}
        for k, proto in template.items():
            parts = self.data.get(k)
            out[k] = np.concatenate(parts) if parts else np.zeros((0,) + proto.shape[1:], proto.dtype)
        return out


def branch_and_bound(X: Paver, classify: Callable, eps: float, budget: Budget | None = None,
                     threads: int = 1, per_box: int = 1) -> Paving:
    """FIFO bisection driver shared by cpred and set inversion.

    ``classify(lo, hi)`` returns (status, payload) for a batch of boxes, with
    status INSIDE / OUTSIDE / PARTIAL and payload a dict of per-box arrays (or
    None).  Each sweep handles the whole work list and queues children in
    parent order, which is exactly the FIFO processing order.
    """
    if not eps > 0:
        raise PredError(f"precision must be positive, got {eps}")
    n = X.n
    lo, hi = X.lo, X.hi
    acc = {INSIDE: _Acc(), PARTIAL: _Acc(), OUTSIDE: _Acc()}
    template: dict[str, np.ndarray] = {}
    sweeps = evaluated = 0

    def pack():
        return Paving(acc[INSIDE].paver(n), acc[PARTIAL].paver(n), acc[OUTSIDE].paver(n),
                      {k: acc[k].arrays(template) for k in acc}, sweeps, evaluated)

    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        while len(lo):
            sweeps += 1
            evaluated += len(lo)
            parts = _chunks(len(lo), per_box)
            if pool is not None and len(parts) > 1:
                results = list(pool.map(lambda s: classify(lo[s], hi[s]), parts))
            else:
                results = [classify(lo[s], hi[s]) for s in parts]
            status = np.concatenate([r[0] for r in results])
            payload = None
            if results[0][1]:
                payload = {k: np.concatenate([r[1][k] for r in results]) for k in results[0][1]}
                if not template:
                    template = {k: v[:0] for k, v in payload.items()}
            inner = status == INSIDE
            outm = status == OUTSIDE
            wid = np.max(hi - lo, axis=1)
            rest = ~inner & ~outm
            small = rest & (wid < eps)
            acc[INSIDE].add(lo, hi, inner, payload)
            acc[OUTSIDE].add(lo, hi, outm, payload)
            acc[PARTIAL].add(lo, hi, small, payload)
            big = rest & ~small
            lo, hi = bisect_arrays(lo[big], hi[big])
            if budget is not None:
                budget.charge(len(lo))
                why = budget.exceeded()
                if why:
                    # unfinished boxes are reported as undetermined, which is sound
                    nan = {k: np.full((len(lo),) + v.shape[1:], np.nan if v.dtype.kind == "f" else 0, v.dtype)
                           for k, v in template.items()}
                    acc[PARTIAL].add(lo, hi, np.ones(len(lo), dtype=bool), nan)
                    raise BudgetExceeded(why, pack())
    finally:
        if pool is not None:
            pool.shutdown()
    return pack()


def _inflate(lo, hi, delta):
    if delta <= 0:
        return lo, hi
    return _sub_dir(lo, delta)[0], _add_dir(hi, delta)[1]


def _block_hull(lo, hi, blocks):
    """Per-box hull of images over contiguous control blocks: (N, B, n) each."""
    N, M, W, n = lo.shape
    edges = np.linspace(0, M, blocks + 1).round().astype(int)
    hl = np.stack([lo[:, a:b].min(axis=(1, 2)) for a, b in zip(edges[:-1], edges[1:])], axis=1)
    hh = np.stack([hi[:, a:b].max(axis=(1, 2)) for a, b in zip(edges[:-1], edges[1:])], axis=1)
    return hl, hh


def screening_blocks(image, M: int) -> ControlBlocks | None:
    """Blocks used to screen controls, or None when the image cannot evaluate them."""
    if M < SCREEN_MIN or not hasattr(image, "block_image"):
        return None
    return control_blocks(image.sys, int(math.ceil(math.sqrt(M))))


def hull_count(image, hull_blocks: int) -> int:
    """Number of hull blocks cpred reports for this image."""
    if not hull_blocks:
        return 0
    M = image.num_controls
    blocks = screening_blocks(image, M)
    return len(blocks) if blocks is not None else min(hull_blocks, M)


def cpred(X: Paver, Y: TargetSet, eps: float, image, delta: float = 0.0, *,
          budget: Budget | None = None, threads: int = 1, hull_blocks: int = 0,
          screen: bool = True) -> CPredResult:
    """Inner approximation of the predecessor of Y bounded by X.

    A box is inner when some control sends its image (inflated by delta) into
    Y for every disturbance cell; all such controls are recorded.  It is
    outside when every image misses Y.  Otherwise it is bisected, or parked
    as undetermined once narrower than eps.

    With many controls, images are first taken over blocks of controls with
    the control treated as an interval.  A block image that misses Y rules
    out all its members; one that lands inside Y certifies all of them.
    Only the remaining (box, control) pairs are evaluated one by one.

    With ``hull_blocks`` > 0 the hull of the inflated images over blocks of
    controls is returned for the undetermined and outside boxes.
    """
    if not eps > 0:
        raise PredError(f"precision must be positive, got {eps}")
    n = X.n
    M = image.num_controls
    blocks = screening_blocks(image, M) if screen else None
    B = hull_count(image, hull_blocks) if screen else (min(hull_blocks, M) if hull_blocks else 0)
    e = Paver.empty(n)
    if len(X) == 0:
        return CPredResult(ControlTable.empty(n, M), e, e, e, hulls=_no_hulls(0, 0, B, n))
    if isinstance(Y, EmptyTarget) or (isinstance(Y, PaverTarget) and len(Y.paver) == 0):
        return CPredResult(ControlTable.empty(n, M), e, e, X, 1, len(X),
                           hulls=_no_hulls(0, len(X), B, n))

    def classify(lo, hi):
        il, ih = image(lo, hi)
        st = Y.classify(il, ih)
        if delta > 0:
            il, ih = _inflate(il, ih, delta)
            st_in = Y.classify(il, ih)
        else:
            st_in = st
        valid = np.all(st_in == INSIDE, axis=2)
        status = np.full(lo.shape[0], PARTIAL, dtype=np.int8)
        status[np.all(st == OUTSIDE, axis=(1, 2))] = OUTSIDE
        status[valid.any(axis=1)] = INSIDE
        payload = {"valid": valid}
        if B:
            payload["hlo"], payload["hhi"] = _block_hull(il, ih, B)
        return status, payload

    def classify_screened(lo, hi):
        N = lo.shape[0]
        bl, bh = image.block_image(lo, hi, blocks.ulo, blocks.uhi, blocks.gid)
        live = ~np.all(Y.classify(bl, bh) == OUTSIDE, axis=2)
        bl, bh = _inflate(bl, bh, delta)
        whole = np.all(Y.classify(bl, bh) == INSIDE, axis=2)
        owner = blocks.owner
        valid = whole[:, owner]
        hit = whole.any(axis=1)
        pi, ci = np.nonzero((live & ~whole)[:, owner])
        if pi.size:
            pl, ph = image.pair_image(lo[pi], hi[pi], ci)
            miss = np.all(Y.classify(pl, ph) == OUTSIDE, axis=1)
            pl, ph = _inflate(pl, ph, delta)
            valid[pi, ci] = np.all(Y.classify(pl, ph) == INSIDE, axis=1)
            hit[pi[~miss]] = True
        status = np.full(N, PARTIAL, dtype=np.int8)
        status[~hit] = OUTSIDE
        status[valid.any(axis=1)] = INSIDE
        payload = {"valid": valid}
        if B:
            payload["hlo"], payload["hhi"] = bl.min(axis=2), bh.max(axis=2)
        return status, payload

    W = getattr(image, "num_cells", 1)
    fn = classify if blocks is None else classify_screened
    try:
        pv = branch_and_bound(X, fn, eps, budget, threads, per_box=M * W)
    except BudgetExceeded as err:
        err.partial = _result(err.partial, n, M, B)
        raise
    return _result(pv, n, M, B)


def _no_hulls(nu, no, B, n):
    if not B:
        return None
    return {"undetermined": (np.full((nu, B, n), np.nan), np.full((nu, B, n), np.nan)),
            "outside": (np.full((no, B, n), np.nan), np.full((no, B, n), np.nan))}


def _result(pv: Paving, n, M, B) -> CPredResult:
    valid = pv.data[INSIDE].get("valid", np.zeros((len(pv.inner), M), dtype=bool))
    hulls = None
    if B:
        hulls = {"undetermined": (pv.data[PARTIAL]["hlo"], pv.data[PARTIAL]["hhi"]),
                 "outside": (pv.data[OUTSIDE]["hlo"], pv.data[OUTSIDE]["hhi"])}
    return CPredResult(ControlTable(pv.inner, valid), pv.inner, pv.undetermined, pv.outside,
                       pv.sweeps, pv.evaluated, hulls)


def sivia(X: Paver, S: TargetSet, eps: float, *, budget: Budget | None = None,
          threads: int = 1) -> tuple[Paver, Paver, Paver]:
    """Pave X into boxes inside S, undetermined boxes (width < eps) and boxes outside S."""
    if len(X) == 0:
        e = Paver.empty(X.n)
        return e, e, e

    def classify(lo, hi):
        return S.classify(lo, hi), None

    pv = branch_and_bound(X, classify, eps, budget, threads)
    return pv.inner, pv.undetermined, pv.outside

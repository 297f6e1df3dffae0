"""System models: DSL parsing, Lie derivatives, inclusion functions, control sampling."""
from __future__ import annotations

import hashlib
import itertools
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import expr as ex
from .expr import Expr, ExprParser, ParseError, Program, TokenStream, tokenize
from .interval import IA, Box, Interval

DEFAULT_NODE_BUDGET = 200_000


class DynamicsError(ValueError):
    pass


class DomainWarning(RuntimeWarning):
    """An inclusion function produced an unbounded component."""


class NodeBudgetError(DynamicsError):
    pass


def sample_controls(U: Box | Sequence[tuple[float, float]], eta: float) -> np.ndarray:
    """All points of eta*Z^m inside U, lexicographic, as an (M, m) array.

    The lattice is computed in exact decimal arithmetic from the reprs of eta
    and the bounds, so that eta=0.3 yields 0.9 rather than 3*0.3 and a bound
    written as 0.3 is itself a lattice point for eta=0.1.
    """
    if not eta > 0:
        raise DynamicsError(f"control step must be positive, got {eta}")
    pairs = [(d.lo, d.hi) for d in U] if isinstance(U, Box) else [tuple(map(float, p)) for p in U]
    step = Fraction(repr(float(eta)))
    axes = []
    for lo, hi in pairs:
        flo, fhi = Fraction(repr(float(lo))), Fraction(repr(float(hi)))
        k0 = math.ceil(flo / step)
        k1 = math.floor(fhi / step)
        if k1 < k0:
            raise DynamicsError(f"no lattice point of step {eta} inside [{lo}, {hi}]")
        axes.append([float(k * step) for k in range(k0, k1 + 1)])
    if not axes:
        return np.zeros((1, 0))
    return np.array(list(itertools.product(*axes)), dtype=float)


@dataclass(frozen=True)
class InnerDisturbance:
    """Non-additive disturbance box W minced into cells of width at most mu."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    mu: float
    names: tuple[str, ...]

    def cells(self) -> tuple[np.ndarray, np.ndarray]:
        edges = []
        for lo, hi in zip(self.lo, self.hi):
            k = max(1, math.ceil((hi - lo) / self.mu - 1e-12))
            e = np.linspace(lo, hi, k + 1)
            e[0], e[-1] = lo, hi
            edges.append(e)
        lo_c, hi_c = [], []
        for idx in itertools.product(*[range(len(e) - 1) for e in edges]):
            lo_c.append([edges[d][i] for d, i in enumerate(idx)])
            hi_c.append([edges[d][i + 1] for d, i in enumerate(idx)])
        return np.array(lo_c, dtype=float), np.array(hi_c, dtype=float)


@dataclass
class ModeGroup:
    """Controls sharing one symbolic vector field (u stays symbolic inside)."""

    field: tuple[Expr, ...]
    controls: np.ndarray  # indices into SystemModel.controls


@dataclass(eq=False)
class SystemModel:
    state_names: tuple[str, ...]
    kind: str  # "discrete" or "continuous"
    control_names: tuple[str, ...]
    controls: np.ndarray  # (M, m), enumeration order
    groups: list[ModeGroup]
    delta: float = 0.0
    inner: InnerDisturbance | None = None
    tau: float | None = None
    control_box: tuple[tuple[float, float], ...] | None = None
    eta: float | None = None
    params: dict[str, float] = field(default_factory=dict)
    source: str = ""
    node_budget: int = DEFAULT_NODE_BUDGET
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.delta < 0:
            raise DynamicsError("additive disturbance bound must be non-negative")
        for g in self.groups:
            if len(g.field) != self.n:
                raise DynamicsError("mode field dimension does not match the state dimension")
        if self.kind not in ("discrete", "continuous"):
            raise DynamicsError(f"unknown system kind {self.kind!r}")

    @property
    def n(self) -> int:
        return len(self.state_names)

    @property
    def m(self) -> int:
        return self.controls.shape[1]

    @property
    def num_controls(self) -> int:
        return self.controls.shape[0]

    @property
    def names(self) -> dict[str, tuple[str, ...]]:
        return {"x": self.state_names, "u": self.control_names,
                "w": self.inner.names if self.inner else ()}

    def symbols(self) -> dict[str, Expr]:
        sym = {"pi": ex.const(math.pi)}
        sym.update({k: ex.const(v) for k, v in self.params.items()})
        sym.update({s: ex.var("x", i) for i, s in enumerate(self.state_names)})
        sym.update({s: ex.var("u", i) for i, s in enumerate(self.control_names)})
        if self.inner:
            sym.update({s: ex.var("w", i) for i, s in enumerate(self.inner.names)})
        return sym

    def with_tau(self, tau: float) -> "SystemModel":
        if not tau > 0:
            raise DynamicsError("sampling time must be positive")
        return SystemModel(
            self.state_names, self.kind, self.control_names, self.controls, self.groups,
            self.delta, self.inner, float(tau), self.control_box, self.eta, dict(self.params),
            self.source, self.node_budget)

    def with_delta(self, delta: float) -> "SystemModel":
        return SystemModel(
            self.state_names, self.kind, self.control_names, self.controls, self.groups,
            float(delta), self.inner, self.tau, self.control_box, self.eta, dict(self.params),
            self.source, self.node_budget)

    @property
    def control_groups(self) -> np.ndarray:
        """Mode-group id of every control row."""
        if "gid" not in self._cache:
            gid = np.full(self.num_controls, -1, dtype=int)
            for gi, g in enumerate(self.groups):
                gid[np.asarray(g.controls, dtype=int)] = gi
            self._cache["gid"] = gid
        return self._cache["gid"]

    def group_of(self, u: int) -> int:
        for gi, g in enumerate(self.groups):
            if u in g.controls:
                return gi
        raise DynamicsError(f"control index {u} out of range")

    def disturbance_cells(self) -> tuple[np.ndarray, np.ndarray]:
        if self.inner is None:
            return np.zeros((1, 0)), np.zeros((1, 0))
        if "wcells" not in self._cache:
            self._cache["wcells"] = self.inner.cells()
        return self._cache["wcells"]

    # --- symbolic -------------------------------------------------------------

    def lie(self, group: int, order: int) -> tuple[Expr, ...]:
        """f^[order] for a mode group, with u left symbolic."""
        if order < 0:
            raise DynamicsError("Lie derivative order must be non-negative")
        key = ("lie", group, order)
        if key in self._cache:
            return self._cache[key]
        if order == 0:
            res = tuple(ex.var("x", i) for i in range(self.n))
        else:
            prev = self.lie(group, order - 1)
            f = self.groups[group].field
            res = _jvp(prev, f, self.n)
            size = ex.node_count(res)
            if size > self.node_budget:
                raise NodeBudgetError(
                    f"Lie derivative of order {order} has {size} nodes, over the budget of "
                    f"{self.node_budget}; use a lower Taylor order")
        self._cache[key] = res
        return res

    def jacobian(self, group: int) -> tuple[tuple[Expr, ...], ...]:
        key = ("jac", group)
        if key not in self._cache:
            f = self.groups[group].field
            rows = []
            for fj in f:
                rows.append(tuple(ex.diff(fj, "x", i) for i in range(self.n)))
            self._cache[key] = tuple(rows)
        return self._cache[key]

    def program(self, key, roots: Sequence[Expr]) -> Program:
        k = ("prog", key)
        if k not in self._cache:
            self._cache[k] = Program(roots)
        return self._cache[k]

    def field_program(self, group: int) -> Program:
        return self.program(("f", group), self.groups[group].field)

    def lie_program(self, group: int, order: int) -> Program:
        return self.program(("lie", group, order), self.lie(group, order))

    def jacobian_program(self, group: int) -> Program:
        return self.program(("J", group), [e for row in self.jacobian(group) for e in row])

    # --- identity -------------------------------------------------------------

    def canonical(self) -> str:
        """Stable textual description used for hashing."""
        parts = [f"kind {self.kind}", "state " + " ".join(self.state_names),
                 "controls " + ";".join(",".join(float(v).hex() for v in row) for row in self.controls),
                 f"delta {float(self.delta).hex()}"]
        if self.inner:
            parts.append("inner " + ",".join(float(v).hex() for v in self.inner.lo + self.inner.hi)
                         + f" {float(self.inner.mu).hex()}")
        if self.tau is not None:
            parts.append(f"tau {float(self.tau).hex()}")
        for g in self.groups:
            parts.append("group " + ",".join(map(str, g.controls.tolist())))
            parts.extend(ex.to_string(e, self.names) for e in g.field)
        return "\n".join(parts)

    def system_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    # --- numeric evaluation ------------------------------------------------------

    def step_numeric(self, x: np.ndarray, u_idx: np.ndarray, w: np.ndarray | None = None) -> np.ndarray:
        """Evaluate the field (or map) at points.  x: (B, n), u_idx: (B,)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        u_idx = np.broadcast_to(np.asarray(u_idx), (x.shape[0],))
        out = np.empty_like(x)
        for gi, g in enumerate(self.groups):
            sel = np.isin(u_idx, g.controls)
            if not sel.any():
                continue
            env = {"x": [x[sel, i] for i in range(self.n)],
                   "u": [self.controls[u_idx[sel], j] for j in range(self.m)]}
            if self.inner:
                wv = np.zeros((int(sel.sum()), len(self.inner.names))) if w is None else np.atleast_2d(w)[sel]
                env["w"] = [wv[:, k] for k in range(wv.shape[1])]
            vals = self.field_program(gi).numeric(env)
            for i, v in enumerate(vals):
                out[sel, i] = np.broadcast_to(v, (int(sel.sum()),))
        return out

    def eval_field(self, lo: np.ndarray, hi: np.ndarray, form: str = "natural",
                   controls: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Inclusion of f_u over boxes for every control and disturbance cell.

        lo, hi: (N, n).  Returns lo, hi arrays of shape (N, M, W, n).
        """
        return _eval_vector(self, lo, hi, form, controls, self.field_program, self.jacobian_program)

    def eval_field_blocks(self, lo, hi, form, ulo, uhi, gid, paired: bool = False):
        """Like eval_field, with interval-valued control rows tagged by mode group."""
        return _eval_core(self, lo, hi, form, ulo, uhi, gid, self.field_program,
                          self.jacobian_program, paired)


def _jvp(prev: Sequence[Expr], f: Sequence[Expr], n: int) -> tuple[Expr, ...]:
    memos = [dict() for _ in range(n)]
    out = []
    for p in prev:
        acc = ex.ZERO
        for i in range(n):
            d = ex.diff(p, "x", i, memos[i])
            acc = ex.add(acc, ex.mul(d, f[i]))
        out.append(acc)
    return tuple(out)


def _eval_vector(sys: SystemModel, lo, hi, form, controls, prog_fn, jac_fn):
    ctrl = np.arange(sys.num_controls) if controls is None else np.asarray(controls)
    gid = sys.control_groups[ctrl]
    u = sys.controls[ctrl]
    return _eval_core(sys, lo, hi, form, u, u, gid, prog_fn, jac_fn, paired=False)


def _eval_core(sys: SystemModel, lo, hi, form, ulo, uhi, gid, prog_fn, jac_fn, paired: bool):
    """Shared inclusion evaluation.

    Unpaired: every box against every control row, output (N, M, W, n).
    Paired: box i against control row i, output (N, W, n).  Control rows
    are intervals [ulo, uhi]; each row must lie in the mode group ``gid``.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    N, n = lo.shape
    M = ulo.shape[0]
    wlo, whi = sys.disturbance_cells()
    W = wlo.shape[0]
    if paired:
        out_lo = np.empty((N, W, n))
    else:
        out_lo = np.empty((N, M, W, n))
    out_hi = np.empty_like(out_lo)
    for gi in range(len(sys.groups)):
        cols = np.nonzero(gid == gi)[0]
        if cols.size == 0:
            continue
        if paired:
            xl, xh = lo[cols].reshape(-1, 1, n), hi[cols].reshape(-1, 1, n)
            ush = (-1, 1)
            wsh = (1, W)
            shape = (cols.size, W)
        else:
            xl, xh = lo.reshape(N, 1, 1, n), hi.reshape(N, 1, 1, n)
            ush = (1, -1, 1)
            wsh = (1, 1, W)
            shape = (N, cols.size, W)
        uenv = [IA(ulo[cols, j].reshape(ush), uhi[cols, j].reshape(ush)) for j in range(sys.m)]
        wenv = [IA(wlo[:, k].reshape(wsh), whi[:, k].reshape(wsh)) for k in range(wlo.shape[1])]
        xs = [IA(xl[..., i], xh[..., i]) for i in range(n)]
        if form == "natural":
            r = _natural(prog_fn(gi), xs, uenv, wenv, shape)
        elif form in ("centered", "mixed"):
            r = _centered(prog_fn(gi), jac_fn(gi), xl, xh, uenv, wenv, shape)
            if form == "mixed":
                nat = _natural(prog_fn(gi), xs, uenv, wenv, shape)
                r = [(np.maximum(a[0], b[0]), np.minimum(a[1], b[1])) for a, b in zip(r, nat)]
        else:
            raise DynamicsError(f"unknown inclusion form {form!r}")
        rl = np.stack([a for a, _ in r], axis=-1)
        rh = np.stack([b for _, b in r], axis=-1)
        if paired:
            out_lo[cols], out_hi[cols] = rl, rh
        else:
            out_lo[:, cols], out_hi[:, cols] = rl, rh
    return out_lo, out_hi


def _natural(prog: Program, xs, uenv, wenv, shape):
    vals = prog.interval({"x": xs, "u": uenv, "w": wenv})
    return [(np.broadcast_to(v.lo, shape), np.broadcast_to(v.hi, shape)) for v in vals]


def _centered(prog: Program, jac: Program, xl, xh, uenv, wenv, shape):
    n = xl.shape[-1]
    c = np.clip(0.5 * xl + 0.5 * xh, xl, xh)
    xc = [IA(c[..., i]) for i in range(n)]
    xb = [IA(xl[..., i], xh[..., i]) for i in range(n)]
    fc = prog.interval({"x": xc, "u": uenv, "w": wenv})
    J = jac.interval({"x": xb, "u": uenv, "w": wenv})
    dev = [xb[i] - xc[i] for i in range(n)]
    res = []
    for j in range(len(fc)):
        acc = fc[j]
        for i in range(n):
            acc = acc + J[j * n + i] * dev[i]
        res.append((np.broadcast_to(acc.lo, shape), np.broadcast_to(acc.hi, shape)))
    return res


# --- single-box convenience API ------------------------------------------------

def eval_inclusion(e: Sequence[Expr] | SystemModel, b: Box, u: Sequence[float] = (),
                   form: str = "natural", w: Box | None = None) -> Box:
    """Interval image of an expression vector over a box.

    Unbounded components (e.g. tan across a pole) are returned as the whole
    line and signalled with a DomainWarning.
    """
    if isinstance(e, SystemModel):
        sys = e
        u = np.asarray(u, dtype=float).reshape(-1)
        matches = np.nonzero(np.all(sys.controls == u, axis=1))[0] if sys.m else np.array([0])
        if matches.size == 0:
            raise DynamicsError(f"control {u.tolist()} is not in the control set")
        lo, hi = sys.eval_field(np.array([b.lo]), np.array([b.hi]), form, controls=matches[:1])
        out = Box.from_bounds(lo[0, 0].min(axis=0), hi[0, 0].max(axis=0))
    else:
        exprs = list(e)
        prog = Program(exprs)
        xs = [d.as_ia() for d in b]
        uenv = [IA(float(v)) for v in u]
        wenv = [d.as_ia() for d in w] if w is not None else []
        if form == "natural":
            vals = prog.interval({"x": xs, "u": uenv, "w": wenv})
        elif form in ("centered", "mixed"):
            n = len(b)
            jac = Program([ex.diff(fj, "x", i) for fj in exprs for i in range(n)])
            c = [IA(float(min(max(d.mid, d.lo), d.hi))) for d in b]
            fc = prog.interval({"x": c, "u": uenv, "w": wenv})
            J = jac.interval({"x": xs, "u": uenv, "w": wenv})
            vals = []
            for j in range(len(exprs)):
                acc = fc[j]
                for i in range(n):
                    acc = acc + J[j * n + i] * (xs[i] - c[i])
                vals.append(acc)
            if form == "mixed":
                nat = prog.interval({"x": xs, "u": uenv, "w": wenv})
                vals = [IA(np.maximum(a.lo, b_.lo), np.minimum(a.hi, b_.hi)) for a, b_ in zip(vals, nat)]
        else:
            raise DynamicsError(f"unknown inclusion form {form!r}")
        out = Box(tuple(Interval(float(v.lo), float(v.hi)) for v in vals))
    if not all(math.isfinite(d.lo) and math.isfinite(d.hi) for d in out):
        warnings.warn("inclusion function is unbounded on this box", DomainWarning, stacklevel=2)
    return out


def lie_derivative(sys: SystemModel, u: int | Sequence[float], order: int) -> tuple[Expr, ...]:
    """f_u^[order] with the control values substituted as constants."""
    if sys.kind != "continuous":
        raise DynamicsError("Lie derivatives are defined for continuous-time fields only")
    if isinstance(u, (int, np.integer)):
        idx = int(u)
    else:
        uv = np.asarray(u, dtype=float).reshape(-1)
        hits = np.nonzero(np.all(sys.controls == uv, axis=1))[0]
        if hits.size == 0:
            raise DynamicsError(f"control {uv.tolist()} is not in the control set")
        idx = int(hits[0])
    g = sys.group_of(idx)
    mapping = {("u", j): ex.const(sys.controls[idx, j]) for j in range(sys.m)}
    return tuple(ex.substitute(e, mapping) for e in sys.lie(g, order))


# --- specification -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Spec:
    """Reach-and-stay problem data over a state-space box.

    The target is the union of ``target`` boxes (the whole of X when none are
    given) intersected with ``{g <= 0}`` for every ``target_ineq`` entry.  Each
    obstacle is a conjunction ``{h_1 <= 0, ..., h_k <= 0}`` removed from X.
    """

    X: Box
    target: tuple[Box, ...] = ()
    target_ineq: tuple[Expr, ...] = ()
    obstacles: tuple[tuple[Expr, ...], ...] = ()

    def __post_init__(self):
        for t in self.target:
            if len(t) != len(self.X):
                raise DynamicsError("target box dimension differs from the state space")
            if not t.is_empty and not t.subset_of(self.X):
                raise DynamicsError(f"target box {t} is not inside the state space")
        for e in self.target_ineq + tuple(h for o in self.obstacles for h in o):
            bad = [k for k, i in ex.free_vars([e]) if k != "x" or i >= len(self.X)]
            if bad:
                raise DynamicsError("spec constraints may only reference state variables")

    @property
    def n(self) -> int:
        return len(self.X)

    def in_target(self, x: np.ndarray) -> np.ndarray:
        """Point membership in the target minus obstacles, for simulation."""
        x = np.atleast_2d(x)
        ok = np.zeros(x.shape[0], dtype=bool)
        boxes = self.target or (self.X,)
        for t in boxes:
            ok |= np.all((x >= t.lo) & (x <= t.hi), axis=1)
        if self.target_ineq:
            vals = Program(self.target_ineq).numeric({"x": [x[:, i] for i in range(x.shape[1])]})
            for v in vals:
                ok &= np.broadcast_to(v <= 0, ok.shape)
        return ok & ~self.in_obstacle(x)

    def in_obstacle(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        hit = np.zeros(x.shape[0], dtype=bool)
        for o in self.obstacles:
            vals = Program(o).numeric({"x": [x[:, i] for i in range(x.shape[1])]})
            inside = np.ones(x.shape[0], dtype=bool)
            for v in vals:
                inside &= np.broadcast_to(v <= 0, inside.shape)
            hit |= inside
        return hit

    def in_X(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x >= self.X.lo) & (x <= self.X.hi), axis=1) & ~self.in_obstacle(x)


# --- DSL parser ---------------------------------------------------------------------

_KEYWORDS = {"state", "param", "control", "disturbance", "when", "sampling",
             "finite", "box", "step", "additive", "inner", "and"}


class _DSL:
    def __init__(self, text: str):
        self.text = text
        self.s = TokenStream(tokenize(text))
        self.states: list[str] = []
        self.params: dict[str, float] = {}
        self.control_names: list[str] = []
        self.controls: np.ndarray | None = None
        self.control_box = None
        self.eta = None
        self.delta = 0.0
        self.inner: InnerDisturbance | None = None
        self.tau: float | None = None
        self.kind: str | None = None
        self.base: dict[int, Expr] = {}
        self.guards: list[tuple[list[tuple[int, float]], dict[int, Expr]]] = []

    def symbols(self) -> dict[str, Expr]:
        sym = {"pi": ex.const(math.pi)}
        sym.update({k: ex.const(v) for k, v in self.params.items()})
        sym.update({s: ex.var("x", i) for i, s in enumerate(self.states)})
        sym.update({s: ex.var("u", i) for i, s in enumerate(self.control_names)})
        if self.inner:
            sym.update({s: ex.var("w", i) for i, s in enumerate(self.inner.names)})
        return sym

    def ident(self) -> str:
        t = self.s.peek()
        if t.kind != "ident":
            raise ParseError(f"expected a name, found {t.text or 'end of input'!r}", t.line, t.col)
        self.s.next()
        return t.text

    def new_name(self) -> str:
        t = self.s.peek()
        name = self.ident()
        if name in _KEYWORDS or name in ex.FUNCTIONS or name == "pi":
            raise ParseError(f"{name!r} is reserved", t.line, t.col)
        if name in self.symbols() and name != "pi":
            raise ParseError(f"{name!r} is already declared", t.line, t.col)
        return name

    def expr(self) -> Expr:
        return ExprParser(self.s, self.symbols()).parse()

    def number(self) -> float:
        t = self.s.peek()
        e = ExprParser(self.s, {"pi": ex.const(math.pi), **{k: ex.const(v) for k, v in self.params.items()}}).parse()
        if ex.free_vars([e]):
            raise ParseError("expected a constant expression", t.line, t.col)
        return float(Program([e]).numeric({})[0])

    def box(self) -> list[tuple[float, float]]:
        dims = []
        while True:
            self.s.expect("[")
            lo = self.number()
            self.s.expect(",")
            hi = self.number()
            t = self.s.expect("]")
            if lo > hi:
                raise ParseError("box lower bound exceeds upper bound", t.line, t.col)
            reps = 1
            if self.s.accept("^"):
                rt = self.s.next()
                if rt.kind != "num" or not rt.text.isdigit() or int(rt.text) < 1:
                    raise ParseError("box exponent must be a positive integer", rt.line, rt.col)
                reps = int(rt.text)
            dims.extend([(lo, hi)] * reps)
            if not self.s.accept("*"):
                return dims

    def run(self) -> SystemModel:
        s = self.s
        while s.peek().kind != "eof":
            t = s.peek()
            if s.accept("state"):
                if self.states:
                    raise ParseError("state declared twice", t.line, t.col)
                while not s.at(";"):
                    self.states.append(self.new_name())
                s.expect(";")
                if not self.states:
                    raise ParseError("state declaration lists no variables", t.line, t.col)
            elif s.accept("param"):
                name = self.new_name()
                s.expect("=")
                self.params[name] = self.number()
                s.expect(";")
            elif s.accept("control"):
                self.control_decl(t)
            elif s.accept("disturbance"):
                self.disturbance_decl(t)
            elif s.accept("sampling"):
                self.tau = self.number()
                if not self.tau > 0:
                    raise ParseError("sampling time must be positive", t.line, t.col)
                s.expect(";")
            elif s.accept("when"):
                self.when_block(t)
            elif t.kind == "ident":
                idx, e = self.equation()
                if idx in self.base:
                    raise ParseError(f"second equation for {self.states[idx]!r}", t.line, t.col)
                self.base[idx] = e
            else:
                raise ParseError(f"unexpected token {t.text!r}", t.line, t.col)
        return self.build()

    def control_decl(self, t):
        s = self.s
        if self.controls is not None:
            raise ParseError("control declared twice", t.line, t.col)
        names = []
        while s.peek().kind == "ident" and s.peek().text not in ("finite", "box"):
            names.append(self.new_name())
        if s.accept("finite"):
            s.expect("{")
            rows = []
            while True:
                if s.accept("("):
                    row = [self.number()]
                    while s.accept(","):
                        row.append(self.number())
                    s.expect(")")
                else:
                    row = [self.number()]
                rows.append(row)
                if not s.accept(","):
                    break
            s.expect("}")
            if len({len(r) for r in rows}) != 1:
                raise ParseError("finite control vectors differ in length", t.line, t.col)
            ctrl = np.array(rows, dtype=float)
        elif s.accept("box"):
            dims = self.box()
            s.expect("step")
            eta = self.number()
            try:
                ctrl = sample_controls(dims, eta)
            except DynamicsError as err:
                raise ParseError(str(err), t.line, t.col) from None
            self.control_box = tuple(dims)
            self.eta = eta
        else:
            raise s.error("expected 'finite' or 'box'")
        s.expect(";")
        m = ctrl.shape[1]
        if names and len(names) != m:
            raise ParseError(f"{len(names)} control names for {m} control dimensions", t.line, t.col)
        self.control_names = names or [f"u{j + 1}" for j in range(m)]
        for nm in self.control_names:
            if nm in self.states or nm in self.params:
                raise ParseError(f"{nm!r} is already declared", t.line, t.col)
        self.controls = ctrl

    def disturbance_decl(self, t):
        s = self.s
        if s.accept("additive"):
            self.delta = self.number()
            if self.delta < 0:
                raise ParseError("disturbance bound must be non-negative", t.line, t.col)
            s.expect(";")
            return
        s.expect("inner")
        if self.inner is not None:
            raise ParseError("inner disturbance declared twice", t.line, t.col)
        names = []
        while s.peek().kind == "ident" and s.peek().text != "box":
            names.append(self.new_name())
        s.expect("box")
        dims = self.box()
        s.expect("step")
        mu = self.number()
        if not mu > 0:
            raise ParseError("disturbance step must be positive", t.line, t.col)
        s.expect(";")
        if names and len(names) != len(dims):
            raise ParseError("disturbance names do not match its dimension", t.line, t.col)
        names = names or [f"w{k + 1}" for k in range(len(dims))]
        self.inner = InnerDisturbance(tuple(d[0] for d in dims), tuple(d[1] for d in dims), mu, tuple(names))

    def equation(self) -> tuple[int, Expr]:
        s = self.s
        t = s.peek()
        name = self.ident()
        if name not in self.states:
            raise ParseError(f"{name!r} is not a declared state", t.line, t.col)
        if s.accept("'"):
            kind = "continuous"
        elif s.accept("+"):
            kind = "discrete"
        else:
            raise s.error("expected ' or + after the state name")
        if self.kind and self.kind != kind:
            raise ParseError("cannot mix continuous and discrete equations", t.line, t.col)
        self.kind = kind
        s.expect("=")
        e = self.expr()
        s.expect(";")
        return self.states.index(name), e

    def when_block(self, t):
        s = self.s
        conds = []
        while True:
            ct = s.peek()
            name = self.ident()
            if name not in self.control_names:
                raise ParseError(f"{name!r} is not a control variable", ct.line, ct.col)
            s.expect("==")
            conds.append((self.control_names.index(name), self.number()))
            if not s.accept("and"):
                break
        s.expect("{")
        eqs: dict[int, Expr] = {}
        while not s.accept("}"):
            et = s.peek()
            idx, e = self.equation()
            if idx in eqs:
                raise ParseError("duplicate equation inside a when block", et.line, et.col)
            eqs[idx] = e
        self.guards.append((conds, eqs))

    def build(self) -> SystemModel:
        if not self.states:
            raise DynamicsError("no state declaration")
        missing = [self.states[i] for i in range(len(self.states)) if i not in self.base]
        if missing:
            raise DynamicsError(f"dimension mismatch: no equation for {', '.join(missing)}")
        ctrl = self.controls if self.controls is not None else np.zeros((1, 0))
        order: dict[tuple[int, ...], list[int]] = {}
        for ci, row in enumerate(ctrl):
            active = tuple(gi for gi, (conds, _) in enumerate(self.guards)
                           if all(row[j] == v for j, v in conds))
            order.setdefault(active, []).append(ci)
        # controls whose guards yield the same field share a group, however the guards were written
        merged: dict[tuple[Expr, ...], list[int]] = {}
        for active, idx in order.items():
            f = dict(self.base)
            for gi in active:
                f.update(self.guards[gi][1])
            merged.setdefault(tuple(f[i] for i in range(len(self.states))), []).extend(idx)
        groups = [ModeGroup(fld, np.array(sorted(idx))) for fld, idx in merged.items()]
        return SystemModel(
            tuple(self.states), self.kind or "discrete", tuple(self.control_names), ctrl, groups,
            float(self.delta), self.inner, self.tau, self.control_box, self.eta, dict(self.params),
            self.text)


def parse(text: str) -> SystemModel:
    """Parse DSL source into a SystemModel."""
    return _DSL(text).run()


def parse_state_expr(sys_or_names: SystemModel | Sequence[str], text: str,
                     params: Mapping[str, float] | None = None) -> Expr:
    """Parse an expression over state variables (for targets and obstacles)."""
    if isinstance(sys_or_names, SystemModel):
        names = sys_or_names.state_names
        params = {**sys_or_names.params, **(params or {})}
    else:
        names = tuple(sys_or_names)
    sym = {"pi": ex.const(math.pi)}
    sym.update({k: ex.const(v) for k, v in (params or {}).items()})
    sym.update({s: ex.var("x", i) for i, s in enumerate(names)})
    return ex.parse_expr(text, sym)


def to_source(sys: SystemModel) -> str:
    """Print a model back to DSL text (equations printed from the AST)."""
    names = sys.names
    lines = ["state " + " ".join(sys.state_names) + ";"]
    if sys.m:
        rows = ", ".join("(" + ", ".join(repr(float(v)) for v in r) + ")" for r in sys.controls)
        lines.append("control " + " ".join(sys.control_names) + " finite {" + rows + "};")
    if sys.delta:
        lines.append(f"disturbance additive {sys.delta!r};")
    if sys.inner:
        dims = " * ".join(f"[{lo!r}, {hi!r}]" for lo, hi in zip(sys.inner.lo, sys.inner.hi))
        lines.append(f"disturbance inner {' '.join(sys.inner.names)} box {dims} step {sys.inner.mu!r};")
    if sys.tau is not None:
        lines.append(f"sampling {sys.tau!r};")
    mark = "'" if sys.kind == "continuous" else "+"
    base = sys.groups[0]
    for i, e in enumerate(base.field):
        lines.append(f"{sys.state_names[i]}{mark} = {ex.to_string(e, names)};")
    for g in sys.groups[1:]:
        # Extra groups are written as guards on the full control vector.
        for ci in g.controls:
            cond = " and ".join(f"{sys.control_names[j]} == {float(sys.controls[ci, j])!r}" for j in range(sys.m))
            body = " ".join(f"{sys.state_names[i]}{mark} = {ex.to_string(e, names)};"
                            for i, e in enumerate(g.field) if e is not base.field[i])
            lines.append(f"when {cond} {{ {body} }}")
    return "\n".join(lines) + "\n"

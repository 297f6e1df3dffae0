"""Validated one-step reach sets of sampled-data systems by interval Taylor series."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import interval as ia
from .dynamics import DynamicsError, SystemModel
from .interval import IA, Box, Interval


class ReachError(ValueError):
    pass


@dataclass(frozen=True)
class TaylorConfig:
    tau: float
    order: int = 4          # k in the Taylor sum; remainder uses order k+1
    k_max: int = 10
    kbar: int = 2           # first order tried for the a priori enclosure
    eps_enclosure: float = 0.05  # pad half-width is 2*eps_enclosure
    alpha: float = 0.5
    K: float | None = None
    delta: float = 0.0
    kbar_retries: int = 3
    halvings: int = 2

    def __post_init__(self):
        if not self.tau > 0:
            raise ReachError("sampling time must be positive")
        if not 0 < self.alpha < 1:
            raise ReachError("alpha must lie in (0, 1)")
        if self.k_max < 1 or self.kbar < 1:
            raise ReachError("Taylor orders must be at least 1")
        if not 0 < self.eps_enclosure < 1:
            raise ReachError("enclosure pad must lie in (0, 1)")
        if self.order < 0 or self.order + 1 > self.k_max + 1:
            raise ReachError("Taylor order exceeds k_max")
        if self.delta < 0:
            raise ReachError("disturbance bound must be non-negative")


@dataclass(frozen=True)
class Enclosure:
    box: Box
    kbar: int
    success: bool


def _coef(tau: float, i: int) -> IA:
    """Rigorous enclosure of tau^i / i!."""
    return ia.power(IA(tau), i) / IA(float(math.factorial(i)))


def _zero_to(c: IA) -> IA:
    return IA(0.0, c.hi)


def _stack(vals: list[IA]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([v.lo for v in vals], axis=-1), np.stack([v.hi for v in vals], axis=-1)


def _pt(u: np.ndarray) -> np.ndarray:
    """Point control rows (P, m) as degenerate intervals (P, 2, m)."""
    return np.stack([u, u], axis=1)


class _Flat:
    """Taylor machinery for one mode group over flat arrays of (box, u, w) triples."""

    def __init__(self, sys: SystemModel, group: int, cfg: TaylorConfig):
        self.sys = sys
        self.g = group
        self.cfg = cfg

    def lie(self, i: int, lo, hi, u, wl, wh) -> list[IA]:
        P = lo.shape[0]
        env = {
            "x": [IA(lo[:, j], hi[:, j]) for j in range(lo.shape[1])],
            "u": [IA(u[:, 0, j], u[:, 1, j]) for j in range(u.shape[2])],
            "w": [IA(wl[:, k], wh[:, k]) for k in range(wl.shape[1])],
        }
        out = self.sys.lie_program(self.g, i).interval(env)
        return [IA(np.broadcast_to(v.lo, (P,)), np.broadcast_to(v.hi, (P,))) for v in out]

    def enclose(self, lo, hi, u, wl, wh, tau, D: dict[int, list[IA]]):
        """A priori enclosure per triple; returns (ylo, yhi, kbar, ok)."""
        cfg = self.cfg
        P, n = lo.shape
        ok = np.zeros(P, dtype=bool)
        ylo = np.full((P, n), -np.inf)
        yhi = np.full((P, n), np.inf)
        kb_used = np.zeros(P, dtype=int)
        pad = IA(-2.0 * cfg.eps_enclosure, 2.0 * cfg.eps_enclosure)
        last = min(cfg.kbar + cfg.kbar_retries, cfg.k_max)
        for kb in range(cfg.kbar, last + 1):
            idx = np.nonzero(~ok)[0]
            if idx.size == 0:
                break
            base = [IA(lo[idx, j], hi[idx, j]) for j in range(n)]
            for i in range(1, kb):
                Di = self._D(D, i, lo, hi, u, wl, wh)
                c = _zero_to(_coef(tau, i))
                base = [base[j] + Di[j][idx] * c for j in range(n)]
            yhat = [b + pad for b in base]
            yl, yh = _stack(yhat)
            F = self.lie(kb, yl, yh, u[idx], wl[idx], wh[idx])
            c = _zero_to(_coef(tau, kb))
            T = [base[j] + F[j] * c for j in range(n)]
            tl, th = _stack(T)
            good = np.all((tl >= yl) & (th <= yh) & np.isfinite(tl) & np.isfinite(th), axis=1)
            sel = idx[good]
            ylo[sel], yhi[sel] = yl[good], yh[good]
            kb_used[sel] = kb
            ok[sel] = True
        return ylo, yhi, kb_used, ok

    def _D(self, D, i, lo, hi, u, wl, wh):
        if i not in D:
            D[i] = self.lie(i, lo, hi, u, wl, wh)
        return D[i]

    def step(self, lo, hi, u, wl, wh, tau, depth=0):
        """Over-approximate the reach set at time tau.  Failed triples get the whole line."""
        cfg = self.cfg
        P, n = lo.shape
        out_lo = np.full((P, n), -np.inf)
        out_hi = np.full((P, n), np.inf)
        if P == 0:
            return out_lo, out_hi
        D: dict[int, list[IA]] = {}
        ylo, yhi, _, ok = self.enclose(lo, hi, u, wl, wh, tau, D)
        idx = np.nonzero(ok)[0]
        if idx.size:
            k = cfg.order
            acc = [IA(lo[idx, j], hi[idx, j]) for j in range(n)]
            for i in range(1, k + 1):
                Di = self._D(D, i, lo, hi, u, wl, wh)
                c = _coef(tau, i)
                acc = [acc[j] + Di[j][idx] * c for j in range(n)]
            R = self.lie(k + 1, ylo[idx], yhi[idx], u[idx], wl[idx], wh[idx])
            c = _coef(tau, k + 1)
            acc = [acc[j] + R[j] * c for j in range(n)]
            out_lo[idx], out_hi[idx] = _stack(acc)
        bad = np.nonzero(~ok)[0]
        if bad.size and depth < cfg.halvings:
            h = tau / 2.0
            l1, h1 = self.step(lo[bad], hi[bad], u[bad], wl[bad], wh[bad], h, depth + 1)
            fin = np.all(np.isfinite(l1) & np.isfinite(h1), axis=1)
            if fin.any():
                sub = bad[fin]
                l2, h2 = self.step(l1[fin], h1[fin], u[sub], wl[sub], wh[sub], h, depth + 1)
                out_lo[sub], out_hi[sub] = l2, h2
        return out_lo, out_hi


class TaylorImage:
    """Image operator for sampled-data systems.

    Called with box bounds (N, n) it returns (N, M, W, n) bound arrays, one
    reach set per control and disturbance cell.
    """

    def __init__(self, sys: SystemModel, cfg: TaylorConfig):
        if sys.kind != "continuous":
            raise ReachError("Taylor reach sets need a continuous-time field")
        self.sys = sys
        self.cfg = cfg
        self.flats = [_Flat(sys, g, cfg) for g in range(len(sys.groups))]
        self.num_controls = sys.num_controls
        self.num_cells = sys.disturbance_cells()[0].shape[0]
        # build the symbolic derivatives up front so errors surface early
        for g in range(len(sys.groups)):
            sys.lie(g, max(cfg.order + 1, min(cfg.kbar + cfg.kbar_retries, cfg.k_max)))

    def __call__(self, lo: np.ndarray, hi: np.ndarray, controls: np.ndarray | None = None):
        ctrl = np.arange(self.sys.num_controls) if controls is None else np.asarray(controls)
        u = self.sys.controls[ctrl]
        return self._grid(lo, hi, u, u, self.sys.control_groups[ctrl])

    def block_image(self, lo, hi, ulo, uhi, gid):
        """Images over interval control rows (each inside one mode group): (N, B, W, n)."""
        return self._grid(lo, hi, ulo, uhi, gid)

    def pair_image(self, lo, hi, ctrl):
        """Image of box i under control ctrl[i]: (P, W, n)."""
        sys = self.sys
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        P, n = lo.shape
        wlo, whi = sys.disturbance_cells()
        W = wlo.shape[0]
        out_lo = np.empty((P, W, n))
        out_hi = np.empty((P, W, n))
        gid = sys.control_groups[ctrl]
        for gi in range(len(sys.groups)):
            rows = np.nonzero(gid == gi)[0]
            if rows.size == 0:
                continue
            bi, wi = np.meshgrid(rows, np.arange(W), indexing="ij")
            bi, wi = bi.ravel(), wi.ravel()
            uv = sys.controls[ctrl[bi]]
            u = np.stack([uv, uv], axis=1)
            rl, rh = self.flats[gi].step(lo[bi], hi[bi], u, wlo[wi], whi[wi], self.cfg.tau)
            out_lo[rows] = rl.reshape(rows.size, W, n)
            out_hi[rows] = rh.reshape(rows.size, W, n)
        return out_lo, out_hi

    def _grid(self, lo, hi, ulo, uhi, gid):
        sys = self.sys
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        N, n = lo.shape
        M = ulo.shape[0]
        wlo, whi = sys.disturbance_cells()
        W = wlo.shape[0]
        out_lo = np.empty((N, M, W, n))
        out_hi = np.empty((N, M, W, n))
        for gi in range(len(sys.groups)):
            cols = np.nonzero(gid == gi)[0]
            if cols.size == 0:
                continue
            Mg = cols.size
            bi, ci, wi = np.meshgrid(np.arange(N), cols, np.arange(W), indexing="ij")
            bi, ci, wi = bi.ravel(), ci.ravel(), wi.ravel()
            u = np.stack([ulo[ci], uhi[ci]], axis=1)
            rl, rh = self.flats[gi].step(lo[bi], hi[bi], u, wlo[wi], whi[wi], self.cfg.tau)
            out_lo[:, cols] = rl.reshape(N, Mg, W, n)
            out_hi[:, cols] = rh.reshape(N, Mg, W, n)
        return out_lo, out_hi


def _control_index(sys: SystemModel, u) -> int:
    if isinstance(u, (int, np.integer)):
        return int(u)
    uv = np.asarray(u, dtype=float).reshape(-1)
    if sys.m == 0:
        return 0
    hits = np.nonzero(np.all(sys.controls == uv, axis=1))[0]
    if hits.size == 0:
        raise DynamicsError(f"control {uv.tolist()} is not in the control set")
    return int(hits[0])


def apriori_enclosure(sys: SystemModel, b0: Box, u, cfg: TaylorConfig) -> Enclosure:
    """A priori enclosure of the flow from b0 over [0, tau] for one control."""
    ci = _control_index(sys, u)
    g = sys.group_of(ci)
    flat = _Flat(sys, g, cfg)
    wlo, whi = sys.disturbance_cells()
    lo = np.array([b0.lo]).repeat(wlo.shape[0], axis=0)
    hi = np.array([b0.hi]).repeat(wlo.shape[0], axis=0)
    uu = _pt(sys.controls[[ci] * wlo.shape[0]])
    ylo, yhi, kb, ok = flat.enclose(lo, hi, uu, wlo, whi, cfg.tau, {})
    if not ok.all():
        return Enclosure(Box.from_bounds([-np.inf] * sys.n, [np.inf] * sys.n), int(kb.max()), False)
    return Enclosure(Box.from_bounds(ylo.min(axis=0), yhi.max(axis=0)), int(kb.max()), True)


def reach_over(sys: SystemModel, b0: Box, u, cfg: TaylorConfig) -> Box:
    """Box enclosing every state reachable from b0 after tau under control u."""
    ci = _control_index(sys, u)
    lo, hi = TaylorImage(sys, cfg)(np.array([b0.lo]), np.array([b0.hi]), np.array([ci]))
    return Box.from_bounds(lo[0, 0].min(axis=0), hi[0, 0].max(axis=0))


def select_order(cfg: TaylorConfig, wbar: float, kbar: int | None = None) -> tuple[int, float]:
    """Taylor order k and precision bound epsilon for robust completeness.

    The closed-form order is only a seed: k is raised until
    K*wbar*tau^(k+1)/(kbar+1)! <= (1-alpha)*delta*tau holds as written.
    """
    kbar = cfg.kbar if kbar is None else kbar
    if not cfg.delta > 0:
        raise ReachError("order selection needs a positive disturbance bound")
    if cfg.K is None or not cfg.K > 0:
        raise ReachError("order selection needs the width constant K")
    K, a, d, tau = cfg.K, cfg.alpha, cfg.delta, cfg.tau
    fact = math.factorial(kbar + 1)
    if wbar <= 0:
        k = max(kbar - 1, 0)
    else:
        seed = (math.log((1 - a) * d / (K * wbar)) + math.log(fact)) / math.log(tau)
        k = max(kbar - 1, math.ceil(seed), 0)
        while K * wbar * tau ** (k + 1) / fact > (1 - a) * d * tau:
            k += 1
            if k > cfg.k_max:
                break
    if k > cfg.k_max:
        raise ReachError(f"required Taylor order {k} exceeds k_max={cfg.k_max}")
    return k, eps_bound(cfg)


def eps_bound(cfg: TaylorConfig) -> float:
    """Largest precision allowed by the error split: alpha*tau*delta/(K*e^tau)."""
    if cfg.K is None:
        raise ReachError("precision bound needs the width constant K")
    return cfg.alpha * cfg.tau * cfg.delta / (cfg.K * math.exp(cfg.tau))


def estimate_K(sys: SystemModel, X: Box, k_max: int, samples: int = 1000,
               max_width: float | None = None, seed: int = 0, inflate: float = 2.0) -> float:
    """Empirical width-ratio constant: max wid([f]^[i](b))/wid(b), times ``inflate``.

    Boxes are drawn uniformly inside X with widths log-uniform up to
    ``max_width`` (default a tenth of X's width).
    """
    rng = np.random.default_rng(seed)
    n = sys.n
    Xlo, Xhi = np.array(X.lo), np.array(X.hi)
    span = Xhi - Xlo
    wmax = float(max_width) if max_width else 0.1 * float(span.max())
    widths = np.exp(rng.uniform(math.log(wmax * 1e-3), math.log(wmax), size=samples))
    w = np.minimum(widths[:, None] * np.ones(n), span)
    lo = Xlo + rng.uniform(size=(samples, n)) * (span - w)
    hi = lo + w
    wid = np.max(hi - lo, axis=1)
    wl, wh = sys.disturbance_cells()
    ratio = 1.0
    for gi, g in enumerate(sys.groups):
        u = _pt(sys.controls[g.controls[rng.integers(0, len(g.controls), size=samples)]])
        wi = rng.integers(0, wl.shape[0], size=samples)
        flat = _Flat(sys, gi, TaylorConfig(tau=1.0, k_max=max(k_max, 1), order=0))
        for i in range(1, k_max + 1):
            vals = flat.lie(i, lo, hi, u, wl[wi], wh[wi])
            vw = np.max(np.stack([v.hi - v.lo for v in vals], axis=-1), axis=1)
            ratio = max(ratio, float(np.max(vw / wid)))
    return inflate * ratio


def with_order(cfg: TaylorConfig, k: int) -> TaylorConfig:
    return replace(cfg, order=int(k), k_max=max(cfg.k_max, int(k) + 1))

"""Partition-based controllers: extraction, lookup, persistence and closed-loop simulation."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

from . import expr as ex
from .dynamics import SystemModel, Spec, parse, parse_state_expr
from .interval import Box

FORMAT_VERSION = 1
TIE_POLICIES = ("first", "random", "minimum-norm")


class ControllerError(ValueError):
    pass


class NotRealizableError(ControllerError):
    """Empty winning set: the specification is not realizable at this precision."""


class ControllerFormatError(ControllerError):
    pass


def not_realizable_message(eps: float, rho: float | None = None) -> str:
    msg = f"specification not realizable at this precision (eps = {eps:g})"
    if rho is not None:
        msg += f"; the system is not delta-realizable for delta >= {rho * eps:g} (rho = {rho:g})"
    return msg


# --- spec and float encoding -------------------------------------------------------

def _hex(v) -> str:
    return float(v).hex()


def _unhex(s: str) -> float:
    try:
        return float.fromhex(s)
    except (TypeError, ValueError) as err:
        raise ControllerFormatError(f"bad float encoding {s!r}") from err


def spec_to_dict(spec: Spec, state_names) -> dict:
    names = {"x": tuple(state_names)}
    return {
        "X": {"lo": [_hex(v) for v in spec.X.lo], "hi": [_hex(v) for v in spec.X.hi]},
        "target": [{"lo": [_hex(v) for v in b.lo], "hi": [_hex(v) for v in b.hi]} for b in spec.target],
        "target_ineq": [ex.to_string(e, names) for e in spec.target_ineq],
        "obstacles": [[ex.to_string(e, names) for e in o] for o in spec.obstacles],
    }


def spec_from_dict(d: dict, state_names) -> Spec:
    def box(b):
        return Box.from_bounds([_unhex(v) for v in b["lo"]], [_unhex(v) for v in b["hi"]])

    return Spec(
        box(d["X"]),
        tuple(box(b) for b in d.get("target", [])),
        tuple(parse_state_expr(state_names, s) for s in d.get("target_ineq", [])),
        tuple(tuple(parse_state_expr(state_names, s) for s in o) for o in d.get("obstacles", [])),
    )


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def spec_digest(spec: Spec, state_names) -> str:
    return hashlib.sha256(_dumps(spec_to_dict(spec, state_names)).encode()).hexdigest()


# --- controller -------------------------------------------------------------------------

class _BucketIndex:
    """Uniform bucket grid over the cells' bounding box for point location."""

    def __init__(self, lo: np.ndarray, hi: np.ndarray):
        self.lo, self.hi = lo, hi
        N, n = lo.shape
        self.origin = lo.min(axis=0) if N else np.zeros(n)
        top = hi.max(axis=0) if N else np.ones(n)
        per = max(1, int(math.ceil(max(N, 1) ** (1.0 / n))))
        self.shape = np.full(n, per)
        span = np.where(top > self.origin, top - self.origin, 1.0)
        self.step = span / per
        a = self._coord(lo)
        b = self._coord(hi)
        keys, owners = [], []
        for i in range(N):
            rng = [np.arange(a[i, d], b[i, d] + 1) for d in range(n)]
            grid = np.stack(np.meshgrid(*rng, indexing="ij"), axis=-1).reshape(-1, n)
            keys.append(np.ravel_multi_index(grid.T, self.shape))
            owners.append(np.full(grid.shape[0], i))
        keys = np.concatenate(keys) if keys else np.zeros(0, dtype=int)
        owners = np.concatenate(owners) if owners else np.zeros(0, dtype=int)
        order = np.lexsort((owners, keys))
        self.owners = owners[order]
        self.starts = np.searchsorted(keys[order], np.arange(int(np.prod(self.shape)) + 1))

    def _coord(self, x):
        c = np.floor((x - self.origin) / self.step).astype(int)
        return np.clip(c, 0, self.shape - 1)

    def candidates(self, x: np.ndarray) -> np.ndarray:
        k = int(np.ravel_multi_index(self._coord(x), self.shape))
        return self.owners[self.starts[k]:self.starts[k + 1]]

    def containing(self, x: np.ndarray) -> np.ndarray:
        """Indices of the closed cells that contain x (sorted)."""
        x = np.asarray(x, dtype=float)
        if self.lo.shape[0] == 0 or np.any(~np.isfinite(x)):
            return np.zeros(0, dtype=int)
        c = self.candidates(x)
        ok = np.all((self.lo[c] <= x) & (x <= self.hi[c]), axis=1)
        return c[ok]


@dataclass
class Controller:
    """Memoryless strategy: the union of control sets of the cells that contain x."""

    lo: np.ndarray               # (K, n) cell bounds
    hi: np.ndarray
    cell_controls: list[np.ndarray]  # sorted control indices per cell
    controls: np.ndarray         # (M, m) control values
    metadata: dict = field(default_factory=dict)
    _index: _BucketIndex | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float).reshape(len(self.cell_controls), -1)
        self.hi = np.asarray(self.hi, dtype=float).reshape(self.lo.shape)
        for c in self.cell_controls:
            if len(c) == 0:
                raise ControllerError("every cell needs at least one control")

    def __len__(self):
        return self.lo.shape[0]

    @property
    def n(self) -> int:
        return self.lo.shape[1]

    @property
    def index(self) -> _BucketIndex:
        if self._index is None:
            self._index = _BucketIndex(self.lo, self.hi)
        return self._index

    def cells_at(self, x) -> np.ndarray:
        return self.index.containing(np.asarray(x, dtype=float).reshape(self.n))

    def lookup(self, x) -> np.ndarray:
        """Sorted control indices allowed at x (empty outside every cell)."""
        cells = self.cells_at(x)
        if cells.size == 0:
            return np.zeros(0, dtype=int)
        if cells.size == 1:
            return self.cell_controls[int(cells[0])]
        return np.unique(np.concatenate([self.cell_controls[int(c)] for c in cells]))

    def lookup_values(self, x) -> np.ndarray:
        return self.controls[self.lookup(x)]

    # --- persistence -----------------------------------------------------------------

    def to_json(self) -> str:
        body = {
            "format_version": FORMAT_VERSION,
            "metadata": self.metadata,
            "controls": [[_hex(v) for v in row] for row in self.controls],
            "cells": [{"lo": [_hex(v) for v in self.lo[i]], "hi": [_hex(v) for v in self.hi[i]],
                       "controls": [int(c) for c in self.cell_controls[i]]} for i in range(len(self))],
        }
        digest = hashlib.sha256(_dumps(body).encode()).hexdigest()
        body["digest"] = digest
        return _dumps(body) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "Controller":
        try:
            body = json.loads(text)
        except json.JSONDecodeError as err:
            raise ControllerFormatError(f"controller file is not valid JSON: {err}") from None
        if not isinstance(body, dict):
            raise ControllerFormatError("controller file must hold a JSON object")
        version = body.get("format_version")
        if version != FORMAT_VERSION:
            raise ControllerFormatError(f"unsupported format version {version!r}")
        for key in ("metadata", "controls", "cells", "digest"):
            if key not in body:
                raise ControllerFormatError(f"missing field {key!r}")
        digest = body.pop("digest")
        if hashlib.sha256(_dumps(body).encode()).hexdigest() != digest:
            raise ControllerFormatError("digest mismatch: controller file was modified or damaged")
        controls = np.array([[_unhex(v) for v in row] for row in body["controls"]], dtype=float)
        cells = body["cells"]
        lo = np.array([[_unhex(v) for v in c["lo"]] for c in cells], dtype=float)
        hi = np.array([[_unhex(v) for v in c["hi"]] for c in cells], dtype=float)
        cc = [np.array(c["controls"], dtype=int) for c in cells]
        if controls.ndim == 1:
            controls = controls.reshape(len(controls), 0)
        return cls(lo, hi, cc, controls, body["metadata"])

    @classmethod
    def load(cls, path) -> "Controller":
        return cls.from_json(Path(path).read_text())

    # --- problem recovery -----------------------------------------------------------

    def system(self) -> SystemModel:
        src = self.metadata.get("source")
        if src is None:
            raise ControllerError("controller file does not embed the system source")
        sys = parse(src)
        if "tau" in self.metadata and sys.kind == "continuous":
            sys = sys.with_tau(_unhex(self.metadata["tau"]))
        if "delta" in self.metadata:
            sys = sys.with_delta(_unhex(self.metadata["delta"]))
        return sys

    def spec(self, sys: SystemModel) -> Spec:
        if "spec" not in self.metadata:
            raise ControllerError("controller file does not embed the specification")
        return spec_from_dict(self.metadata["spec"], sys.state_names)


def extract(res, sys: SystemModel | None = None, spec: Spec | None = None,
            eps: float | None = None, rho: float | None = None) -> Controller:
    """Controller whose cells are the synthesis table, one cell per entry."""
    table = res.table
    if len(res.winning) == 0 or len(table) == 0:
        raise NotRealizableError(not_realizable_message(eps if eps is not None else float("nan"), rho))
    cc = [np.nonzero(row)[0] for row in table.valid]
    meta: dict = {}
    if sys is not None:
        meta["system_hash"] = sys.system_hash()
        meta["delta"] = _hex(sys.delta)
        if sys.source:
            meta["source"] = sys.source
        if sys.tau is not None:
            meta["tau"] = _hex(sys.tau)
        meta["state_names"] = list(sys.state_names)
        meta["control_names"] = list(sys.control_names)
    if eps is not None:
        meta["epsilon"] = _hex(eps)
    if spec is not None and sys is not None:
        meta["spec"] = spec_to_dict(spec, sys.state_names)
        meta["spec_digest"] = spec_digest(spec, sys.state_names)
    return Controller(table.boxes.lo.copy(), table.boxes.hi.copy(), cc, np.asarray(res.controls), meta)


# --- simulation ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    states: np.ndarray        # (T+1, n), fewer rows when truncated
    controls: np.ndarray      # (T, m)
    control_index: np.ndarray  # (T,)
    disturbances: np.ndarray  # (T, n)
    in_target: np.ndarray     # (T+1,) bool
    violation: bool = False   # no control available at some visited state

    @property
    def entered(self) -> int | None:
        """First j with every later state inside the target, if any."""
        if self.violation or not self.in_target[-1]:
            return None
        out = np.nonzero(~self.in_target)[0]
        return 0 if out.size == 0 else int(out[-1]) + 1

    def satisfied(self, stay: int = 0) -> bool:
        """Reached the target and stayed there for at least ``stay`` further steps."""
        j = self.entered
        return j is not None and len(self.in_target) - 1 - j >= stay


class Disturbance:
    """Additive disturbance policy: none, const:v, random:bound or adversarial."""

    def __init__(self, kind: str = "none", bound: float = 0.0, value: float = 0.0,
                 center: np.ndarray | None = None):
        if kind not in ("none", "const", "random", "adversarial"):
            raise ControllerError(f"unknown disturbance policy {kind!r}")
        self.kind = kind
        self.bound = float(bound)
        self.value = float(value)
        self.center = center

    @classmethod
    def parse(cls, text: str | None, delta: float = 0.0) -> "Disturbance":
        if text is None or text == "none":
            return cls("none")
        head, _, arg = text.partition(":")
        if head == "const":
            return cls("const", value=float(arg) if arg else delta)
        if head == "random":
            return cls("random", bound=float(arg) if arg else delta)
        if head == "adversarial":
            return cls("adversarial", bound=float(arg) if arg else delta)
        raise ControllerError(f"unknown disturbance policy {text!r}")

    def draw(self, x_next: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        n = x_next.shape[0]
        if self.kind == "none":
            return np.zeros(n)
        if self.kind == "const":
            return np.full(n, self.value)
        if self.kind == "random":
            return rng.uniform(-self.bound, self.bound, n)
        # push away from the target center, at full magnitude
        c = self.center if self.center is not None else np.zeros(n)
        s = np.sign(x_next - c)
        s[s == 0] = rng.choice([-1.0, 1.0], size=int(np.sum(s == 0)))
        return self.bound * s


def choose_control(options: np.ndarray, controls: np.ndarray, policy: str,
                   rng: np.random.Generator) -> int:
    if policy == "first":
        return int(options[0])
    if policy == "random":
        return int(options[rng.integers(len(options))])
    if policy == "minimum-norm":
        norms = np.linalg.norm(controls[options], axis=1) if controls.shape[1] else np.zeros(len(options))
        return int(options[int(np.argmin(norms))])
    raise ControllerError(f"unknown tie policy {policy!r}")


def flow(sys: SystemModel, x: np.ndarray, u_idx: int, w: np.ndarray | None = None,
         rtol: float = 1e-10, atol: float = 1e-12) -> np.ndarray:
    """One step of the plant: the map, or the sampled flow over tau (not validated)."""
    x = np.asarray(x, dtype=float)
    if sys.kind == "discrete":
        return sys.step_numeric(x[None, :], np.array([u_idx]), None if w is None else w[None, :])[0]
    wv = None if w is None else w[None, :]

    def rhs(_t, y):
        return sys.step_numeric(y[None, :], np.array([u_idx]), wv)[0]

    sol = solve_ivp(rhs, (0.0, sys.tau), x, method="DOP853", rtol=rtol, atol=atol)
    return sol.y[:, -1]


def _inner_w(sys: SystemModel, rng: np.random.Generator, dist: Disturbance) -> np.ndarray | None:
    if sys.inner is None:
        return None
    lo, hi = np.array(sys.inner.lo), np.array(sys.inner.hi)
    if dist.kind == "adversarial":
        return np.where(rng.random(lo.shape) < 0.5, lo, hi)
    if dist.kind == "none":
        return 0.5 * (lo + hi)
    return rng.uniform(lo, hi)


def simulate(sys: SystemModel, ctrl: Controller, x0, steps: int, *,
             disturbance: Disturbance | str | None = None, tie: str = "first", seed: int = 0,
             spec: Spec | None = None) -> Trajectory:
    """Closed-loop run under the controller.  Stops early when no control is available."""
    if steps < 0:
        raise ControllerError("number of steps must be non-negative")
    if tie not in TIE_POLICIES:
        raise ControllerError(f"unknown tie policy {tie!r}")
    if not isinstance(disturbance, Disturbance):
        disturbance = Disturbance.parse(disturbance, sys.delta)
    rng = np.random.default_rng(seed)
    if disturbance.kind == "adversarial" and disturbance.center is None and spec is not None:
        boxes = spec.target or (spec.X,)
        disturbance.center = 0.5 * (np.array(boxes[0].lo) + np.array(boxes[0].hi))
    n, m = sys.n, sys.m
    x = np.asarray(x0, dtype=float).reshape(n)
    xs, us, ui, ds = [x], [], [], []
    violation = False
    for _ in range(steps):
        opts = ctrl.lookup(x)
        if opts.size == 0:
            violation = True
            break
        k = choose_control(opts, ctrl.controls, tie, rng)
        y = flow(sys, x, k, _inner_w(sys, rng, disturbance))
        d = disturbance.draw(y, rng)
        x = y + d
        xs.append(x)
        us.append(ctrl.controls[k])
        ui.append(k)
        ds.append(d)
    states = np.array(xs)
    if spec is not None:
        inside = spec.in_target(states)
    else:
        inside = np.zeros(len(states), dtype=bool)
    if not violation and steps > 0 and ctrl.lookup(x).size == 0 and not inside[-1]:
        violation = True
    return Trajectory(states, np.array(us, dtype=float).reshape(len(us), m), np.array(ui, dtype=int),
                      np.array(ds, dtype=float).reshape(len(ds), n), inside, violation)


def simulate_batch(sys: SystemModel, ctrl: Controller, starts: np.ndarray, steps: int, **kw) -> list[Trajectory]:
    seed = kw.pop("seed", 0)
    return [simulate(sys, ctrl, x0, steps, seed=seed + i, **kw) for i, x0 in enumerate(starts)]


def run_until_stay(sys: SystemModel, ctrl: Controller, spec: Spec, x0, horizon: int, stay: int,
                   **kw) -> Trajectory:
    """Simulate until the state has been in the target for ``stay`` consecutive steps (or the horizon)."""
    seed = kw.pop("seed", 0)
    tie = kw.pop("tie", "first")
    disturbance = kw.pop("disturbance", None)
    if kw:
        raise TypeError(f"unexpected arguments {sorted(kw)}")
    if not isinstance(disturbance, Disturbance):
        disturbance = Disturbance.parse(disturbance, sys.delta)
    if disturbance.kind == "adversarial" and disturbance.center is None:
        b = (spec.target or (spec.X,))[0]
        disturbance.center = 0.5 * (np.array(b.lo) + np.array(b.hi))
    rng = np.random.default_rng(seed)
    x = np.asarray(x0, dtype=float).reshape(sys.n)
    states, us, ui, ds = [x], [], [], []
    violation = False
    run = int(spec.in_target(x[None, :])[0])
    for _ in range(horizon):
        if run > stay:
            break
        opts = ctrl.lookup(x)
        if opts.size == 0:
            violation = True
            break
        k = choose_control(opts, ctrl.controls, tie, rng)
        y = flow(sys, x, k, _inner_w(sys, rng, disturbance))
        d = disturbance.draw(y, rng)
        x = y + d
        states.append(x)
        us.append(ctrl.controls[k])
        ui.append(k)
        ds.append(d)
        run = run + 1 if spec.in_target(x[None, :])[0] else 0
    st = np.array(states)
    return Trajectory(st, np.array(us, dtype=float).reshape(len(us), sys.m), np.array(ui, dtype=int),
                      np.array(ds, dtype=float).reshape(len(ds), sys.n), spec.in_target(st), violation)

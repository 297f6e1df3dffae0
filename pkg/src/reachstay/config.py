"""Problem configuration files (JSON) and their schema."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .dynamics import DynamicsError, Spec, SystemModel, parse, parse_state_expr
from .expr import ParseError
from .interval import Box
from .pred import Budget
from .reach import TaylorConfig
from .synth import (PrecisionSchedule, SynthError, certify_decrease, jacobian_at_zero, lyapunov_matrix,
                    quadratic_form)


class ConfigError(ValueError):
    pass


_NUM = {"anyOf": [{"type": "number"}, {"type": "string", "pattern": r"^\s*[-+]?[0-9.eE+-]+\s*(deg|rad)?\s*$"}]}
_INTERVAL = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_BOX = {"type": "array", "items": _INTERVAL, "minItems": 1}
_POS = {"type": "number", "exclusiveMinimum": 0}

SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "reachstay problem",
    "type": "object",
    "additionalProperties": False,
    "required": ["spec", "precision"],
    "oneOf": [{"required": ["dynamics"]}, {"required": ["dynamics_source"]}],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "dynamics": {"type": "string"},
        "dynamics_source": {"type": "string"},
        "delta": {"type": "number", "minimum": 0},
        "tau": _POS,
        "form": {"enum": ["natural", "centered", "mixed"]},
        "rho": _POS,
        "seed": {"type": "integer"},
        "threads": {"type": "integer", "minimum": 1},
        "spec": {
            "type": "object",
            "additionalProperties": False,
            "required": ["X"],
            "properties": {
                "X": _BOX,
                "target": {"type": "array", "items": _BOX},
                "target_ineq": {"type": "array", "items": {"type": "string"}},
                "obstacles": {"type": "array", "items": {"type": "array", "items": {"type": "string"}, "minItems": 1}},
                "roa": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["Q", "c"],
                    "properties": {
                        "Q": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                        "c": _POS,
                    },
                },
            },
        },
        "precision": {
            "type": "object",
            "additionalProperties": False,
            "required": ["eps_outer"],
            "properties": {
                "eps_outer": _POS, "eps_inner": _POS, "shrink": _POS, "eps_min": _POS, "eps_spec": _POS,
            },
        },
        "taylor": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "order": {"type": "integer", "minimum": 0},
                "k_max": {"type": "integer", "minimum": 1},
                "kbar": {"type": "integer", "minimum": 1},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "K": _POS,
                "eps_enclosure": _POS,
            },
        },
        "budget": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"max_boxes": {"type": "integer", "minimum": 1}, "max_seconds": _POS},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "controller": {"type": "string"},
                "winning": {"type": "string"},
                "stats": {"type": "string"},
            },
        },
    },
}


def number(v) -> float:
    """A config number; strings may carry a 'deg' (converted to radians) or 'rad' suffix."""
    if isinstance(v, (int, float)):
        return float(v)
    s = v.strip()
    if s.endswith("deg"):
        return math.radians(float(s[:-3]))
    if s.endswith("rad"):
        return float(s[:-3])
    return float(s)


def _box(rows) -> Box:
    lo = [number(a) for a, _ in rows]
    hi = [number(b) for _, b in rows]
    if any(a > b for a, b in zip(lo, hi)):
        raise ConfigError(f"interval with lower bound above upper bound in {rows}")
    return Box.from_bounds(lo, hi)


@dataclass
class Problem:
    system: SystemModel
    spec: Spec
    schedule: PrecisionSchedule
    taylor: TaylorConfig | None
    form: str = "natural"
    rho: float | None = None
    seed: int = 0
    threads: int = 1
    budget: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    name: str = "problem"
    roa: dict | None = None

    @property
    def invariant_target(self) -> bool:
        """True when the target is a certified invariant ellipsoid of an undisturbed flow."""
        return self.roa is not None and self.roa["certified"] and not self.system.delta > 0

    def make_budget(self) -> Budget | None:
        if not self.budget:
            return None
        return Budget(self.budget.get("max_boxes"), self.budget.get("max_seconds"))


def load_config(path) -> Problem:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON: {err}") from None
    return build_problem(raw, path.parent, default_name=path.stem)


def build_problem(raw: dict, base: Path | str = ".", default_name: str = "problem") -> Problem:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {err.message}") from None
    base = Path(base)
    if "dynamics" in raw:
        dpath = Path(raw["dynamics"])
        if not dpath.is_absolute():
            dpath = base / dpath
        if not dpath.exists():
            raise ConfigError(f"dynamics file {dpath} not found")
        source = dpath.read_text()
    else:
        source = raw["dynamics_source"]
    try:
        sys = parse(source)
    except (ParseError, DynamicsError) as err:
        raise ConfigError(f"dynamics: {err}") from None
    if "tau" in raw:
        sys = sys.with_tau(raw["tau"])
    if "delta" in raw:
        sys = sys.with_delta(raw["delta"])

    sp = raw["spec"]
    X = _box(sp["X"])
    if len(X) != sys.n:
        raise ConfigError(f"state space has {len(X)} dimensions, the system has {sys.n}")
    try:
        target = tuple(_box(b) for b in sp.get("target", []))
        ineq = [parse_state_expr(sys, s) for s in sp.get("target_ineq", [])]
        obstacles = tuple(tuple(parse_state_expr(sys, s) for s in o) for o in sp.get("obstacles", []))
    except ParseError as err:
        raise ConfigError(f"spec: {err}") from None
    roa = None
    if "roa" in sp:
        Q = np.array(sp["roa"]["Q"], dtype=float)
        if Q.shape != (sys.n, sys.n):
            raise ConfigError("roa.Q must be an n-by-n matrix")
        if len(sys.groups) != 1 or sys.m:
            raise ConfigError("a region-of-attraction target needs an autonomous system")
        field_ = sys.groups[0].field
        A = jacobian_at_zero(field_, sys.n)
        try:
            P = lyapunov_matrix(A, Q)
        except SynthError as err:
            raise ConfigError(f"roa: {err}") from None
        c = float(sp["roa"]["c"])
        ineq.append(quadratic_form(P, c))
        ok = certify_decrease(field_, A, P, Q, c, eps=0.02)
        roa = {"A": A, "Q": Q, "P": P, "c": c, "certified": ok}
    for b in target:
        if len(b) != sys.n:
            raise ConfigError("target box dimension differs from the system")
    try:
        spec = Spec(X, target, tuple(ineq), obstacles)
    except DynamicsError as err:
        raise ConfigError(f"spec: {err}") from None

    pr = raw["precision"]
    try:
        sched = PrecisionSchedule(pr["eps_outer"], pr.get("eps_inner"), pr.get("shrink"),
                                  pr.get("eps_min"), pr.get("eps_spec"))
    except SynthError as err:
        raise ConfigError(f"precision: {err}") from None

    taylor = None
    if sys.kind == "continuous":
        if sys.tau is None:
            raise ConfigError("continuous dynamics need a sampling time ('sampling' or 'tau')")
        tc = dict(raw.get("taylor", {}))
        taylor = TaylorConfig(tau=sys.tau, delta=sys.delta, **tc)

    out = {"dir": ".", "controller": "controller.json", "winning": "winning.csv", "stats": "stats.json"}
    out.update(raw.get("output", {}))
    odir = Path(out["dir"])
    if not odir.is_absolute():
        odir = base / odir
    out["dir"] = str(odir)
    return Problem(sys, spec, sched, taylor, raw.get("form", "natural"), raw.get("rho"),
                   raw.get("seed", 0), raw.get("threads", 1), raw.get("budget", {}), out,
                   raw.get("name", default_name), roa)


def schema_text() -> str:
    return json.dumps(SCHEMA, indent=2)

"""Command-line front end: synth, simulate, check."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys as _sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, Problem, load_config, schema_text
from .controller import (Controller, ControllerError, Disturbance, NotRealizableError, TIE_POLICIES,
                         extract, not_realizable_message, simulate)
from .reach import ReachError, eps_bound, estimate_K, select_order
from .synth import SynthesisBudgetError, SynthResult, synthesize

EXIT_OK, EXIT_USAGE, EXIT_UNREALIZABLE, EXIT_BUDGET = 0, 2, 3, 4
THREADS_ENV = "REACHSTAY_THREADS"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(_sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _threads(args, prob: Problem | None = None) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return prob.threads if prob is not None else 1


def _fmt(v: float) -> str:
    return repr(float(v))


def write_winning_csv(path, res: SynthResult, names) -> None:
    lo, hi, tags = res.tagged_boxes()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{nm}_{end}" for nm in names for end in ("lo", "hi")] + ["tag"])
        for i in range(len(tags)):
            row = []
            for d in range(lo.shape[1]):
                row += [_fmt(lo[i, d]), _fmt(hi[i, d])]
            w.writerow(row + [tags[i]])


def _stats(prob: Problem, res: SynthResult, threads: int) -> dict:
    s = dict(res.stats)
    s.update({
        "name": prob.name,
        "partitions": len(res.table),
        "undetermined_boxes": len(res.undetermined),
        "outside_boxes": len(res.outside),
        "eps_outer": prob.schedule.eps_outer,
        "eps_inner": prob.schedule.inner,
        "delta": prob.system.delta,
        "threads": threads,
        "partial": res.partial,
    })
    return s


def _write_outputs(prob: Problem, res: SynthResult, threads: int) -> Path:
    out = Path(prob.outputs["dir"])
    out.mkdir(parents=True, exist_ok=True)
    write_winning_csv(out / prob.outputs["winning"], res, prob.system.state_names)
    (out / prob.outputs["stats"]).write_text(json.dumps(_stats(prob, res, threads), indent=2, sort_keys=True) + "\n")
    return out


def cmd_synth(args) -> int:
    try:
        prob = load_config(args.config)
        threads = _threads(args, prob)
    except ConfigError as err:
        print(f"error: {err}", file=_sys.stderr)
        return EXIT_USAGE
    if args.output_dir:
        prob.outputs["dir"] = args.output_dir
    code = EXIT_OK
    try:
        res = synthesize(prob.system, prob.spec, prob.schedule, taylor=prob.taylor, form=prob.form,
                         budget=prob.make_budget(), threads=threads, invariant_target=prob.invariant_target)
    except SynthesisBudgetError as err:
        print(f"resource cap reached: {err}; writing the sound partial result", file=_sys.stderr)
        res = err.partial
        code = EXIT_BUDGET
    out = _write_outputs(prob, res, threads)
    eps = prob.schedule.eps_outer
    try:
        ctrl = extract(res, prob.system, prob.spec, eps=eps, rho=prob.rho)
    except NotRealizableError:
        print(not_realizable_message(eps, prob.rho), file=_sys.stderr)
        return EXIT_UNREALIZABLE if code == EXIT_OK else code
    ctrl.save(out / prob.outputs["controller"])
    if not args.quiet:
        print(f"winning boxes: {len(res.winning)}  volume: {res.winning.volume():.6g}  "
              f"outer iterations: {res.outer_iterations}  outputs: {out}")
    return code


def cmd_simulate(args) -> int:
    try:
        ctrl = Controller.load(args.controller)
        sysm = ctrl.system()
        spec = ctrl.spec(sysm)
    except (OSError, ControllerError) as err:
        print(f"error: cannot load controller: {err}", file=_sys.stderr)
        return EXIT_USAGE
    if len(args.x0) != sysm.n:
        print(f"error: --x0 needs {sysm.n} values", file=_sys.stderr)
        return EXIT_USAGE
    if args.steps < 0:
        print("error: --steps must be non-negative", file=_sys.stderr)
        return EXIT_USAGE
    try:
        dist = Disturbance.parse(args.disturbance, sysm.delta)
    except (ControllerError, ValueError) as err:
        print(f"error: {err}", file=_sys.stderr)
        return EXIT_USAGE
    tr = simulate(sysm, ctrl, args.x0, args.steps, disturbance=dist, tie=args.tie, seed=args.seed, spec=spec)
    n, m = sysm.n, sysm.m
    names = [f"x_{i + 1}" for i in range(n)]
    unames = ["u"] if m == 1 else [f"u_{j + 1}" for j in range(m)]
    dnames = ["d"] if n == 1 else [f"d_{i + 1}" for i in range(n)]
    fh = open(args.out, "w", newline="") if args.out else _sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + names + unames + dnames + ["in_target"])
        tau = sysm.tau if sysm.kind == "continuous" else 1.0
        for k in range(len(tr.control_index)):
            w.writerow([_fmt(k * tau)] + [_fmt(v) for v in tr.states[k]] + [_fmt(v) for v in tr.controls[k]]
                       + [_fmt(v) for v in tr.disturbances[k]] + [int(tr.in_target[k])])
    finally:
        if fh is not _sys.stdout:
            fh.close()
    if tr.violation:
        print(f"warning: no control available at step {len(tr.control_index)}; trajectory truncated",
              file=_sys.stderr)
    return EXIT_OK


def check_report(prob: Problem) -> tuple[list[str], list[str]]:
    sysm = prob.system
    lines = [
        f"system: {sysm.kind}, {sysm.n} states, {sysm.m} control inputs",
        f"control values: {sysm.num_controls}",
    ]
    warns = []
    if sysm.control_box is not None:
        per = [len(np.unique(sysm.controls[:, j])) for j in range(sysm.m)]
        lines.append("control grid per input: " + " x ".join(map(str, per)) + f" (step {sysm.eta:g})")
        for j, nm in enumerate(sysm.control_names):
            vals = " ".join(f"{v:g}" for v in np.unique(sysm.controls[:, j]))
            lines.append(f"  {nm}: {vals}")
    lines.append(f"precision: outer {prob.schedule.eps_outer:g}, inner {prob.schedule.inner:g}, "
                 f"spec {prob.schedule.spec:g}")
    lines.append(f"disturbance bound delta: {sysm.delta:g}")
    if prob.roa is not None:
        P = prob.roa["P"]
        lines.append("Lyapunov matrix P: " + np.array2string(P, precision=6))
        if prob.invariant_target:
            lines.append(f"target x'Px <= {prob.roa['c']:g}: decrease certified, treated as invariant")
        else:
            warns.append("the ellipsoid target is not certified invariant; the stay loop runs on its paving")
    if prob.taylor is not None:
        cfg = prob.taylor
        lines.append(f"sampling time: {cfg.tau:g}; Taylor order {cfg.order}, k_max {cfg.k_max}")
        if not sysm.delta > 0:
            warns.append("delta = 0: the precision bound for robust completeness degenerates "
                         "(eps <= 0); supply eps directly, the lower side of the guarantee is vacuous")
        else:
            K = cfg.K
            if K is None:
                K = estimate_K(sysm, prob.spec.X, k_max=min(cfg.order + 1, cfg.k_max), samples=200,
                               max_width=prob.schedule.eps_outer)
                lines.append(f"width constant K (estimated): {K:.6g}")
            else:
                lines.append(f"width constant K: {K:g}")
            c2 = replace(cfg, K=K)
            wbar = float(np.max(prob.spec.X.hi - prob.spec.X.lo))
            try:
                k, eps = select_order(c2, wbar)
                lines.append(f"Taylor order seed k: {k}")
            except ReachError as err:
                eps = eps_bound(c2)
                warns.append(f"order selection: {err}")
            lines.append(f"precision bound eps: {eps:.6g}")
            if prob.schedule.eps_outer > eps:
                warns.append(f"eps_outer {prob.schedule.eps_outer:g} exceeds the bound {eps:.6g}")
    return lines, warns


def cmd_check(args) -> int:
    try:
        prob = load_config(args.config)
    except ConfigError as err:
        print(f"error: {err}", file=_sys.stderr)
        return EXIT_USAGE
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lines, warns = check_report(prob)
    print(f"config {args.config}: valid")
    for ln in lines:
        print("  " + ln)
    for wn in warns:
        print(f"warning: {wn}")
    return EXIT_OK


def cmd_schema(args) -> int:
    print(schema_text())
    return EXIT_OK


def benchmark_dir() -> Path:
    return Path(__file__).parent / "benchmarks"


def cmd_benchmarks(args) -> int:
    for p in sorted(benchmark_dir().glob("*.json")):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="reachstay", description="Reach-and-stay controller synthesis with interval analysis.")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads for predecessor sweeps (also {THREADS_ENV})")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="run synthesis for a problem config")
    s.add_argument("config")
    s.add_argument("--output-dir", default=None)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=cmd_synth)

    m = sub.add_parser("simulate", help="closed-loop simulation of a saved controller")
    m.add_argument("controller")
    m.add_argument("--x0", type=float, nargs="+", required=True)
    m.add_argument("--steps", type=int, default=100)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--disturbance", default="none",
                   help="none | const[:v] | random[:bound] | adversarial[:bound]")
    m.add_argument("--tie", choices=TIE_POLICIES, default="first")
    m.add_argument("--out", default=None, help="CSV path (default: stdout)")
    m.set_defaults(fn=cmd_simulate)

    c = sub.add_parser("check", help="validate a config and print derived quantities")
    c.add_argument("config")
    c.set_defaults(fn=cmd_check)

    sc = sub.add_parser("schema", help="print the config JSON schema")
    sc.set_defaults(fn=cmd_schema)

    b = sub.add_parser("benchmarks", help="list the bundled benchmark configs")
    b.set_defaults(fn=cmd_benchmarks)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be at least 1", file=_sys.stderr)
        return EXIT_USAGE
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"error: {err}", file=_sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())

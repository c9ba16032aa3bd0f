"""Command-line interface: ``markovpoly <command> FILE ...``.

FILE is a project path or the name of a bundled project.  Exit codes are
0 on success, 1 on a failed validation or check, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import checks
from .ccmp import CCMPError, pushforward_diagram
from .colors import ColoredDiagram, interface_expand
from .kernels import KernelError
from .learn import (
    LearnError,
    expected_objective_exact,
    expected_objective_mc,
    grad_exact_enumeration,
    grad_reverse_mode_mc,
    train_sgd,
)
from .project import Project, ProjectError, bundled, bundled_names, load, parse_literal
from .rng import substream
from .spaces import format_value, is_finite, real_dim
from .trace import TraceError, trace_exact, trace_sample_batch

__all__ = ["main", "UsageError"]


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


# -- output ------------------------------------------------------------------


def _num(v):
    if isinstance(v, (float, np.floating)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


class Emitter:
    def __init__(self, mode: str, stream=None):
        self.mode = mode
        self.stream = stream or sys.stdout

    def line(self, text: str = ""):
        if self.mode == "table":
            print(text, file=self.stream)

    def rows(self, records: list[dict], columns: list[str]):
        if self.mode == "records":
            for r in records:
                print(json.dumps({k: _num(v) for k, v in r.items()}, sort_keys=True), file=self.stream)
            return
        cells = [[_fmt(r.get(c, "")) for c in columns] for r in records]
        widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
        print("  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip(), file=self.stream)
        for row in cells:
            print("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip(), file=self.stream)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "PASS" if v else "FAIL"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    if isinstance(v, (list, tuple)):
        return json.dumps(v)
    return str(v)


# -- loading helpers -----------------------------------------------------------


def _load(spec: str) -> Project:
    if Path(spec).exists():
        return load(spec)
    if spec in bundled_names():
        return bundled(spec)
    raise UsageError(f"no such project file or bundled project: {spec!r} (bundled: {', '.join(bundled_names())})")


def _diagram(p: Project, name: str):
    if name not in p.diagrams:
        raise UsageError(f"unknown diagram {name!r}; known: {', '.join(sorted(p.diagrams))}")
    d = p.diagrams[name]
    rep = d.validate()
    if rep:
        raise CheckFailed("diagram is invalid: " + "; ".join(rep))
    return d


def _concrete(p: Project, name: str, d):
    if isinstance(d, ColoredDiagram):
        d = interface_expand(d, p.interfaces)
    return d


def _input(d, literal: str | None):
    prof = d.input_profile
    if literal is None or literal.strip() == "":
        if prof:
            raise UsageError(f"the diagram needs an input for {len(prof)} slot(s): {', '.join(o.name for o in prof)}")
        return ()
    if not prof:
        raise UsageError("the diagram takes no input")
    try:
        return parse_literal(prof, literal)
    except ProjectError as e:
        raise UsageError(str(e)) from None


def _theta(p: Project, name: str, literal: str | None, dim: int, default=None) -> np.ndarray:
    if literal is None:
        if default is None:
            return np.zeros(dim)
        theta = np.asarray(default, dtype=float)
    else:
        text = Path(literal[1:]).read_text() if literal.startswith("@") else literal
        try:
            theta = np.asarray(json.loads(text), dtype=float).reshape(-1)
        except (json.JSONDecodeError, ValueError, TypeError):
            raise UsageError(f"theta must be a JSON list of numbers, got {literal!r}") from None
    if theta.shape != (dim,):
        raise UsageError(f"theta for {name} must have length {dim}, got {theta.size}")
    return theta


def _param(p: Project, name: str):
    if name not in p.param_diagrams:
        raise UsageError(f"unknown parameterized diagram {name!r}; known: {', '.join(sorted(p.param_diagrams))}")
    setup = p.param_diagrams[name]
    pd = p.param_diagram(name)
    if setup.objective is None:
        raise UsageError(f"parameterized diagram {name!r} has no objective")
    return pd, setup, p.objectives[setup.objective]


def _rng(args, label: str):
    return substream(args.seed, label)


# -- commands ----------------------------------------------------------------


def cmd_validate(args, out: Emitter) -> int:
    p = _load(args.file)
    res = checks.validation_checks(p)
    out.rows([r.record() for r in res], ["suite", "subject", "ok", "detail"])
    return 0 if all(r.ok for r in res) else 1


def cmd_trace_exact(args, out: Emitter) -> int:
    p = _load(args.file)
    d = _concrete(p, args.diagram, _diagram(p, args.diagram))
    x = _input(d, args.input)
    if not d.is_finite:
        raise CheckFailed("exact mode needs an all-finite diagram; use trace-mc")
    _, marg = trace_exact(d, x)
    prof = d.output_profile
    recs = [{"outcome": [format_value(o.space, v) for o, v in zip(prof, y)], "probability": pr} for y, pr in marg.items()]
    out.line(f"# exact output law of {args.diagram} at {args.input or '()'}; slots: {', '.join(o.name for o in prof)}")
    out.rows(recs, ["outcome", "probability"])
    return 0


def _sample_outputs(d, x, n: int, args) -> list:
    workers = 1 if args.sequential else max(1, args.workers)
    if workers == 1:
        return trace_sample_batch(d, x, n, _rng(args, "trace"))
    chunks = workers * 4
    sizes = [n // chunks + (1 if c < n % chunks else 0) for c in range(chunks)]
    with ThreadPoolExecutor(workers) as ex:
        parts = list(ex.map(lambda c: trace_sample_batch(d, x, sizes[c], substream(args.seed, "trace", c + 1)), range(chunks)))
    return [y for part in parts for y in part]


def cmd_trace_sample(args, out: Emitter) -> int:
    p = _load(args.file)
    d = _concrete(p, args.diagram, _diagram(p, args.diagram))
    x = _input(d, args.input)
    n = args.samples or 10
    ys = _sample_outputs(d, x, n, args)
    prof = d.output_profile
    recs = [{"sample": s, "outcome": [format_value(o.space, v) for o, v in zip(prof, y)]} for s, y in enumerate(ys)]
    out.rows(recs, ["sample", "outcome"])
    return 0


def cmd_trace_mc(args, out: Emitter) -> int:
    p = _load(args.file)
    d = _concrete(p, args.diagram, _diagram(p, args.diagram))
    x = _input(d, args.input)
    n = args.samples or 10_000
    if n < 2:
        raise UsageError("--samples must be at least 2")
    t0 = time.perf_counter()
    ys = _sample_outputs(d, x, n, args)
    recs = []
    for s, o in enumerate(d.output_profile):
        col = [y[s] for y in ys]
        if is_finite(o.space):
            from .spaces import enumerate_points, point_index

            idx = np.fromiter((point_index(o.space, v) for v in col), dtype=np.int64, count=n)
            for k, v in enumerate(enumerate_points(o.space)):
                pr = float(np.mean(idx == k))
                recs.append({"slot": s, "object": o.name, "statistic": f"P({format_value(o.space, v)})", "estimate": pr, "stderr": float(np.sqrt(pr * (1 - pr) / n))})
        else:
            A = np.array([np.asarray(v, dtype=float).reshape(-1) for v in col])
            for c in range(real_dim(o.space)):
                recs.append({"slot": s, "object": o.name, "statistic": f"mean[{c}]", "estimate": float(A[:, c].mean()), "stderr": float(A[:, c].std(ddof=1) / np.sqrt(n))})
    out.line(f"# Monte Carlo output statistics of {args.diagram} at {args.input or '()'}, N={n}, seed={args.seed}")
    out.rows(recs, ["slot", "object", "statistic", "estimate", "stderr"])
    if args.timing:
        print(f"# elapsed {time.perf_counter() - t0:.3f}s", file=sys.stderr)
    return 0


def cmd_eval_objective(args, out: Emitter) -> int:
    p = _load(args.file)
    pd, setup, obj = _param(p, args.param)
    theta = _theta(p, args.param, args.theta, pd.theta_dim, setup.theta)
    exact_ok = obj.rho_exact is not None and pd.expanded_shape.is_finite
    if args.exact and not exact_ok:
        raise CheckFailed("exact evaluation needs an all-finite diagram and an exact data law")
    if exact_ok and not args.samples:
        out.rows([{"mode": "exact", "objective": expected_objective_exact(pd, theta, obj), "stderr": 0.0}], ["mode", "objective", "stderr"])
    else:
        n = args.samples or 10_000
        m, se = expected_objective_mc(pd, theta, obj, n, _rng(args, "objective"))
        out.rows([{"mode": f"mc N={n}", "objective": m, "stderr": se}], ["mode", "objective", "stderr"])
    return 0


def _grad_records(pd, flat, se):
    recs = []
    for v, s in pd.layout.items():
        for i in range(s.stop - s.start):
            recs.append({"vertex": v, "index": i, "gradient": float(flat[s.start + i]), "stderr": float(se[s.start + i])})
    return recs


def cmd_grad(args, out: Emitter) -> int:
    p = _load(args.file)
    pd, setup, obj = _param(p, args.param)
    theta = _theta(p, args.param, args.theta, pd.theta_dim, setup.theta)
    if args.exact:
        if obj.rho_exact is None or not pd.expanded_shape.is_finite:
            raise CheckFailed("exact gradients need an all-finite diagram and an exact data law")
        g = grad_exact_enumeration(pd, theta, obj)
        out.line(f"# exact gradient of {args.param}")
        out.rows(_grad_records(pd, g, np.zeros_like(g)), ["vertex", "index", "gradient", "stderr"])
        return 0
    n = args.samples or 10_000
    est = grad_reverse_mode_mc(pd, theta, obj, n, _rng(args, "grad"), baseline=args.baseline)
    out.line(f"# reverse-mode Monte Carlo gradient of {args.param}, N={n}, seed={args.seed}, objective {est.objective:.10g} +- {est.objective_stderr:.3g}")
    out.rows(_grad_records(pd, est.flat, est.stderr), ["vertex", "index", "gradient", "stderr"])
    return 0


def cmd_grad_check(args, out: Emitter) -> int:
    p = _load(args.file)
    pd, setup, obj = _param(p, args.param)
    theta = _theta(p, args.param, args.theta, pd.theta_dim, setup.theta)
    rows, notes = checks.grad_check(pd, theta, obj, args.samples or 50_000, args.seed)
    for nt in notes:
        out.line(f"# {nt}")
    out.rows([r.record() for r in rows], ["coord", "method", "value", "reference", "stderr", "ok"])
    if not rows and notes:
        return 1
    return 0 if all(r.ok for r in rows) else 1


def cmd_coherence_check(args, out: Emitter) -> int:
    p = _load(args.file)
    if p.interfaces is None:
        raise UsageError("the project has no interface system")
    res = checks.coherence_checks(p, args.samples or 100_000, args.seed)
    out.rows([r.record() for r in res], ["subject", "ok", "detail"])
    return 0 if all(r.ok for r in res) else 1


def cmd_push(args, out: Emitter) -> int:
    p = _load(args.file)
    c = p.ccmp
    if c is None:
        raise UsageError("the project has no co-indexed structure")
    if args.transition not in c.index.morphisms:
        raise UsageError(f"unknown transition {args.transition!r}; known: {', '.join(sorted(c.index.morphisms))}")
    s, t = c.index.morphisms[args.transition]
    d = _diagram(p, args.diagram)
    src_state = c.states[s]
    missing = [v for v, k in d.vertices.items() if p.kernel_name(k) not in src_state.kernels]
    if missing:
        raise UsageError(f"diagram {args.diagram} is not in state {s}: vertices {missing} use kernels outside it")
    default = next((st.theta for st in p.param_diagrams.values() if st.diagram == args.diagram and st.theta.size == src_state.param_dim), None)
    theta = _theta(p, f"state {s}", args.theta, src_state.param_dim, default)
    g = c.push_state(args.transition)
    img = pushforward_diagram(g, d)
    theta2 = c.push_params(args.transition)(theta)
    vertices = {v: g.kernel_map[p.kernel_name(k)] for v, k in img.vertices.items()}
    wires = [[w.src.vertex, w.src.slot, w.dst.vertex, w.dst.slot] + ([w.witness] if w.witness else []) for w in img.wires]
    if out.mode == "records":
        out.rows([{"transition": args.transition, "source": s, "target": t, "vertices": vertices, "wires": wires, "theta": [float(v) for v in theta2]}], [])
        return 0
    out.line(f"# {args.diagram} pushed along {args.transition}: {s} -> {t}")
    out.rows([{"vertex": v, "kernel": k} for v, k in vertices.items()], ["vertex", "kernel"])
    out.line(f"wires: {json.dumps(wires)}")
    out.line(f"theta: {json.dumps([float(v) for v in theta2])}")
    return 0


def cmd_train(args, out: Emitter) -> int:
    p = _load(args.file)
    pd, setup, obj = _param(p, args.param)
    theta = _theta(p, args.param, args.theta, pd.theta_dim, setup.theta)
    n = args.samples or 2000
    res = train_sgd(pd, theta, obj, args.steps, args.step_size, n, _rng(args, "train"), exact=args.exact)
    recs = []
    for k, val in enumerate(res.objectives):
        r = {"step": k, "objective": val}
        if res.exact_objectives is not None:
            r["exact_objective"] = res.exact_objectives[k]
        recs.append(r)
    out.rows(recs, ["step", "objective"] + (["exact_objective"] if res.exact_objectives is not None else []))
    out.line(f"theta: {json.dumps([float(v) for v in res.thetas[-1]])}")
    return 0


def cmd_check(args, out: Emitter) -> int:
    files = args.files or bundled_names()
    all_ok = True
    board = []
    for f in files:
        p = _load(f)
        t0 = time.perf_counter()
        res = checks.run_all(p, n=args.samples or 100_000, seed=args.seed)
        elapsed = time.perf_counter() - t0
        for r in res:
            all_ok &= r.ok
        if args.verbose:
            out.rows([{"project": f} | r.record() for r in res], ["project", "suite", "subject", "ok", "detail"])
        by_suite: dict[str, list] = {}
        for r in res:
            by_suite.setdefault(r.suite, []).append(r.ok)
        for suite in checks.SUITES:
            if suite in by_suite:
                oks = by_suite[suite]
                board.append({"project": f, "suite": suite, "passed": sum(oks), "total": len(oks), "ok": all(oks)})
        if args.timing:
            print(f"# {f}: {elapsed:.2f}s", file=sys.stderr)
    out.rows(board, ["project", "suite", "passed", "total", "ok"])
    out.line("ALL GREEN" if all_ok else "FAILURES")
    return 0 if all_ok else 1


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--samples", type=int, default=None, help="Monte Carlo sample count")
    common.add_argument("--sequential", action="store_true", help="force single-stream sampling (the default unless --workers > 1)")
    common.add_argument("--workers", type=int, default=1, help="parallel sampling threads; output then depends on the worker count")
    common.add_argument("--output", choices=("table", "records"), default="table")
    common.add_argument("--timing", action="store_true", help="print elapsed time to stderr")

    ap = argparse.ArgumentParser(prog="markovpoly", description="Typed stochastic diagrams: validation, traces, gradients and transport.")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("validate", cmd_validate, "run the structural validators")
    sp.add_argument("file")
    for name, fn, help_ in (
        ("trace-exact", cmd_trace_exact, "exact output law of a finite diagram"),
        ("trace-sample", cmd_trace_sample, "draw trace samples"),
        ("trace-mc", cmd_trace_mc, "Monte Carlo output statistics"),
    ):
        sp = add(name, fn, help_)
        sp.add_argument("file")
        sp.add_argument("diagram")
        sp.add_argument("input", nargs="?", default=None, help="input literal, e.g. p0 or [0.5],[1.0]")
    for name, fn, help_ in (
        ("eval-objective", cmd_eval_objective, "expected objective"),
        ("grad", cmd_grad, "reverse-mode gradient estimate"),
        ("grad-check", cmd_grad_check, "compare the gradient estimator with its oracles"),
        ("train", cmd_train, "gradient descent"),
    ):
        sp = add(name, fn, help_)
        sp.add_argument("file")
        sp.add_argument("param", help="parameterized diagram name")
        sp.add_argument("--theta", default=None, help="JSON list of numbers or @file")
        if name in ("eval-objective", "grad", "train"):
            sp.add_argument("--exact", action="store_true", help="use exact enumeration")
        if name == "grad":
            sp.add_argument("--baseline", type=float, default=0.0)
        if name == "train":
            sp.add_argument("--steps", type=int, default=50)
            sp.add_argument("--step-size", type=float, default=0.1)
    sp = add("coherence-check", cmd_coherence_check, "interface path coherence")
    sp.add_argument("file")
    sp = add("push", cmd_push, "push a diagram and parameters along a transition")
    sp.add_argument("file")
    sp.add_argument("transition")
    sp.add_argument("diagram")
    sp.add_argument("--theta", default=None)
    sp = add("check", cmd_check, "run every property suite (default: all bundled projects)")
    sp.add_argument("files", nargs="*")
    sp.add_argument("--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    out = Emitter(args.output)
    try:
        return args.fn(args, out)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except (ProjectError, CheckFailed, TraceError, KernelError, LearnError, CCMPError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

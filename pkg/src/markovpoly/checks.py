"""Property suites over a whole project, shared by ``validate``, ``grad-check`` and ``check``."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .ccmp import check_cmp_functor, check_index_cat, check_jacobian, check_strict_functoriality, pushforward_diagram
from .colors import ColoredDiagram, check_color_system, check_interface_coherence, check_interface_system, colored_reduce, interface_expand
from .diagram import DiagramError, Port, binary_ksc
from .kernels import CompositionError, FiniteTable, GaussianLinear, KernelError, identity_kernel
from .learn import (
    LearnError,
    ParamDiagram,
    ParamKernel,
    central_difference,
    estimator_expectation_exact,
    expected_objective_exact,
    grad_exact_enumeration,
    grad_reverse_mode_mc,
    per_sample_objectives,
    sample_gradients,
    validate_pathwise_admissibility,
)
from .rng import substream
from .trace import ENUMERATION_LIMIT, TraceError, all_topological_orders, order_invariance_check, random_topological_order, reduce_diagram, trace_kernel, trace_sample_batch
from .spaces import cardinality, enumerate_points, profile_space, real_dim

__all__ = [
    "CheckResult",
    "GradRow",
    "rel_err",
    "validation_checks",
    "order_checks",
    "law_checks",
    "gaussian_checks",
    "coherence_checks",
    "functor_checks",
    "grad_check",
    "gradient_checks",
    "run_all",
    "SUITES",
]

EXACT_TOL = 1e-12
FD_RTOL = 1e-6
MAX_ORDERS = 50
MAX_REDUCTIONS = 720


@dataclass
class CheckResult:
    suite: str
    subject: str
    ok: bool
    detail: str = ""

    def record(self) -> dict:
        return {"suite": self.suite, "subject": self.subject, "ok": self.ok, "detail": self.detail}


def rel_err(a, b, floor: float = 1e-4) -> float:
    """``max|a - b| / max(|b|_inf, floor)``; the floor keeps near-zero references meaningful."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), floor))


def _finite_instance(p, name, d):
    """The diagram with parameterized vertices fixed at a registered theta, or None."""
    if not any(isinstance(k, ParamKernel) for k in d.vertices.values()):
        return d
    for setup in p.param_diagrams.values():
        if setup.diagram == name:
            return ParamDiagram(d, p.interfaces).instantiate(setup.theta)
    return None


def _expanded(p, d):
    return interface_expand(d, p.interfaces) if isinstance(d, ColoredDiagram) else d


def validation_checks(p) -> list[CheckResult]:
    out = []
    for name, d in p.diagrams.items():
        rep = d.validate()
        out.append(CheckResult("validate", f"diagram {name}", not rep, "; ".join(rep)))
    if p.colors is not None:
        rep = check_color_system(p.colors)
        out.append(CheckResult("validate", "color system", not rep, "; ".join(rep)))
    if p.interfaces is not None:
        rep = check_interface_system(p.interfaces)
        out.append(CheckResult("validate", "interface system", not rep, "; ".join(rep)))
    for name, setup in p.param_diagrams.items():
        try:
            pd = p.param_diagram(name)
            pd.check_theta(setup.theta)
            obj = p.objectives.get(setup.objective) if setup.objective else None
            rep = validate_pathwise_admissibility(pd, obj)
        except (LearnError, DiagramError) as e:
            rep = [str(e)]
        out.append(CheckResult("validate", f"param diagram {name}", not rep, "; ".join(rep)))
    if p.ccmp is not None:
        rep = check_index_cat(p.ccmp.index)
        if not rep:
            rep = check_strict_functoriality(p.ccmp, n_points=2)
        out.append(CheckResult("validate", "index category", not rep, "; ".join(rep)))
    return out


def order_checks(p, seed: int = 0) -> list[CheckResult]:
    """Trace independence of the topological order, at every input point.

    Diagrams with more than ``MAX_ORDERS`` orders are checked on that many
    random orders.
    """
    out = []
    rng = substream(seed, "order-check")
    for name, d in p.diagrams.items():
        inst = _finite_instance(p, name, d)
        if inst is None or not d.is_valid():
            continue
        e = _expanded(p, inst)
        if not e.is_finite:
            continue
        orders = list(itertools.islice(all_topological_orders(e), MAX_ORDERS + 1))
        sampled = len(orders) > MAX_ORDERS
        if sampled:
            orders = [random_topological_order(e, rng) for _ in range(MAX_ORDERS)]
        xs = list(enumerate_points(profile_space(e.input_profile)))
        dev = max(order_invariance_check(e, x, orders) for x in xs)
        out.append(CheckResult("order-invariance", f"diagram {name}", dev <= EXACT_TOL, f"{len(orders)} {'random ' if sampled else ''}orders, {len(xs)} inputs, max deviation {dev:.3g}"))
    return out


def _unit_deviation(k: FiniteTable) -> float:
    dev = 0.0
    for j, o in enumerate(k.source):
        dev = max(dev, float(np.max(np.abs(binary_ksc(identity_kernel(o), k, 0, j).to_table().probs - k.probs))))
    for i, o in enumerate(k.target):
        dev = max(dev, float(np.max(np.abs(binary_ksc(k, identity_kernel(o), i, 0).to_table().probs - k.probs))))
    return dev


def law_checks(p) -> list[CheckResult]:
    """Unit laws on finite kernels; all binary reduction orders against the trace kernel."""
    out = []
    for name, k in p.kernels.items():
        if isinstance(k, ParamKernel) or not k.is_finite:
            continue
        try:
            dev = _unit_deviation(k.to_table())
        except (CompositionError, KernelError):
            continue
        out.append(CheckResult("unit-law", f"kernel {name}", dev <= EXACT_TOL, f"max deviation {dev:.3g}"))
    for name, d in p.diagrams.items():
        inst = _finite_instance(p, name, d)
        if inst is None or not d.is_valid() or len(d.wires) < 2 or math.factorial(len(d.wires)) > MAX_REDUCTIONS:
            continue
        e = _expanded(p, inst)
        if not e.is_finite:
            continue
        ref = trace_kernel(e).probs
        dev, n_ok, term_ok = 0.0, 0, True
        for order in itertools.permutations(inst.wires):
            try:
                if isinstance(inst, ColoredDiagram):
                    k, terms = colored_reduce(inst, p.interfaces, order)
                    term_ok = term_ok and terms["kernel"] == terms["syntactic"]
                else:
                    k = reduce_diagram(inst, order)
            except (DiagramError, TraceError, CompositionError):
                continue
            n_ok += 1
            dev = max(dev, float(np.max(np.abs(k.probs - ref))))
        if n_ok == 0:
            continue
        ok = dev <= EXACT_TOL and term_ok
        detail = f"{n_ok} admissible reduction orders, max deviation {dev:.3g}" + ("" if term_ok else ", color terms disagree")
        out.append(CheckResult("reduction-laws", f"diagram {name}", ok, detail))
    return out


def gaussian_checks(p, n: int = 100_000, seed: int = 0) -> list[CheckResult]:
    """Two-vertex Gaussian-linear diagrams: exact composite moments against Monte Carlo at x = 1."""
    out = []
    for name, d in sorted(p.diagrams.items()):
        if len(d.vertices) != 2 or len(d.wires) != 1 or not all(isinstance(k, GaussianLinear) for k in d.vertices.values()):
            continue
        (w,) = d.wires
        ku, kv = d.vertices[w.src.vertex], d.vertices[w.dst.vertex]
        h = binary_ksc(ku, kv, w.src.slot, w.dst.slot)
        if not isinstance(h, GaussianLinear):
            continue
        U, V = w.src.vertex, w.dst.vertex
        ins = [Port(V, q) for q in range(w.dst.slot)] + [Port(U, q) for q in range(len(ku.source))] + [Port(V, q) for q in range(w.dst.slot + 1, len(kv.source))]
        outs = [Port(U, q) for q in range(w.src.slot)] + [Port(V, q) for q in range(len(kv.target))] + [Port(U, q) for q in range(w.src.slot + 1, len(ku.target))]
        x = tuple((1.0,) * real_dim(o.space) for o in d.input_profile)
        xh = np.concatenate([np.asarray(x[d.inputs.index(q)]) for q in ins]) if ins else np.zeros(0)
        mean_h, var_h = xh @ h.weight + h.bias, h.cov_diag
        # reorder composite coordinates into the diagram's output order
        bounds, pos = {}, 0
        for q, o in zip(outs, h.target):
            bounds[q] = slice(pos, pos + real_dim(o.space))
            pos += real_dim(o.space)
        idx = np.concatenate([np.arange(pos)[bounds[q]] for q in d.outputs])
        ys = trace_sample_batch(d, x, n, substream(seed, "gaussian-check"))
        Y = np.array([np.concatenate([np.asarray(c, dtype=float) for c in y]) for y in ys])
        m, v = Y.mean(axis=0), Y.var(axis=0, ddof=1)
        se_m = np.sqrt(v / n)
        se_v = np.sqrt(np.maximum(np.mean((Y - m) ** 4, axis=0) - v**2, 0.0) / n)
        ok_m = np.all(np.abs(m - mean_h[idx]) <= 5 * se_m + EXACT_TOL)
        ok_v = np.all(np.abs(v - var_h[idx]) <= 5 * se_v + EXACT_TOL)
        out.append(CheckResult("gaussian-moments", f"diagram {name}", bool(ok_m and ok_v), f"N={n}, mean z {np.max(np.abs(m - mean_h[idx]) / np.maximum(se_m, 1e-300)):.2f}"))
    return out


def coherence_checks(p, n: int = 100_000, seed: int = 0) -> list[CheckResult]:
    if p.interfaces is None:
        return []
    out = []
    for c in check_interface_coherence(p.interfaces, n=n, seed=seed):
        path = " ; ".join(f"{f}:{b}->{t}" for f, b, t in c.path)
        out.append(CheckResult("interface-coherence", path, c.ok, f"{c.mode} deviation {c.deviation:.3g} (tol {c.tolerance:g})"))
    return out


def functor_checks(p, seed: int = 0) -> list[CheckResult]:
    c = p.ccmp
    if c is None:
        return []
    out = []
    rep = check_strict_functoriality(c, seed=seed)
    out.append(CheckResult("functoriality", "strict identities and composites", not rep, "; ".join(rep)))
    rng = substream(seed, "functor-check")
    for m, (s, t) in sorted(c.index.morphisms.items()):
        theta = rng.normal(0.0, 0.7, c.param_dims[s])
        g = c.instantiated_functor(m, theta)
        rep = check_cmp_functor(g)
        out.append(CheckResult("functoriality", f"state pushforward {m}", not rep, "; ".join(rep)))
        rep = check_jacobian(c.push_params(m), [theta])
        out.append(CheckResult("functoriality", f"parameter pushforward {m} jacobian", not rep, "; ".join(rep)))
        for dn, d in sorted(p.diagrams.items()):
            if not all(p.kernel_name(k) in c.states[s].kernels for k in d.vertices.values()):
                continue
            src = d.with_kernels({v: g.src.kernels[p.kernel_name(k)] for v, k in d.vertices.items()})
            img = pushforward_diagram(g, src)
            try:
                a = trace_kernel(_expanded(p, img)).probs
                b = trace_kernel(_expanded(p, src)).probs
            except (TraceError, KernelError, CompositionError):
                continue
            dev = float(np.max(np.abs(a - b)))
            out.append(CheckResult("functoriality", f"trace of {dn} under {m}", dev <= EXACT_TOL, f"max deviation {dev:.3g}"))
    return out


@dataclass
class GradRow:
    coord: str
    value: float
    reference: float
    stderr: float
    ok: bool
    method: str

    def record(self) -> dict:
        return {"coord": self.coord, "value": self.value, "reference": self.reference, "stderr": self.stderr, "ok": self.ok, "method": self.method}


def _coord_labels(pd: ParamDiagram) -> list[str]:
    out = []
    for v, s in pd.layout.items():
        out += [f"{v}[{i}]" for i in range(s.stop - s.start)]
    return out


def grad_check(pd: ParamDiagram, theta, obj, n: int = 50_000, seed: int = 0, h: float = 1e-5) -> tuple[list[GradRow], list[str]]:
    """Per-coordinate comparison of the reverse-mode estimator against its oracles.

    All-finite problems with an exact data law: enumeration vs finite
    differences (relative error), the enumerated estimator expectation vs
    enumeration, and Monte Carlo within five standard errors.  Otherwise
    the per-sample gradient is checked against finite differences with the
    noise frozen.
    """
    theta = pd.check_theta(theta)
    labels = _coord_labels(pd)
    rows, notes = [], []
    rep = validate_pathwise_admissibility(pd, obj)
    if rep:
        return [], rep
    finite = obj.rho_exact is not None and pd.expanded_shape.is_finite
    if finite:
        size = len(obj.rho_exact) * cardinality(profile_space(pd.expanded_shape.output_profile))
        finite = size <= ENUMERATION_LIMIT
    if finite:
        exact = grad_exact_enumeration(pd, theta, obj)
        fd = central_difference(lambda t: expected_objective_exact(pd, t, obj), theta, h)
        unb = estimator_expectation_exact(pd, theta, obj)
        mc = grad_reverse_mode_mc(pd, theta, obj, n, substream(seed, "grad-check"))
        scale = max(float(np.max(np.abs(fd), initial=0.0)), 1e-4)
        for i, lab in enumerate(labels):
            rows.append(GradRow(lab, exact[i], fd[i], 0.0, abs(exact[i] - fd[i]) / scale <= FD_RTOL, "enumeration vs finite difference"))
        for i, lab in enumerate(labels):
            rows.append(GradRow(lab, unb[i], exact[i], 0.0, abs(unb[i] - exact[i]) <= EXACT_TOL, "enumerated estimator vs enumeration"))
        for i, lab in enumerate(labels):
            se = float(mc.stderr[i])
            ok = abs(mc.flat[i] - exact[i]) <= max(5 * se, EXACT_TOL)
            rows.append(GradRow(lab, float(mc.flat[i]), exact[i], se, ok, f"monte carlo (N={n}) vs enumeration"))
        return rows, notes
    if any(k.kind != "pathwise" for k in pd.params.values()):
        mc = grad_reverse_mode_mc(pd, theta, obj, n, substream(seed, "grad-check"))
        notes.append("no oracle for score vertices without an exact data law; reporting the estimate only")
        for i, lab in enumerate(labels):
            rows.append(GradRow(lab, float(mc.flat[i]), math.nan, float(mc.stderr[i]), True, f"monte carlo (N={n})"))
        return rows, notes
    S = 8
    xs, rs = obj.sample_rho(substream(seed, "grad-check-rho"), S)
    per, _ = sample_gradients(pd, theta, obj, S, substream(seed, "grad-check-noise"), xs=xs, rs=rs)
    fd = np.zeros_like(per)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        jp = per_sample_objectives(pd, theta + e, obj, S, substream(seed, "grad-check-noise"), xs, rs)
        jm = per_sample_objectives(pd, theta - e, obj, S, substream(seed, "grad-check-noise"), xs, rs)
        fd[:, i] = (jp - jm) / (2 * h)
    scale = max(float(np.max(np.abs(fd), initial=0.0)), 1e-4)
    for i, lab in enumerate(labels):
        worst = int(np.argmax(np.abs(per[:, i] - fd[:, i])))
        ok = float(np.max(np.abs(per[:, i] - fd[:, i]))) / scale <= FD_RTOL
        rows.append(GradRow(lab, float(per[worst, i]), float(fd[worst, i]), 0.0, ok, f"per-sample pathwise vs frozen-noise finite difference ({S} samples)"))
    return rows, notes


def gradient_checks(p, n: int = 20_000, seed: int = 0) -> list[CheckResult]:
    out = []
    for name, setup in sorted(p.param_diagrams.items()):
        if setup.objective is None:
            continue
        pd = p.param_diagram(name)
        rows, notes = grad_check(pd, setup.theta, p.objectives[setup.objective], n, seed)
        bad = [f"{r.coord} ({r.method})" for r in rows if not r.ok]
        ok = bool(rows or not notes) and not bad and not (notes and not rows)
        if pd.theta_dim == 0:
            ok = True
        detail = f"{len(rows)} comparisons" + (f"; failing: {', '.join(bad)}" if bad else "") + (f"; {'; '.join(notes)}" if notes else "")
        out.append(CheckResult("gradients", f"param diagram {name}", ok, detail))
    return out


SUITES = ("validate", "order-invariance", "unit-law", "reduction-laws", "gaussian-moments", "interface-coherence", "functoriality", "gradients")


def run_all(p, n: int = 100_000, seed: int = 0, grad_samples: int = 20_000) -> list[CheckResult]:
    out = validation_checks(p)
    if not all(r.ok for r in out):
        return out
    out += order_checks(p, seed)
    out += law_checks(p)
    out += gaussian_checks(p, n, seed)
    out += coherence_checks(p, n, seed)
    out += functor_checks(p, seed)
    out += gradient_checks(p, grad_samples, seed)
    return out

"""Color systems, interface systems and colored (typed) diagrams.

Object colors form a finite category ``K`` given by an explicit composition
table.  Morphism colors are free terms over atomic labels; the only
simplifications applied are the unit laws and flattening of unary chains,
so equal terms mean "built by the same slotwise composites".

A colored wire between differently typed slots names a witness ``f`` in
``K``; the interface system supplies the kernel ``kappa[f; B, C]`` realizing
it.  Interface expansion inserts these kernels as unary vertices, turning a
colored diagram into an ordinary one with the same trace kernel.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .diagram import Diagram, DiagramError, Port, Wire, binary_ksc
from .kernels import (
    CompositionError,
    FiniteTable,
    GaussianLinear,
    Kernel,
    compose_unary,
    identity_kernel,
)
from .rng import substream
from .spaces import PROB_TOL, Obj, cardinality, enumerate_points, is_finite, is_real, real_dim
from .trace import reduce_diagram, trace_exact, trace_kernel, trace_sample, trace_expectation_mc

__all__ = [
    "ColorError",
    "Atom",
    "Unit",
    "Seq",
    "Comp",
    "compose_terms",
    "KMor",
    "ColorSystem",
    "check_color_system",
    "InterfaceSystem",
    "PathCheck",
    "check_interface_system",
    "check_interface_coherence",
    "ColoredDiagram",
    "validate_colored",
    "vertex_term",
    "cksc",
    "cksc_term",
    "interface_expand",
    "colored_trace_exact",
    "colored_trace_kernel",
    "colored_trace_sample",
    "colored_trace_mc",
    "colored_reduce",
]


class ColorError(ValueError):
    pass


# -- morphism-color terms ----------------------------------------------------


@dataclass(frozen=True)
class Atom:
    label: str
    dom: tuple[str, ...]
    cod: tuple[str, ...]


@dataclass(frozen=True)
class Unit:
    color: str

    @property
    def dom(self):
        return (self.color,)

    @property
    def cod(self):
        return (self.color,)


@dataclass(frozen=True)
class Seq:
    """A chain of unary atoms, applied first to last."""

    items: tuple[Atom, ...]

    @property
    def dom(self):
        return self.items[0].dom

    @property
    def cod(self):
        return self.items[-1].cod


@dataclass(frozen=True)
class Comp:
    """``outer o_(i,j) inner`` with 0-based slots."""

    outer: object
    inner: object
    i: int
    j: int

    @property
    def dom(self):
        o, n = self.outer.dom, self.inner.dom
        return o[: self.j] + n + o[self.j + 1 :]

    @property
    def cod(self):
        o, n = self.outer.cod, self.inner.cod
        return n[: self.i] + o + n[self.i + 1 :]


def _is_unary(t) -> bool:
    return len(t.dom) == 1 and len(t.cod) == 1


def _chain(t) -> tuple:
    return t.items if isinstance(t, Seq) else (t,)


def compose_terms(outer, inner, i: int, j: int):
    """The slotwise composite of two color terms, normalized for units."""
    if not (0 <= i < len(inner.cod) and 0 <= j < len(outer.dom)):
        raise ColorError(f"slot ({i},{j}) out of range for color terms")
    if inner.cod[i] != outer.dom[j]:
        raise ColorError(f"color mismatch: {inner.cod[i]!r} feeds {outer.dom[j]!r}")
    if isinstance(inner, Unit):
        return outer
    if isinstance(outer, Unit):
        return inner
    if _is_unary(outer) and _is_unary(inner):
        return Seq(_chain(inner) + _chain(outer))
    return Comp(outer, inner, i, j)


# -- color systems ---------------------------------------------------------


@dataclass(frozen=True)
class KMor:
    id: str
    src: str
    dst: str


class ColorSystem:
    """A finite category of object colors with its morphism-color functor.

    ``compose`` maps ``(g, f)`` to the id of ``g o f`` (``f`` applied first).
    Identities are created as ``id_<color>`` unless declared in
    ``identities``.  The functor sends identities to unit colors, generators
    to atoms and a declared composite to the composite of the images of its
    first declared factorization.
    """

    def __init__(self, colors: Iterable[str], morphisms: Iterable[KMor] = (), compose: Mapping | None = None, identities: Mapping | None = None):
        self.colors = tuple(colors)
        if len(set(self.colors)) != len(self.colors):
            raise ColorError("duplicate object colors")
        self.identities = {c: f"id_{c}" for c in self.colors}
        self.identities.update(identities or {})
        self.morphisms: dict[str, KMor] = {}
        for c, m in self.identities.items():
            self.morphisms[m] = KMor(m, c, c)
        for m in morphisms:
            if m.id in self.morphisms and self.morphisms[m.id] != m:
                raise ColorError(f"morphism {m.id!r} declared twice")
            self.morphisms[m.id] = m
        self.compose_table: dict[tuple[str, str], str] = {}
        for c in self.colors:
            e = self.identities[c]
            for m in self.morphisms.values():
                if m.src == c:
                    self.compose_table[(m.id, e)] = m.id
                if m.dst == c:
                    self.compose_table[(e, m.id)] = m.id
        self.compose_table.update({tuple(k): v for k, v in (compose or {}).items()})
        self._words: dict[str, tuple[str, ...]] = {}

    def __repr__(self):
        return f"ColorSystem({len(self.colors)} colors, {len(self.morphisms)} morphisms)"

    def identity(self, c: str) -> str:
        return self.identities[c]

    def is_identity(self, m: str) -> bool:
        return self.identities.get(self.morphisms[m].src) == m

    def hom(self, a: str, b: str) -> list[str]:
        return sorted(m.id for m in self.morphisms.values() if m.src == a and m.dst == b)

    def compose(self, g: str, f: str) -> str:
        try:
            return self.compose_table[(g, f)]
        except KeyError:
            raise ColorError(f"no composite {g} o {f} in the color category") from None

    def word(self, m: str) -> tuple[str, ...]:
        """The generator path of ``m`` (first factor first)."""
        if m in self._words:
            return self._words[m]
        self._words[m] = None  # cycle guard
        if self.is_identity(m):
            w: tuple[str, ...] = ()
        else:
            w = (m,)
            for (g, f), h in self.compose_table.items():
                if h == m and not self.is_identity(g) and not self.is_identity(f):
                    wf, wg = self.word(f), self.word(g)
                    if wf is None or wg is None:
                        raise ColorError(f"composition table defines {m!r} in terms of itself")
                    w = wf + wg
                    break
        self._words[m] = w
        return w

    def iota(self, m: str):
        mor = self.morphisms[m]
        w = self.word(m)
        if not w:
            return Unit(mor.src)
        atoms = tuple(Atom(g, (self.morphisms[g].src,), (self.morphisms[g].dst,)) for g in w)
        return atoms[0] if len(atoms) == 1 else Seq(atoms)


def check_color_system(cs: ColorSystem) -> list[str]:
    report = []
    mors = cs.morphisms
    for m in mors.values():
        for c in (m.src, m.dst):
            if c not in cs.colors:
                report.append(f"morphism {m.id} uses unknown color {c!r}")
    for (g, f), h in cs.compose_table.items():
        if g not in mors or f not in mors or h not in mors:
            report.append(f"composition entry {g} o {f} = {h} names an unknown morphism")
            continue
        if mors[f].dst != mors[g].src:
            report.append(f"composition entry {g} o {f} is not composable")
        elif (mors[h].src, mors[h].dst) != (mors[f].src, mors[g].dst):
            report.append(f"composite {g} o {f} = {h} has the wrong type")
    if report:
        return report
    composable = [(g, f) for g in mors for f in mors if mors[f].dst == mors[g].src]
    for g, f in composable:
        if (g, f) not in cs.compose_table:
            report.append(f"missing composite {g} o {f}")
    if report:
        return report
    for c in cs.colors:
        e = cs.identity(c)
        for m in mors.values():
            if m.src == c and cs.compose(m.id, e) != m.id:
                report.append(f"right unit law fails for {m.id}")
            if m.dst == c and cs.compose(e, m.id) != m.id:
                report.append(f"left unit law fails for {m.id}")
    for h, g, f in itertools.product(mors, repeat=3):
        if mors[f].dst == mors[g].src and mors[g].dst == mors[h].src:
            if cs.compose(h, cs.compose(g, f)) != cs.compose(cs.compose(h, g), f):
                report.append(f"associativity fails for {h}, {g}, {f}")
    try:
        for c in cs.colors:
            if cs.iota(cs.identity(c)) != Unit(c):
                report.append(f"iota does not send the identity at {c} to the unit color")
        for g, f in composable:
            lhs = cs.iota(cs.compose(g, f))
            rhs = compose_terms(cs.iota(g), cs.iota(f), 0, 0)
            if lhs != rhs:
                report.append(f"iota is not functorial on {g} o {f}")
    except ColorError as e:
        report.append(str(e))
    return report


# -- interface systems -----------------------------------------------------


class InterfaceSystem:
    """Admissible witnesses between objects and their interface kernels.

    Identity witnesses on every object are implicit and realized by the
    identity kernel.
    """

    def __init__(self, colors: ColorSystem, kernels: Mapping[tuple[str, Obj, Obj], Kernel] | None = None):
        self.colors = colors
        self.kernels: dict[tuple[str, Obj, Obj], Kernel] = {}
        for (f, b, c), k in (kernels or {}).items():
            self.add(f, b, c, k)

    def add(self, f: str, b: Obj, c: Obj, k: Kernel):
        if f not in self.colors.morphisms:
            raise ColorError(f"unknown witness {f!r}")
        m = self.colors.morphisms[f]
        if (m.src, m.dst) != (b.color, c.color):
            raise ColorError(f"witness {f} : {m.src} -> {m.dst} does not type {b.name} -> {c.name}")
        if k.source != (b,) or k.target != (c,):
            raise ColorError(f"interface kernel for {f} must have profile ({b.name}) -> ({c.name})")
        self.kernels[(f, b, c)] = k

    @property
    def objects(self) -> list[Obj]:
        objs = {o for (_, b, c) in self.kernels for o in (b, c)}
        return sorted(objs, key=lambda o: o.name)

    def admissible(self, b: Obj, c: Obj) -> list[str]:
        out = sorted(f for (f, x, y) in self.kernels if x == b and y == c)
        if b == c and b.color in self.colors.identities:
            e = self.colors.identity(b.color)
            if e not in out:
                out.insert(0, e)
        return out

    def kernel(self, f: str, b: Obj, c: Obj) -> Kernel:
        k = self.kernels.get((f, b, c))
        if k is not None:
            return k
        if b == c and self.colors.identities.get(b.color) == f:
            return identity_kernel(b).replace(name=f)
        raise ColorError(f"{f} is not an admissible witness from {b.name} to {c.name}")

    def witnesses(self) -> list[tuple[str, Obj, Obj]]:
        return sorted(self.kernels, key=lambda t: (t[1].name, t[2].name, t[0]))


@dataclass
class PathCheck:
    path: tuple[tuple[str, str, str], ...]
    mode: str
    deviation: float
    tolerance: float
    note: str = ""

    @property
    def ok(self) -> bool:
        return self.deviation <= self.tolerance

    def describe(self) -> str:
        steps = " ; ".join(f"{f}:{b}->{c}" for f, b, c in self.path)
        status = "ok" if self.ok else "FAIL"
        extra = f" ({self.note})" if self.note else ""
        return f"[{status}] {self.mode} {steps} deviation={self.deviation:.3g} tol={self.tolerance:g}{extra}"


def _bracketings(ks: Sequence[Kernel]) -> Iterable[Kernel]:
    """Every way of composing the unary chain ``ks`` (first applied first)."""
    if len(ks) == 1:
        yield ks[0]
        return
    for split in range(1, len(ks)):
        for left in _bracketings(ks[:split]):
            for right in _bracketings(ks[split:]):
                yield compose_unary(left, right)


def _exact_params(k: Kernel):
    if isinstance(k, FiniteTable):
        return k.probs
    if isinstance(k, GaussianLinear):
        return np.concatenate([k.weight.ravel(), k.bias, k.cov_diag])
    return k.to_table().probs


def _exact_deviation(direct: Kernel, chain: Sequence[Kernel]) -> float:
    a = _exact_params(direct)
    dev = 0.0
    for k in _bracketings(chain):
        b = _exact_params(k)
        if a.shape != b.shape:
            raise CompositionError("representations differ")
        dev = max(dev, float(np.max(np.abs(a - b))) if a.size else 0.0)
    return dev


def _input_grid(obj: Obj, rng: np.random.Generator, n_real: int = 7) -> list:
    s = obj.space
    if is_finite(s):
        return [(x,) for x in enumerate_points(s)]
    if is_real(s) and real_dim(s) == 1:
        from .spaces import unflatten_real

        return [(unflatten_real(s, np.array([v])),) for v in np.linspace(-3.0, 3.0, n_real)]
    if is_real(s):
        from .spaces import unflatten_real

        return [(unflatten_real(s, rng.standard_normal(real_dim(s))),) for _ in range(n_real)]
    raise ColorError(f"no input grid for {obj.name}")


def _sample_chain(chain: Sequence[Kernel], x, n: int, rng) -> list:
    xs = [x] * n
    for k in chain:
        xs = [tuple(y) for y in k.sample_many(xs, rng)]
    return xs


def _tv_estimate(target: Obj, direct: Kernel, chain: Sequence[Kernel], x, n: int, rng) -> float:
    """Total-variation estimate between ``direct(.|x)`` and the chained law."""
    ys = _sample_chain(chain, x, n, rng)
    s = target.space
    if is_finite(s):
        m = cardinality(s)
        from .spaces import point_index

        counts = np.bincount([point_index(s, y[0]) for y in ys], minlength=m) / n
        exact = direct.row(x)
        if exact is None:
            zs = direct.sample_many([x] * n, rng)
            exact = np.bincount([point_index(s, z[0]) for z in zs], minlength=m) / n
        return 0.5 * float(np.abs(counts - exact).sum())
    if is_real(s) and real_dim(s) == 1:
        a = np.array([y[0][0] for y in ys])
        b = np.array([z[0][0] for z in direct.sample_many([x] * n, rng)])
        # shared equal-mass bins from the pooled sample
        edges = np.quantile(np.concatenate([a, b]), np.linspace(0, 1, 41)[1:-1])
        ha = np.bincount(np.searchsorted(edges, a), minlength=40) / n
        hb = np.bincount(np.searchsorted(edges, b), minlength=40) / n
        return 0.5 * float(np.abs(ha - hb).sum())
    raise ColorError(f"no statistical comparison for {target.name}")


def _witness_paths(isys: InterfaceSystem, max_len: int, include_identities: bool):
    steps = [(f, b, c) for (f, b, c) in isys.witnesses()]
    if include_identities:
        for o in isys.objects:
            e = isys.colors.identity(o.color)
            steps.append((e, o, o))

    def extend(path):
        yield path
        if len(path) < max_len:
            last = path[-1][2]
            for s in steps:
                if s[1] == last:
                    yield from extend(path + (s,))

    for s in steps:
        yield from extend((s,))


def check_interface_system(isys: InterfaceSystem) -> list[str]:
    """Identity and closure clauses (closure kernels compared exactly when finite)."""
    report = []
    cs = isys.colors
    for o in isys.objects:
        if o.color not in cs.colors:
            report.append(f"object {o.name} has unknown color {o.color!r}")
            continue
        if cs.identity(o.color) not in isys.admissible(o, o):
            report.append(f"identity witness missing on {o.name}")
    for (f, b, c), (g, c2, d) in itertools.product(isys.witnesses(), repeat=2):
        if c2 != c:
            continue
        try:
            h = cs.compose(g, f)
        except ColorError as e:
            report.append(str(e))
            continue
        if h not in isys.admissible(b, d):
            report.append(f"closure: {g} o {f} = {h} is not admissible from {b.name} to {d.name}")
    return report


def check_interface_coherence(
    isys: InterfaceSystem,
    max_len: int = 3,
    n: int = 100_000,
    seed: int = 0,
    stat_tol: float = 0.01,
    exact_tol: float = PROB_TOL,
    include_identities: bool = True,
) -> list[PathCheck]:
    """Compare ``kappa`` of each composed witness path with every bracketing of the chained kernels.

    Paths of exactly composable kernels are compared exactly; the rest get a
    total-variation estimate at ``n`` samples per grid input, maximized over
    a shared input grid.  Identity steps and single witnesses are only
    checked on exact paths.
    """
    cs = isys.colors
    results = []
    for idx, path in enumerate(_witness_paths(isys, max_len, include_identities)):
        b0, bl = path[0][1], path[-1][2]
        w = path[0][0]
        for f, _, _ in path[1:]:
            w = cs.compose(f, w)
        direct = isys.kernel(w, b0, bl)
        chain = [isys.kernel(f, b, c) for f, b, c in path]
        names = tuple((f, b.name, c.name) for f, b, c in path)
        try:
            dev = _exact_deviation(direct, chain)
            results.append(PathCheck(names, "exact", dev, exact_tol))
            continue
        except (CompositionError, NotImplementedError):
            pass
        if len(path) == 1 or any(cs.is_identity(f) for f, _, _ in path):
            continue
        rng = substream(seed, "coherence", idx)
        grid = _input_grid(b0, rng)
        dev = max(_tv_estimate(bl, direct, chain, x, n, rng) for x in grid)
        results.append(PathCheck(names, "statistical", dev, stat_tol, note=f"TV estimate, N={n} per input, {len(grid)} inputs"))
    return results


# -- colored diagrams --------------------------------------------------------


def vertex_term(k: Kernel):
    """The morphism color of a vertex label: its declared term or an atom named after it."""
    if k.color is not None:
        return k.color
    return Atom(k.name or type(k).__name__, tuple(o.color for o in k.source), tuple(o.color for o in k.target))


class ColoredDiagram(Diagram):
    """A diagram whose internal wires carry interface witnesses.

    A wire with ``witness=None`` stands for the identity witness and is only
    allowed between equal objects.
    """

    def __init__(self, vertices, wires=(), inputs=None, outputs=None, interfaces: InterfaceSystem | None = None):
        super().__init__(vertices, wires, inputs, outputs)
        self.interfaces = interfaces

    def _rebuild(self, vertices, wires, inputs, outputs):
        return type(self)(vertices, wires, inputs, outputs, interfaces=self.interfaces)

    def with_interfaces(self, isys: InterfaceSystem) -> "ColoredDiagram":
        return ColoredDiagram(self.vertices, self.wires, self.inputs, self.outputs, interfaces=isys)

    def witness_of(self, w: Wire) -> str:
        if w.witness is not None:
            return w.witness
        b = self.out_obj(w.src)
        return self.interfaces.colors.identity(b.color) if self.interfaces else f"id_{b.color}"

    def _wire_type_errors(self, w: Wire) -> list[str]:
        b, a = self.out_obj(w.src), self.in_obj(w.dst)
        if self.interfaces is None:
            return [f"wire {w}: no interface system to check witnesses against"]
        if w.witness is None:
            if b != a:
                return [f"wire {w} joins {b.name} to {a.name} without a witness"]
            return []
        if w.witness not in self.interfaces.admissible(b, a):
            return [f"witness {w.witness} is not admissible from {b.name} to {a.name} on wire {w}"]
        return []

    def validate(self) -> list[str]:
        report = super().validate()
        if self.interfaces is not None:
            colors = set(self.interfaces.colors.colors)
            for v, k in self.vertices.items():
                for o in k.source + k.target:
                    if o.color not in colors:
                        report.append(f"vertex {v}: object {o.name} has no known color")
                t = k.color
                if t is not None:
                    want = (tuple(o.color for o in k.source), tuple(o.color for o in k.target))
                    if (t.dom, t.cod) != want:
                        report.append(f"vertex {v}: morphism color {t} does not match object colors")
        return report


def validate_colored(cd: ColoredDiagram, isys: InterfaceSystem | None = None) -> list[str]:
    if isys is not None:
        cd = cd.with_interfaces(isys)
    return cd.validate()


def cksc_term(k: Kernel, l: Kernel, i: int, j: int, f: str, isys: InterfaceSystem):
    inner = compose_terms(isys.colors.iota(f), vertex_term(k), i, 0)
    return compose_terms(vertex_term(l), inner, i, j)


def cksc(k: Kernel, l: Kernel, i: int, j: int, f: str, isys: InterfaceSystem):
    """``l o^f_(i,j) k``: route output ``i`` of ``k`` through ``kappa_f`` into input ``j`` of ``l``.

    Exact (with the composite color term attached) when both binary steps
    compose exactly; otherwise the expanded three-vertex diagram.
    """
    if not 0 <= i < len(k.target) or not 0 <= j < len(l.source):
        raise DiagramError(f"slot ({i},{j}) out of range")
    b, c = k.target[i], l.source[j]
    if f not in isys.admissible(b, c):
        raise ColorError(f"witness {f} is not admissible from {b.name} to {c.name}")
    kappa = isys.kernel(f, b, c)
    term = cksc_term(k, l, i, j, f, isys)
    inner = binary_ksc(k, kappa, i, 0)
    if isinstance(inner, Kernel):
        out = binary_ksc(inner, l, i, j)
        if isinstance(out, Kernel):
            return out.replace(color=term, name=f"{l.name or 'l'}o[{f}]{k.name or 'k'}")
    cd = ColoredDiagram({"k": k, "l": l}, [Wire(Port("k", i), Port("l", j), f)], _ksc_inputs(k, l, j), _ksc_outputs(k, l, i), interfaces=isys)
    return interface_expand(cd, isys)


def _ksc_inputs(k, l, j):
    return [Port("l", q) for q in range(j)] + [Port("k", q) for q in range(len(k.source))] + [Port("l", q) for q in range(j + 1, len(l.source))]


def _ksc_outputs(k, l, i):
    return [Port("k", p) for p in range(i)] + [Port("l", p) for p in range(len(l.target))] + [Port("k", p) for p in range(i + 1, len(k.target))]


def interface_vertex_id(w: Wire) -> str:
    return f"~{w.src.vertex}.{w.src.slot}>{w.dst.vertex}.{w.dst.slot}"


def interface_expand(cd: ColoredDiagram, isys: InterfaceSystem | None = None) -> Diagram:
    """Insert each wire's interface kernel as a unary vertex."""
    isys = isys or cd.interfaces
    cd = cd.with_interfaces(isys) if isys is not cd.interfaces else cd
    cd.require_valid()
    vertices = dict(cd.vertices)
    wires = []
    for w in cd.wires:
        f = cd.witness_of(w)
        b, a = cd.out_obj(w.src), cd.in_obj(w.dst)
        vid = interface_vertex_id(w)
        if vid in vertices:
            raise DiagramError(f"vertex id {vid!r} is reserved for interface vertices")
        vertices[vid] = isys.kernel(f, b, a)
        wires.append(Wire(w.src, Port(vid, 0)))
        wires.append(Wire(Port(vid, 0), w.dst))
    d = Diagram(vertices, wires, cd.inputs, cd.outputs)
    d.require_valid()
    return d


def colored_trace_exact(cd: ColoredDiagram, isys: InterfaceSystem, x, order=None):
    return trace_exact(interface_expand(cd, isys), x, order)


def colored_trace_kernel(cd: ColoredDiagram, isys: InterfaceSystem) -> FiniteTable:
    return trace_kernel(interface_expand(cd, isys))


def colored_trace_sample(cd: ColoredDiagram, isys: InterfaceSystem, x, rng):
    return trace_sample(interface_expand(cd, isys), x, rng)


def colored_trace_mc(cd: ColoredDiagram, isys: InterfaceSystem, x, f, n: int, rng, **kw):
    return trace_expectation_mc(interface_expand(cd, isys), x, f, n, rng, **kw)


def colored_reduce(cd: ColoredDiagram, isys: InterfaceSystem, wire_order: Sequence[Wire]):
    """Evaluate by binary CKSC steps along ``wire_order``.

    Returns the kernel in the diagram's external order together with the
    color term of the unpermuted composite, which is also recomputed from
    the vertex terms alone so the two can be compared.
    """
    terms = {}

    def step(ku, kv, i, j, w):
        out = cksc(ku, kv, i, j, cd.witness_of(w), isys)
        if not isinstance(out, Kernel):
            raise CompositionError("colored reduction needs exactly composable kernels")
        return out

    kernel, raw = reduce_diagram(cd.with_interfaces(isys), wire_order, step, raw=True)
    terms["kernel"] = raw.color
    # the same reduction on terms only
    blob = {v: v for v in cd.vertices}
    tm = {v: (vertex_term(k), [Port(v, q) for q in range(len(k.source))], [Port(v, p) for p in range(len(k.target))]) for v, k in cd.vertices.items()}
    for w in wire_order:
        U, V = blob[w.src.vertex], blob[w.dst.vertex]
        tu, insU, outsU = tm.pop(U)
        tv, insV, outsV = tm.pop(V)
        i, j = outsU.index(w.src), insV.index(w.dst)
        inner = compose_terms(isys.colors.iota(cd.witness_of(w)), tu, i, 0)
        tm[U] = (compose_terms(tv, inner, i, j), insV[:j] + insU + insV[j + 1 :], outsU[:i] + outsV + outsU[i + 1 :])
        for v, bl in blob.items():
            if bl == V:
                blob[v] = U
    (t, _, _), = tm.values()
    terms["syntactic"] = t
    return kernel, terms

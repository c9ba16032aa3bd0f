"""Co-indexed families of colored Markov polycategories.

A finite index category ``T`` of states; each state ``t`` carries a
registry of objects and named kernels over one shared color system, and a
parameter space ``R^{dim t}``.  A morphism ``alpha: t -> t'`` transports
diagrams by a CMP-functor (renaming objects and kernels) and parameters by
a differentiable map with a user-supplied Jacobian.  Gradients travel back
along ``alpha`` by the transposed Jacobian.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .colors import ColoredDiagram, ColorSystem, InterfaceSystem, cksc, vertex_term
from .diagram import Diagram, Wire, binary_ksc
from .kernels import CompositionError, DeterministicMap, Kernel, kernels_equal
from .spaces import PROB_TOL, Obj

__all__ = [
    "CCMPError",
    "IndexCat",
    "check_index_cat",
    "Registry",
    "CMPFunctor",
    "identity_functor",
    "compose_functors",
    "check_cmp_functor",
    "pushforward_diagram",
    "ParamPushforward",
    "linear_pushforward",
    "identity_pushforward",
    "compose_pushforwards",
    "check_jacobian",
    "CCMP",
    "check_strict_functoriality",
    "pullback_gradient",
    "embed_pushforward",
]


class CCMPError(ValueError):
    pass


# -- index categories ------------------------------------------------------


class IndexCat:
    """A finite category given by its full composition table.

    ``compose[(beta, alpha)]`` is ``beta o alpha`` (``alpha`` first).  Unit
    entries for the identities ``id_<t>`` are filled in automatically.
    """

    def __init__(self, objects: Iterable[str], morphisms: Mapping[str, tuple[str, str]] = (), compose: Mapping | None = None):
        self.objects = tuple(objects)
        self.identities = {t: f"id_{t}" for t in self.objects}
        self.morphisms: dict[str, tuple[str, str]] = {e: (t, t) for t, e in self.identities.items()}
        for m, (s, t) in dict(morphisms).items():
            self.morphisms[m] = (s, t)
        self.compose_table: dict[tuple[str, str], str] = {}
        for t, e in self.identities.items():
            for m, (s, d) in self.morphisms.items():
                if s == t:
                    self.compose_table[(m, e)] = m
                if d == t:
                    self.compose_table[(e, m)] = m
        self.compose_table.update({tuple(k): v for k, v in (compose or {}).items()})

    def src(self, m: str) -> str:
        return self.morphisms[m][0]

    def dst(self, m: str) -> str:
        return self.morphisms[m][1]

    def compose(self, beta: str, alpha: str) -> str:
        try:
            return self.compose_table[(beta, alpha)]
        except KeyError:
            raise CCMPError(f"no composite {beta} o {alpha}") from None

    def composable(self) -> list[tuple[str, str]]:
        return [(b, a) for b in self.morphisms for a in self.morphisms if self.dst(a) == self.src(b)]


def check_index_cat(cat: IndexCat) -> list[str]:
    report = []
    for m, (s, t) in cat.morphisms.items():
        if s not in cat.objects or t not in cat.objects:
            report.append(f"morphism {m} has an unknown endpoint")
    for (b, a), c in cat.compose_table.items():
        if c not in cat.morphisms or b not in cat.morphisms or a not in cat.morphisms:
            report.append(f"composition entry {b} o {a} = {c} names an unknown morphism")
        elif cat.dst(a) != cat.src(b) or cat.morphisms[c] != (cat.src(a), cat.dst(b)):
            report.append(f"composition entry {b} o {a} = {c} is ill-typed")
    if report:
        return report
    for b, a in cat.composable():
        if (b, a) not in cat.compose_table:
            report.append(f"missing composite {b} o {a}")
    if report:
        return report
    for c, b, a in itertools.product(cat.morphisms, repeat=3):
        if cat.dst(a) == cat.src(b) and cat.dst(b) == cat.src(c):
            if cat.compose(c, cat.compose(b, a)) != cat.compose(cat.compose(c, b), a):
                report.append(f"associativity fails for {c}, {b}, {a}")
    return report


# -- registries and CMP-functors ---------------------------------------------


@dataclass
class Registry:
    """The CMP at one state: named objects, named kernels, an interface system.

    ``composites`` lists registered KSC/CKSC composites as
    ``(k, l, i, j, witness, h)``: kernel ``h`` equals ``l o^witness_(i,j) k``.
    """

    objects: dict
    kernels: dict
    interfaces: InterfaceSystem
    composites: list = field(default_factory=list)

    @property
    def param_layout(self) -> dict[str, slice]:
        """Parameter blocks of the parameterized kernels, in name order."""
        out, pos = {}, 0
        for name in sorted(self.kernels):
            k = self.kernels[name]
            dim = getattr(k, "theta_dim", None)
            if dim is not None:
                out[name] = slice(pos, pos + dim)
                pos += dim
        return out

    @property
    def param_dim(self) -> int:
        return sum(s.stop - s.start for s in self.param_layout.values())

    def instantiate(self, theta) -> "Registry":
        """Fix the parameters and evaluate the registered composites."""
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape != (self.param_dim,):
            raise CCMPError(f"state expects {self.param_dim} parameters, got {theta.shape[0]}")
        kernels = dict(self.kernels)
        for name, s in self.param_layout.items():
            kernels[name] = self.kernels[name].at(theta[s]).replace(name=name)
        for kn, ln, i, j, f, hn in self.composites:
            h = _composite(kernels[kn], kernels[ln], i, j, f, self.interfaces)
            if not isinstance(h, Kernel):
                raise CCMPError(f"composite {hn} is not exactly computable")
            kernels[hn] = h.replace(name=hn)
        return Registry(dict(self.objects), kernels, self.interfaces, list(self.composites))

    def name_of(self, k: Kernel) -> str:
        for name, kk in self.kernels.items():
            if kk is k:
                return name
        raise CCMPError(f"kernel {k!r} is not registered")


@dataclass
class CMPFunctor:
    src: Registry
    dst: Registry
    object_map: dict
    kernel_map: dict

    def obj(self, o: Obj) -> Obj:
        name = next((n for n, oo in self.src.objects.items() if oo == o), None)
        if name is None or name not in self.object_map:
            raise CCMPError(f"object {o.name} is not in the functor's domain")
        return self.dst.objects[self.object_map[name]]

    def kernel(self, name: str) -> Kernel:
        if name not in self.kernel_map:
            raise CCMPError(f"kernel {name!r} is not in the functor's domain")
        return self.dst.kernels[self.kernel_map[name]]


def identity_functor(reg: Registry) -> CMPFunctor:
    names = set(reg.kernels) | {c[5] for c in reg.composites}
    return CMPFunctor(reg, reg, {n: n for n in reg.objects}, {n: n for n in sorted(names)})


def compose_functors(g2: CMPFunctor, g1: CMPFunctor) -> CMPFunctor:
    """``g2 o g1``."""
    return CMPFunctor(
        g1.src,
        g2.dst,
        {a: g2.object_map[b] for a, b in g1.object_map.items() if b in g2.object_map},
        {a: g2.kernel_map[b] for a, b in g1.kernel_map.items() if b in g2.kernel_map},
    )


def _composite(k, l, i, j, witness, isys):
    if witness is None:
        return binary_ksc(k, l, i, j)
    return cksc(k, l, i, j, witness, isys)


def _close(a: Kernel, b: Kernel, tol: float) -> bool:
    if not isinstance(a, Kernel) or not isinstance(b, Kernel):
        return False
    return kernels_equal(a, b, tol)


def check_cmp_functor(g: CMPFunctor, composites: Sequence | None = None, tol: float = PROB_TOL) -> list[str]:
    report = []
    src, dst = g.src, g.dst
    for a, b in g.object_map.items():
        oa, ob = src.objects[a], dst.objects.get(b)
        if ob is None:
            report.append(f"object {a} maps to unknown {b}")
        elif oa.color != ob.color:
            report.append(f"color violation: {a} has color {oa.color} but its image {b} has {ob.color}")
    for a in src.objects:
        if a not in g.object_map:
            report.append(f"object {a} is not mapped")
    for name, k in src.kernels.items():
        if name not in g.kernel_map:
            report.append(f"kernel {name} is not mapped")
            continue
        img = dst.kernels.get(g.kernel_map[name])
        if img is None:
            report.append(f"kernel {name} maps to unknown {g.kernel_map[name]}")
            continue
        try:
            want_s = tuple(g.obj(o) for o in k.source)
            want_t = tuple(g.obj(o) for o in k.target)
        except CCMPError as e:
            report.append(str(e))
            continue
        if img.source != want_s or img.target != want_t:
            report.append(f"kernel {name}: image profile does not match the mapped objects")
        if vertex_term(img) != vertex_term(k):
            report.append(f"kernel {name}: morphism color changes under the functor")
        if isinstance(k, DeterministicMap) and k.is_identity and not (isinstance(img, DeterministicMap) and img.is_identity):
            report.append(f"kernel {name}: identity is not sent to an identity")
    # interfaces
    for (f, b, c), kappa in src.interfaces.kernels.items():
        try:
            gb, gc = g.obj(b), g.obj(c)
        except CCMPError as e:
            report.append(str(e))
            continue
        if f not in dst.interfaces.admissible(gb, gc):
            report.append(f"witness {f} from {b.name} to {c.name} is not admissible after the functor")
            continue
        img = dst.interfaces.kernel(f, gb, gc)
        if img is not kappa and not _close(kappa.replace(source=img.source, target=img.target), img, tol):
            report.append(f"interface kernel of {f} from {b.name} to {c.name} is not preserved")
    # composites
    for entry in composites if composites is not None else src.composites:
        kn, ln, i, j, f, hn = entry
        if hn not in src.kernels:
            continue  # parameterized state: composites exist only once instantiated
        try:
            gk, gl, gh = g.kernel(kn), g.kernel(ln), g.kernel(hn)
            img = _composite(gk, gl, i, j, f, dst.interfaces)
        except (CCMPError, CompositionError) as e:
            report.append(f"composite {hn}: {e}")
            continue
        if not _close(gh, img, tol):
            report.append(f"composite {hn} = {ln} o({i},{j}) {kn} is not preserved")
    return report


def pushforward_diagram(g: CMPFunctor, cd: Diagram) -> Diagram:
    """Apply the functor to every vertex label; shape, witnesses and external orders are kept."""
    vertices = {}
    for v, k in cd.vertices.items():
        vertices[v] = g.kernel(g.src.name_of(k))
    if isinstance(cd, ColoredDiagram):
        return ColoredDiagram(vertices, cd.wires, cd.inputs, cd.outputs, interfaces=g.dst.interfaces)
    return type(cd)(vertices, cd.wires, cd.inputs, cd.outputs)


# -- parameter pushforwards ---------------------------------------------------


@dataclass
class ParamPushforward:
    src_dim: int
    dst_dim: int
    fn: Callable
    jac: Callable
    name: str = ""
    spec: dict | None = None

    def __call__(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape != (self.src_dim,):
            raise CCMPError(f"pushforward {self.name} expects {self.src_dim} parameters, got {theta.shape[0]}")
        return np.asarray(self.fn(theta), dtype=float)

    def jacobian(self, theta) -> np.ndarray:
        return np.asarray(self.jac(np.asarray(theta, dtype=float).reshape(-1)), dtype=float).reshape(self.dst_dim, self.src_dim)


def linear_pushforward(matrix, name: str = "") -> ParamPushforward:
    A = np.asarray(matrix, dtype=float)
    return ParamPushforward(A.shape[1], A.shape[0], lambda t: A @ t, lambda t: A, name, {"matrix": A.tolist()})


def identity_pushforward(dim: int, name: str = "") -> ParamPushforward:
    return linear_pushforward(np.eye(dim), name)


def compose_pushforwards(beta: ParamPushforward, alpha: ParamPushforward) -> ParamPushforward:
    if alpha.dst_dim != beta.src_dim:
        raise CCMPError("parameter pushforwards are not composable")
    return ParamPushforward(
        alpha.src_dim,
        beta.dst_dim,
        lambda t: beta(alpha(t)),
        lambda t: beta.jacobian(alpha(t)) @ alpha.jacobian(t),
        f"{beta.name}o{alpha.name}",
    )


def check_jacobian(p: ParamPushforward, thetas: Sequence, h: float = 1e-5, rtol: float = 1e-4) -> list[str]:
    report = []
    for theta in thetas:
        theta = np.asarray(theta, dtype=float)
        J = p.jacobian(theta)
        fd = np.zeros_like(J)
        for i in range(p.src_dim):
            e = np.zeros(p.src_dim)
            e[i] = h
            fd[:, i] = (p(theta + e) - p(theta - e)) / (2 * h)
        scale = max(np.max(np.abs(fd)), 1e-12) if fd.size else 1.0
        err = float(np.max(np.abs(J - fd)) / scale) if fd.size else 0.0
        if err > rtol:
            report.append(f"jacobian of {p.name} off by relative {err:.2e} at a test point")
    return report


def pullback_gradient(p: ParamPushforward, theta_t, grad_at_target) -> np.ndarray:
    g = np.asarray(grad_at_target, dtype=float).reshape(-1)
    if g.shape != (p.dst_dim,):
        raise CCMPError(f"gradient has length {g.shape[0]}, expected {p.dst_dim}")
    return p.jacobian(theta_t).T @ g


# -- the co-indexed structure -------------------------------------------------


@dataclass
class CCMP:
    index: IndexCat
    colors: ColorSystem
    states: dict
    state_push: dict
    param_push: dict
    diagrams: dict = field(default_factory=dict)

    @property
    def param_dims(self) -> dict[str, int]:
        return {t: r.param_dim for t, r in self.states.items()}

    def push_state(self, alpha: str) -> CMPFunctor:
        if alpha in self.state_push:
            return self.state_push[alpha]
        src = self.index.src(alpha)
        if self.index.identities.get(src) == alpha:
            return identity_functor(self.states[src])
        raise CCMPError(f"no state pushforward for {alpha}")

    def push_params(self, alpha: str) -> ParamPushforward:
        if alpha in self.param_push:
            return self.param_push[alpha]
        src = self.index.src(alpha)
        if self.index.identities.get(src) == alpha:
            return identity_pushforward(self.param_dims[src], alpha)
        raise CCMPError(f"no parameter pushforward for {alpha}")

    def instantiated_functor(self, alpha: str, theta_t) -> CMPFunctor:
        """The state pushforward between the registries fixed at ``theta_t`` and its pushforward."""
        g = self.push_state(alpha)
        theta_dst = self.push_params(alpha)(theta_t)
        return CMPFunctor(g.src.instantiate(theta_t), g.dst.instantiate(theta_dst), g.object_map, g.kernel_map)

    def pullback(self, alpha: str, theta_t, grad_at_target) -> np.ndarray:
        return pullback_gradient(self.push_params(alpha), theta_t, grad_at_target)


def _functor_maps_equal(a: CMPFunctor, b: CMPFunctor) -> bool:
    return a.object_map == b.object_map and a.kernel_map == b.kernel_map and a.dst is b.dst


def check_strict_functoriality(c: CCMP, n_points: int = 5, seed: int = 0, tol: float = 1e-9) -> list[str]:
    report = list(check_index_cat(c.index))
    rng = np.random.default_rng(seed)
    for t in c.index.objects:
        e = c.index.identities[t]
        g = c.push_state(e)
        ident = identity_functor(c.states[t])
        if not _functor_maps_equal(g, ident):
            report.append(f"state pushforward of {e} is not the identity")
        p = c.push_params(e)
        for _ in range(n_points):
            th = rng.standard_normal(c.param_dims[t])
            if np.max(np.abs(p(th) - th), initial=0.0) > tol:
                report.append(f"parameter pushforward of {e} is not the identity")
                break
    for m, (s, t) in c.index.morphisms.items():
        g = c.push_state(m)
        if g.src is not c.states[s] or g.dst is not c.states[t]:
            report.append(f"state pushforward of {m} has the wrong endpoints")
        p = c.push_params(m)
        if (p.src_dim, p.dst_dim) != (c.param_dims[s], c.param_dims[t]):
            report.append(f"parameter pushforward of {m} has the wrong dimensions")
    if report:
        return report
    for beta, alpha in c.index.composable():
        gamma = c.index.compose(beta, alpha)
        if not _functor_maps_equal(c.push_state(gamma), compose_functors(c.push_state(beta), c.push_state(alpha))):
            report.append(f"state pushforward of {gamma} differs from {beta} after {alpha}")
        pg, pb, pa = c.push_params(gamma), c.push_params(beta), c.push_params(alpha)
        for _ in range(n_points):
            th = rng.standard_normal(c.param_dims[c.index.src(alpha)])
            if np.max(np.abs(pg(th) - pb(pa(th))), initial=0.0) > tol:
                report.append(f"parameter pushforward of {gamma} differs from {beta} after {alpha}")
                break
    return report


def embed_pushforward(src_dim: int, dst_dim: int, copy: Sequence, init: Sequence = (), name: str = "") -> ParamPushforward:
    """Copy shared coordinates and initialize the rest.

    ``copy`` holds ``(dst, src)`` index pairs; ``init`` holds
    ``(dst, src, mode)`` with mode ``"zero"`` or ``"tanh"`` (the new
    coordinate is ``tanh(theta[src])``).  Coordinates listed nowhere are 0.
    """
    copy = [(int(d), int(s)) for d, s in copy]
    init = [(int(d), int(s), str(m)) for d, s, m in init]
    for _, _, m in init:
        if m not in ("zero", "tanh"):
            raise CCMPError(f"unknown initialization {m!r}")
    cd = np.array([d for d, _ in copy], dtype=int)
    cs = np.array([s for _, s in copy], dtype=int)
    td = np.array([d for d, _, m in init if m == "tanh"], dtype=int)
    ts = np.array([s for _, s, m in init if m == "tanh"], dtype=int)

    def fn(theta):
        out = np.zeros(dst_dim)
        out[cd] = theta[cs]
        out[td] = np.tanh(theta[ts])
        return out

    def jac(theta):
        J = np.zeros((dst_dim, src_dim))
        J[cd, cs] = 1.0
        J[td, ts] = 1.0 - np.tanh(theta[ts]) ** 2
        return J

    spec = {"builtin": "embed", "args": {"copy": [list(c) for c in copy], "init": [list(i) for i in init]}}
    return ParamPushforward(src_dim, dst_dim, fn, jac, name, spec)

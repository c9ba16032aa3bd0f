"""Finite acyclic string diagrams of kernels and binary slotwise composition.

Slot indices are 0-based throughout: ``Port("k", 0)`` is the first slot of
vertex ``k``.  Whether a port is an input or an output slot is determined by
where it appears (``Wire.src`` is always an output slot, ``Wire.dst`` an
input slot).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .kernels import (
    CompositionError,
    FiniteTable,
    GaussianLinear,
    Kernel,
    KernelError,
)
from .spaces import Obj, real_dim

__all__ = [
    "Port",
    "Wire",
    "Diagram",
    "DiagramError",
    "validate",
    "topo_sort",
    "binary_ksc",
    "ksc_profiles",
    "connect",
    "same_type",
]


class DiagramError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Port:
    vertex: str
    slot: int

    def __str__(self):
        return f"{self.vertex}:{self.slot}"


@dataclass(frozen=True, order=True)
class Wire:
    src: Port
    dst: Port
    witness: str | None = None

    def __str__(self):
        w = f" via {self.witness}" if self.witness is not None else ""
        return f"{self.src} -> {self.dst}{w}"


def _port(p) -> Port:
    return p if isinstance(p, Port) else Port(str(p[0]), int(p[1]))


def _wire(w) -> Wire:
    if isinstance(w, Wire):
        return w
    src, dst, *rest = w
    return Wire(_port(src), _port(dst), rest[0] if rest else None)


def same_type(a: Obj, b: Obj) -> bool:
    """Uncolored wires need structurally equal underlying spaces."""
    return a.space == b.space


class Diagram:
    """An immutable finite diagram of kernel-labelled vertices.

    ``inputs`` and ``outputs`` list the external slots in their chosen order.
    When omitted they default to the unwired slots sorted by (vertex, slot).
    Construction never raises on structural problems; call :meth:`validate`
    for a report or :meth:`require_valid` to fail fast.
    """

    def __init__(self, vertices: Mapping[str, Kernel], wires: Iterable = (), inputs: Sequence | None = None, outputs: Sequence | None = None):
        self.vertices: dict[str, Kernel] = {str(v): k for v, k in sorted(vertices.items())}
        self.wires: tuple[Wire, ...] = tuple(sorted({_wire(w) for w in wires}))
        wired_in = {w.dst for w in self.wires}
        wired_out = {w.src for w in self.wires}
        if inputs is None:
            inputs = [Port(v, q) for v, k in self.vertices.items() for q in range(len(k.source)) if Port(v, q) not in wired_in]
        if outputs is None:
            outputs = [Port(v, p) for v, k in self.vertices.items() for p in range(len(k.target)) if Port(v, p) not in wired_out]
        self.inputs: tuple[Port, ...] = tuple(_port(p) for p in inputs)
        self.outputs: tuple[Port, ...] = tuple(_port(p) for p in outputs)
        self._wire_into = {w.dst: w for w in self.wires}
        self._wire_from = {w.src: w for w in self.wires}
        self._topo = None

    # -- structure ------------------------------------------------------------

    def __repr__(self):
        return f"{type(self).__name__}({len(self.vertices)} vertices, {len(self.wires)} wires)"

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return (
            self.vertices.keys() == other.vertices.keys()
            and all(self.vertices[v] is other.vertices[v] for v in self.vertices)
            and self.wires == other.wires
            and self.inputs == other.inputs
            and self.outputs == other.outputs
        )

    __hash__ = None

    def structure(self) -> tuple:
        """Vertex-label-free shape: vertex ids, wires and external orders."""
        return (tuple(self.vertices), self.wires, self.inputs, self.outputs)

    def in_obj(self, port: Port) -> Obj:
        return self.vertices[port.vertex].source[port.slot]

    def out_obj(self, port: Port) -> Obj:
        return self.vertices[port.vertex].target[port.slot]

    @property
    def input_profile(self) -> tuple[Obj, ...]:
        return tuple(self.in_obj(p) for p in self.inputs)

    @property
    def output_profile(self) -> tuple[Obj, ...]:
        return tuple(self.out_obj(p) for p in self.outputs)

    def wire_into(self, port: Port) -> Wire | None:
        return self._wire_into.get(port)

    def wire_from(self, port: Port) -> Wire | None:
        return self._wire_from.get(port)

    def edges(self) -> set[tuple[str, str]]:
        return {(w.src.vertex, w.dst.vertex) for w in self.wires}

    def successors(self, v: str) -> set[str]:
        return {w.dst.vertex for w in self.wires if w.src.vertex == v}

    def predecessors(self, v: str) -> set[str]:
        return {w.src.vertex for w in self.wires if w.dst.vertex == v}

    def descendants(self, v: str) -> set[str]:
        seen, stack = set(), [v]
        while stack:
            for s in self.successors(stack.pop()):
                if s not in seen:
                    seen.add(s)
                    stack.append(s)
        return seen

    @property
    def is_finite(self) -> bool:
        return all(k.is_finite for k in self.vertices.values())

    def with_kernels(self, kernels: Mapping[str, Kernel]) -> "Diagram":
        """Same shape, some vertex labels replaced."""
        new = dict(self.vertices)
        new.update(kernels)
        return self._rebuild(new, self.wires, self.inputs, self.outputs)

    def _rebuild(self, vertices, wires, inputs, outputs):
        return type(self)(vertices, wires, inputs, outputs)

    def renamed(self, prefix: str) -> "Diagram":
        ren = lambda p: Port(prefix + p.vertex, p.slot)  # noqa: E731
        return self._rebuild(
            {prefix + v: k for v, k in self.vertices.items()},
            [Wire(ren(w.src), ren(w.dst), w.witness) for w in self.wires],
            [ren(p) for p in self.inputs],
            [ren(p) for p in self.outputs],
        )

    # -- validation -------------------------------------------------------

    def _wire_type_errors(self, w: Wire) -> list[str]:
        if w.witness is not None:
            return [f"wire {w} carries a witness; uncolored diagrams need plain wires"]
        b, a = self.out_obj(w.src), self.in_obj(w.dst)
        if not same_type(b, a):
            return [f"type mismatch on wire {w}: {b.name}:{b.space} vs {a.name}:{a.space}"]
        return []

    def validate(self) -> list[str]:
        report: list[str] = []
        good = []
        for w in self.wires:
            bad = False
            for port, side in ((w.src, "target"), (w.dst, "source")):
                k = self.vertices.get(port.vertex)
                if k is None:
                    report.append(f"wire {w} references unknown vertex {port.vertex!r}")
                    bad = True
                elif not 0 <= port.slot < len(getattr(k, side)):
                    report.append(f"wire {w} references missing slot {port}")
                    bad = True
            if not bad:
                good.append(w)
        # linearity
        for attr, what in (("dst", "input"), ("src", "output")):
            seen: dict[Port, int] = {}
            for w in good:
                seen[getattr(w, attr)] = seen.get(getattr(w, attr), 0) + 1
            for port, n in sorted(seen.items()):
                if n > 1:
                    report.append(f"linearity: {what} slot {port} is used by {n} wires")
        # typing
        for w in good:
            report.extend(self._wire_type_errors(w))
        # acyclicity
        cyc = _find_cycle(self.vertices, {(w.src.vertex, w.dst.vertex) for w in good})
        if cyc:
            report.append("acyclicity: directed cycle " + " -> ".join(cyc))
        # external profiles
        wired_in = {w.dst for w in good}
        wired_out = {w.src for w in good}
        all_in = {Port(v, q) for v, k in self.vertices.items() for q in range(len(k.source))}
        all_out = {Port(v, p) for v, k in self.vertices.items() for p in range(len(k.target))}
        for listed, universe, wired, what in (
            (self.inputs, all_in, wired_in, "input"),
            (self.outputs, all_out, wired_out, "output"),
        ):
            if len(set(listed)) != len(listed):
                report.append(f"external {what} list repeats a slot")
            for p in listed:
                if p not in universe:
                    report.append(f"external {what} {p} is not a slot of the diagram")
                elif p in wired:
                    report.append(f"external {what} {p} is also wired internally")
            for p in sorted(universe - wired - set(listed)):
                report.append(f"external {what} list misses unwired slot {p}")
        return report

    def is_valid(self) -> bool:
        return not self.validate()

    def require_valid(self):
        report = self.validate()
        if report:
            raise DiagramError("; ".join(report))

    def topo_sort(self) -> list[str]:
        if self._topo is None:
            self._topo = _kahn(self.vertices, self.edges())
        return list(self._topo)

    def is_topological(self, order: Sequence[str]) -> bool:
        if sorted(order) != sorted(self.vertices):
            return False
        pos = {v: i for i, v in enumerate(order)}
        return all(pos[u] < pos[v] for u, v in self.edges())


def _find_cycle(vertices, edges) -> list[str] | None:
    succ: dict[str, list[str]] = {v: [] for v in vertices}
    for u, v in edges:
        succ.setdefault(u, []).append(v)
    color = {v: 0 for v in succ}
    stack_path: list[str] = []

    def dfs(u):
        color[u] = 1
        stack_path.append(u)
        for v in sorted(succ.get(u, [])):
            if color.get(v, 0) == 1:
                return stack_path[stack_path.index(v) :] + [v]
            if color.get(v, 0) == 0:
                found = dfs(v)
                if found:
                    return found
        stack_path.pop()
        color[u] = 2
        return None

    for v in sorted(succ):
        if color[v] == 0:
            found = dfs(v)
            if found:
                return found
    return None


def _kahn(vertices, edges) -> list[str]:
    indeg = {v: 0 for v in vertices}
    succ: dict[str, set[str]] = {v: set() for v in vertices}
    for u, v in edges:
        if v not in succ[u]:
            succ[u].add(v)
            indeg[v] += 1
    heap = [v for v, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        u = heapq.heappop(heap)
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(heap, v)
    if len(order) != len(indeg):
        raise DiagramError("acyclicity: the diagram has a directed cycle")
    return order


def validate(d: Diagram) -> list[str]:
    return d.validate()


def topo_sort(d: Diagram) -> list[str]:
    return d.topo_sort()


# -- binary slotwise composition ---------------------------------------------


def ksc_profiles(k: Kernel, l: Kernel, i: int, j: int) -> tuple[tuple[Obj, ...], tuple[Obj, ...]]:
    """Input and output profiles of ``l o_(i,j) k`` under the insertion convention."""
    C, A = l.source, k.source
    B, D = k.target, l.target
    return C[:j] + A + C[j + 1 :], B[:i] + D + B[i + 1 :]


def _check_slots(k: Kernel, l: Kernel, i: int, j: int):
    if not 0 <= i < len(k.target):
        raise DiagramError(f"output slot {i} out of range for {k!r}")
    if not 0 <= j < len(l.source):
        raise DiagramError(f"input slot {j} out of range for {l!r}")


def _finite_ksc(k: FiniteTable, l: FiniteTable, i: int, j: int) -> FiniteTable:
    m, n, q, r = len(k.source), len(k.target), len(l.source), len(l.target)
    a_lab = list(range(m))
    b_lab = list(range(m, m + n))
    nxt = m + n
    c_lab = []
    for jj in range(q):
        if jj == j:
            c_lab.append(b_lab[i])
        else:
            c_lab.append(nxt)
            nxt += 1
    d_lab = list(range(nxt, nxt + r))
    out = c_lab[:j] + a_lab + c_lab[j + 1 :] + b_lab[:i] + d_lab + b_lab[i + 1 :]
    t = np.einsum(k.tensor(), a_lab + b_lab, l.tensor(), c_lab + d_lab, out)
    gamma, delta = ksc_profiles(k, l, i, j)
    return FiniteTable.from_tensor(gamma, delta, t)


def _gaussian_ksc(k: GaussianLinear, l: GaussianLinear, i: int, j: int) -> GaussianLinear:
    """Closed-form composite when the composite covariance stays diagonal."""
    dims = lambda prof: [real_dim(o.space) for o in prof]  # noqa: E731
    dA, dB, dC, dD = (sum(dims(p)) for p in (k.source, k.target, l.source, l.target))
    cdims, bdims = dims(l.source), dims(k.target)
    c_pre, c_post = sum(cdims[:j]), sum(cdims[j + 1 :])
    b_pre, b_i = sum(bdims[:i]), bdims[i]
    dG = c_pre + dA + c_post
    nz = dG + dB + dD  # [gamma | eps_k | eps_l]
    # y = a W_k + b_k + eps_k * s_k as (coefficient on z, constant)
    Yz = np.zeros((nz, dB))
    Yz[c_pre : c_pre + dA] = k.weight
    Yz[dG : dG + dB] = np.diag(np.sqrt(k.cov_diag))
    Yc = k.bias
    # c = [c_pre, y_i, c_post]
    Cz = np.zeros((nz, dC))
    Cc = np.zeros(dC)
    Cz[:c_pre, :c_pre] = np.eye(c_pre)
    Cz[:, c_pre : c_pre + b_i] = Yz[:, b_pre : b_pre + b_i]
    Cc[c_pre : c_pre + b_i] = Yc[b_pre : b_pre + b_i]
    Cz[c_pre + dA : dG, c_pre + b_i :] = np.eye(c_post)
    # d = c W_l + b_l + eps_l * s_l
    Dz = Cz @ l.weight
    Dz[dG + dB :] += np.diag(np.sqrt(l.cov_diag))
    Dc = Cc @ l.weight + l.bias
    Oz = np.concatenate([Yz[:, :b_pre], Dz, Yz[:, b_pre + b_i :]], axis=1)
    Oc = np.concatenate([Yc[:b_pre], Dc, Yc[b_pre + b_i :]])
    load = Oz[dG:]
    cov = load.T @ load
    if np.any(cov - np.diag(np.diag(cov)) != 0.0):
        raise CompositionError("composite covariance is not diagonal")
    gamma, delta = ksc_profiles(k, l, i, j)
    return GaussianLinear(gamma, delta, Oz[:dG], Oc, np.diag(cov))


def two_vertex_diagram(k: Kernel, l: Kernel, i: int, j: int, witness=None, cls=None) -> Diagram:
    """The diagram with one wire from output ``i`` of ``k`` to input ``j`` of ``l``."""
    cls = cls or Diagram
    inputs = [Port("l", q) for q in range(j)] + [Port("k", q) for q in range(len(k.source))] + [Port("l", q) for q in range(j + 1, len(l.source))]
    outputs = [Port("k", p) for p in range(i)] + [Port("l", p) for p in range(len(l.target))] + [Port("k", p) for p in range(i + 1, len(k.target))]
    return cls({"k": k, "l": l}, [Wire(Port("k", i), Port("l", j), witness)], inputs, outputs)


def binary_ksc(k: Kernel, l: Kernel, i: int, j: int) -> Kernel | Diagram:
    """``l o_(i,j) k``: feed output slot ``i`` of ``k`` into input slot ``j`` of ``l``.

    Exact when both kernels tabulate, or when both are Gaussian-linear with a
    diagonal composite covariance.  Otherwise the two-vertex diagram is
    returned; its trace kernel is the composite.
    """
    _check_slots(k, l, i, j)
    if not same_type(k.target[i], l.source[j]):
        raise DiagramError(f"type mismatch: output {i} of {k!r} is {k.target[i].space}, input {j} of {l!r} is {l.source[j].space}")
    if k.is_finite and l.is_finite:
        try:
            return _finite_ksc(k.to_table(), l.to_table(), i, j)
        except CompositionError:
            pass
    if isinstance(k, GaussianLinear) and isinstance(l, GaussianLinear):
        try:
            return _gaussian_ksc(k, l, i, j)
        except CompositionError:
            pass
    return two_vertex_diagram(k, l, i, j)


def connect(d1: Diagram, i: int, d2: Diagram, j: int, witness: str | None = None) -> Diagram:
    """Wire the ``i``-th external output of ``d1`` to the ``j``-th external input of ``d2``."""
    if not 0 <= i < len(d1.outputs):
        raise DiagramError(f"d1 has no external output {i}")
    if not 0 <= j < len(d2.inputs):
        raise DiagramError(f"d2 has no external input {j}")
    if set(d1.vertices) & set(d2.vertices):
        d1, d2 = d1.renamed("left/"), d2.renamed("right/")
    src, dst = d1.outputs[i], d2.inputs[j]
    if witness is None and not same_type(d1.out_obj(src), d2.in_obj(dst)):
        raise DiagramError(f"type mismatch connecting {src} to {dst}")
    vertices = {**d1.vertices, **d2.vertices}
    wires = list(d1.wires) + list(d2.wires) + [Wire(src, dst, witness)]
    inputs = d2.inputs[:j] + d1.inputs + d2.inputs[j + 1 :]
    outputs = d1.outputs[:i] + d2.outputs + d1.outputs[i + 1 :]
    return d1._rebuild(vertices, wires, inputs, outputs)

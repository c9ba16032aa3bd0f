"""Trace semantics of finite acyclic diagrams.

Exact evaluation multiplies the vertex kernels in a topological order as
labelled tensors, one axis per vertex output slot, which is the iterated
kernel product written out for finite spaces.  Sampling evaluates the same
product forwards, vertex by vertex, assembling each vertex input from the
external input and earlier outputs.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .diagram import Diagram, DiagramError, Port, Wire, binary_ksc
from .kernels import FiniteDist, FiniteTable, Kernel, KernelError
from .rng import substream
from .spaces import (
    cardinality,
    enumerate_points,
    point_at,
    point_index,
    profile_space,
    value_in_space,
)

__all__ = [
    "ENUMERATION_LIMIT",
    "TraceError",
    "TraceSample",
    "FiniteJointDist",
    "input_assembly",
    "trace_exact",
    "trace_kernel",
    "trace_sample",
    "trace_sample_batch",
    "trace_expectation_mc",
    "order_invariance_check",
    "all_topological_orders",
    "random_topological_order",
    "reduce_diagram",
    "permute_table",
]

#: Exact evaluation refuses joint outcome spaces larger than this.
ENUMERATION_LIMIT = 10**7


class TraceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TraceSample:
    external_input: tuple
    vertex_outputs: dict
    external_output: tuple


@dataclass(frozen=True)
class FiniteJointDist:
    """Joint law of all vertex outputs, one tensor axis per output slot.

    Axes are always in sorted :class:`Port` order, so the object does not
    depend on the topological order used to compute it.
    """

    axes: tuple[Port, ...]
    tensor: np.ndarray
    diagram: Diagram

    def prob(self, outcome: dict) -> float:
        idx = tuple(point_index(self.diagram.out_obj(p).space, outcome[p.vertex][p.slot]) for p in self.axes)
        return float(self.tensor[idx])

    def items(self) -> Iterator[tuple[dict, float]]:
        spaces = [self.diagram.out_obj(p).space for p in self.axes]
        for idx in zip(*np.nonzero(self.tensor)):
            outcome: dict[str, list] = {}
            for p, s, i in zip(self.axes, spaces, idx):
                outcome.setdefault(p.vertex, [None] * len(self.diagram.vertices[p.vertex].target))[p.slot] = point_at(s, int(i))
            yield {v: tuple(vals) for v, vals in outcome.items()}, float(self.tensor[idx])

    def total(self) -> float:
        return float(self.tensor.sum())


# -- input assembly and sampling ------------------------------------------------


def _sources(d: Diagram, v: str) -> list[tuple]:
    """For each input slot of ``v``: ("x", position) or ("y", vertex, slot)."""
    ext = {p: m for m, p in enumerate(d.inputs)}
    out = []
    for q in range(len(d.vertices[v].source)):
        port = Port(v, q)
        w = d.wire_into(port)
        if w is not None:
            out.append(("y", w.src.vertex, w.src.slot))
        elif port in ext:
            out.append(("x", ext[port]))
        else:
            raise TraceError(f"input slot {port} is neither wired nor external")
    return out


def input_assembly(d: Diagram, order: Sequence[str], ell: int, x: tuple, prior_outputs: dict) -> tuple:
    """The ordered input tuple of vertex ``order[ell]`` (0-based position)."""
    v = order[ell]
    earlier = set(order[:ell])
    vals = []
    for src in _sources(d, v):
        if src[0] == "x":
            vals.append(x[src[1]])
        else:
            _, u, p = src
            if u not in earlier or u not in prior_outputs:
                raise TraceError(f"output of {u!r} needed by {v!r} is not available at position {ell}")
            vals.append(prior_outputs[u][p])
    return tuple(vals)


def _check_x(d: Diagram, x):
    if not value_in_space(x, profile_space(d.input_profile)):
        raise TraceError(f"external input {x!r} does not inhabit {[o.name for o in d.input_profile]}")


def trace_sample(d: Diagram, x: tuple, rng: np.random.Generator, order: Sequence[str] | None = None) -> TraceSample:
    x = tuple(x)
    _check_x(d, x)
    order = list(order) if order is not None else d.topo_sort()
    outs: dict[str, tuple] = {}
    for ell, v in enumerate(order):
        a = input_assembly(d, order, ell, x, outs)
        outs[v] = tuple(d.vertices[v].sample(a, rng))
    y = tuple(outs[p.vertex][p.slot] for p in d.outputs)
    return TraceSample(x, outs, y)


def trace_sample_batch(d: Diagram, x: tuple, n: int, rng: np.random.Generator, keep_vertices: bool = False):
    """Draw ``n`` independent traces, vertex by vertex.

    Returns the list of external outputs, and additionally the per-vertex
    output lists when ``keep_vertices`` is set.
    """
    x = tuple(x)
    _check_x(d, x)
    outs: dict[str, list] = {}
    for v in d.topo_sort():
        srcs = _sources(d, v)
        cols = []
        for s in srcs:
            if s[0] == "x":
                cols.append([x[s[1]]] * n)
            else:
                cols.append([o[s[2]] for o in outs[s[1]]])
        inputs = list(zip(*cols)) if cols else [()] * n
        outs[v] = [tuple(o) for o in d.vertices[v].sample_many(inputs, rng)]
    ys = list(zip(*(([o[p.slot] for o in outs[p.vertex]]) for p in d.outputs))) if d.outputs else [()] * n
    return (ys, outs) if keep_vertices else ys


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    n = values.shape[0]
    mean = float(values.mean())
    se = float(np.sqrt(values.var(ddof=1) / n)) if n > 1 else math.inf
    return mean, se


def trace_expectation_mc(d: Diagram, x: tuple, f: Callable, n: int, rng, *, workers: int = 1, chunks: int | None = None) -> tuple[float, float]:
    """Monte Carlo mean of ``f(external output)`` and its standard error.

    With ``workers > 1`` (or ``chunks``), ``rng`` must be an integer seed and
    chunk ``c`` draws from ``substream(seed, "trace-mc", c)``.
    """
    if n < 2:
        raise ValueError("need at least two samples for a standard error")
    if workers <= 1 and chunks is None:
        ys = trace_sample_batch(d, x, n, rng)
        vals = np.fromiter((f(y) for y in ys), dtype=float, count=n)
        return _mean_se(vals)
    if not isinstance(rng, (int, np.integer)):
        raise TypeError("chunked Monte Carlo needs an integer master seed")
    chunks = chunks or workers
    sizes = [n // chunks + (1 if c < n % chunks else 0) for c in range(chunks)]

    def run(c):
        ys = trace_sample_batch(d, x, sizes[c], substream(int(rng), "trace-mc", c))
        return np.fromiter((f(y) for y in ys), dtype=float, count=sizes[c])

    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        parts = list(ex.map(run, range(chunks)))
    return _mean_se(np.concatenate(parts))


# -- exact enumeration ---------------------------------------------------------


def _contract(d: Diagram, order: Sequence[str], x: tuple | None):
    """Iterated kernel product as a labelled tensor.

    With ``x`` given, external inputs are fixed and the result has one axis
    per vertex output slot; otherwise external input axes come first.
    """
    d.require_valid()
    if not d.is_topological(order):
        raise TraceError(f"{list(order)} is not a topological order of the diagram")
    if not d.is_finite:
        raise TraceError("exact trace needs every vertex kernel to be finite")
    out_label = {}
    for v, k in d.vertices.items():
        for p in range(len(k.target)):
            out_label[Port(v, p)] = len(out_label)
    in_label = {p: len(out_label) + m for m, p in enumerate(d.inputs)}
    fixed = {}
    if x is not None:
        x = tuple(x)
        _check_x(d, x)
        for m, p in enumerate(d.inputs):
            fixed[in_label[p]] = point_index(d.in_obj(p).space, x[m])
    sizes = {}
    for p, lab in out_label.items():
        sizes[lab] = cardinality(d.out_obj(p).space)
    for p, lab in in_label.items():
        sizes[lab] = cardinality(d.in_obj(p).space)
    total = math.prod(sizes[l] for l in sizes if l not in fixed)
    if total > ENUMERATION_LIMIT:
        raise TraceError(f"exact enumeration needs {total} joint outcomes, above the limit {ENUMERATION_LIMIT}")

    joint = np.ones(())
    labels: list[int] = []
    for v in order:
        k = d.vertices[v].to_table()
        t = k.tensor()
        f_labels = []
        idx = []
        for q in range(len(k.source)):
            port = Port(v, q)
            w = d.wire_into(port)
            lab = out_label[w.src] if w is not None else in_label[port]
            if lab in fixed:
                idx.append(fixed[lab])
            else:
                idx.append(slice(None))
                f_labels.append(lab)
        idx.extend([slice(None)] * len(k.target))
        t = t[tuple(idx)]
        f_labels += [out_label[Port(v, p)] for p in range(len(k.target))]
        new_labels = labels + [l for l in f_labels if l not in labels]
        joint = np.einsum(joint, labels, t, f_labels, new_labels)
        labels = new_labels
    return joint, labels, out_label, in_label, fixed


def _transpose_to(t: np.ndarray, labels: list[int], want: list[int]) -> np.ndarray:
    missing = [l for l in want if l not in labels]
    if missing:
        raise TraceError("internal error: missing tensor axis")
    return np.transpose(t, [labels.index(l) for l in want])


def trace_exact(d: Diagram, x: tuple, order: Sequence[str] | None = None) -> tuple[FiniteJointDist, FiniteDist]:
    order = list(order) if order is not None else d.topo_sort()
    joint, labels, out_label, _, _ = _contract(d, order, x)
    axes = tuple(sorted(out_label))
    joint = _transpose_to(joint, labels, [out_label[p] for p in axes])
    jd = FiniteJointDist(axes, joint, d)
    keep = [axes.index(p) for p in d.outputs]
    drop = tuple(i for i in range(len(axes)) if i not in keep)
    marg = joint.sum(axis=drop) if drop else joint
    # remaining axes are in sorted order; bring them to the external order
    remaining = sorted(keep)
    marg = np.transpose(marg, [remaining.index(i) for i in keep])
    return jd, FiniteDist(profile_space(d.output_profile), marg.reshape(-1))


def trace_kernel(d: Diagram, order: Sequence[str] | None = None) -> FiniteTable:
    """The exact trace kernel I_D -> O_D of an all-finite diagram."""
    order = list(order) if order is not None else d.topo_sort()
    joint, labels, out_label, in_label, _ = _contract(d, order, None)
    in_labs = [in_label[p] for p in d.inputs]
    out_labs = [out_label[p] for p in d.outputs]
    t = np.einsum(joint, labels, in_labs + out_labs)
    return FiniteTable.from_tensor(d.input_profile, d.output_profile, t)


def all_topological_orders(d: Diagram) -> Iterator[list[str]]:
    preds = {v: d.predecessors(v) for v in d.vertices}
    placed: list[str] = []
    done: set[str] = set()

    def rec():
        if len(placed) == len(preds):
            yield list(placed)
            return
        for v in preds:
            if v not in done and preds[v] <= done:
                placed.append(v)
                done.add(v)
                yield from rec()
                placed.pop()
                done.discard(v)

    yield from rec()


def order_invariance_check(d: Diagram, x: tuple, orders: Sequence[Sequence[str]]) -> float:
    """Largest absolute difference between joint laws computed in the given orders."""
    first, dev = None, 0.0
    for order in orders:
        if not d.is_topological(order):
            raise TraceError(f"{list(order)} is not a topological order")
        t = trace_exact(d, x, order)[0].tensor
        if first is None:
            first = t
        elif t.size:
            dev = max(dev, float(np.max(np.abs(t - first))))
    return dev


def random_topological_order(d: Diagram, rng: np.random.Generator) -> list[str]:
    """A topological order drawn by picking uniformly among the ready vertices at each step."""
    preds = {v: set(d.predecessors(v)) for v in d.vertices}
    done: set[str] = set()
    order = []
    while len(order) < len(preds):
        ready = [v for v in preds if v not in done and preds[v] <= done]
        v = ready[int(rng.integers(len(ready)))]
        order.append(v)
        done.add(v)
    return order


# -- binary reductions -------------------------------------------------------


def permute_table(k: FiniteTable, in_perm: Sequence[int], out_perm: Sequence[int]) -> FiniteTable:
    """Reorder slots: new input slot ``s`` is old input slot ``in_perm[s]``."""
    m = len(k.source)
    t = np.transpose(k.tensor(), list(in_perm) + [m + o for o in out_perm])
    return FiniteTable.from_tensor([k.source[i] for i in in_perm], [k.target[o] for o in out_perm], t)


def _ksc_compose(ku: Kernel, kv: Kernel, i: int, j: int, wire: Wire) -> Kernel:
    return binary_ksc(ku, kv, i, j)


def reduce_diagram(d: Diagram, wire_order: Sequence[Wire], compose: Callable | None = None, raw: bool = False):
    """Evaluate a diagram by binary compositions along wires, in the given order.

    Each step composes the two blobs joined by the wire.  The step must be a
    legal polycategorical composition: exactly one remaining wire joins the
    blobs and no other directed path connects them.  The final kernel's slots
    are permuted to the diagram's external order; with ``raw`` the unpermuted
    composite is returned as well.
    """
    compose = compose or _ksc_compose
    if sorted(wire_order) != sorted(d.wires):
        raise DiagramError("a reduction order must list every internal wire once")
    blob_of = {v: v for v in d.vertices}
    blobs = {v: (k, [Port(v, q) for q in range(len(k.source))], [Port(v, p) for p in range(len(k.target))]) for v, k in d.vertices.items()}
    remaining = list(wire_order)
    for step, w in enumerate(wire_order):
        U, V = blob_of[w.src.vertex], blob_of[w.dst.vertex]
        rest = remaining[step + 1 :]
        if U == V:
            raise DiagramError(f"wire {w} would close a loop inside one composite")
        parallel = [o for o in rest if {blob_of[o.src.vertex], blob_of[o.dst.vertex]} == {U, V}]
        if parallel:
            raise DiagramError(f"composites joined by wire {w} are also joined by {parallel[0]}")
        succ: dict[str, set[str]] = {}
        for o in rest:
            succ.setdefault(blob_of[o.src.vertex], set()).add(blob_of[o.dst.vertex])
        stack, seen = [s for s in succ.get(U, ()) if s != V], set()
        while stack:
            b = stack.pop()
            if b == V:
                raise DiagramError(f"composing along {w} would create a cycle")
            if b not in seen:
                seen.add(b)
                stack.extend(succ.get(b, ()))
        ku, insU, outsU = blobs.pop(U)
        kv, insV, outsV = blobs.pop(V)
        i, j = outsU.index(w.src), insV.index(w.dst)
        k = compose(ku, kv, i, j, w)
        if isinstance(k, Diagram):
            raise TraceError("reduction produced a non-exact composite")
        ins = insV[:j] + insU + insV[j + 1 :]
        outs = outsU[:i] + outsV + outsU[i + 1 :]
        blobs[U] = (k, ins, outs)
        for v, b in blob_of.items():
            if b == V:
                blob_of[v] = U
    if len(blobs) != 1:
        raise DiagramError("the diagram is not connected; binary reductions cannot reach one kernel")
    (k, ins, outs), = blobs.values()
    out = permute_table(k.to_table(), [ins.index(p) for p in d.inputs], [outs.index(p) for p in d.outputs])
    return (out, k) if raw else out

"""Shared fixtures for the tests: random finite diagrams and a brute-force trace oracle."""

from __future__ import annotations

import itertools

import numpy as np

from markovpoly.diagram import Diagram, Port, Wire
from markovpoly.kernels import FiniteTable
from markovpoly.spaces import Finite, Obj, cardinality, enumerate_points, point_index, profile_space


def stochastic(rng, rows: int, cols: int) -> np.ndarray:
    p = rng.random((rows, cols)) + 0.05
    return p / p.sum(axis=1, keepdims=True)


def object_pool(rng, n: int = 4, max_states: int = 4) -> list[Obj]:
    return [Obj(f"O{i}", Finite.of_size(int(rng.integers(2, max_states + 1)))) for i in range(n)]


def random_table(rng, source, target, name=None) -> FiniteTable:
    n_in = cardinality(profile_space(source))
    n_out = cardinality(profile_space(target))
    return FiniteTable(source, target, stochastic(rng, n_in, n_out), name=name)


def random_diagram(rng, max_vertices: int = 6, max_states: int = 4, wire_prob: float = 0.7) -> Diagram:
    """A random acyclic finite diagram; each input slot may be fed by an earlier free output of the same object."""
    pool = object_pool(rng, 3, max_states)
    n = int(rng.integers(1, max_vertices + 1))
    vertices, wires, free = {}, [], []
    for v in range(n):
        vid = f"v{v}"
        src = [pool[int(rng.integers(len(pool)))] for _ in range(int(rng.integers(0, 3)))]
        dst = [pool[int(rng.integers(len(pool)))] for _ in range(int(rng.integers(1, 3)))]
        vertices[vid] = random_table(rng, src, dst, vid)
        for q, o in enumerate(src):
            cands = [p for p in free if p[1] == o]
            if cands and rng.random() < wire_prob:
                port, _ = cands[int(rng.integers(len(cands)))]
                free.remove((port, o))
                wires.append(Wire(port, Port(vid, q)))
        free += [(Port(vid, p), o) for p, o in enumerate(dst)]
    return Diagram(vertices, wires)


def brute_force_trace(d: Diagram, x: tuple) -> np.ndarray:
    """Output law by summing over every joint assignment of all vertex outputs."""
    verts = list(d.vertices)
    ports = [Port(v, p) for v in verts for p in range(len(d.vertices[v].target))]
    spaces = [d.out_obj(p).space for p in ports]
    out = np.zeros(cardinality(profile_space(d.output_profile)))
    ext = dict(zip(d.inputs, x))
    for assign in itertools.product(*[list(enumerate_points(s)) for s in spaces]):
        val = dict(zip(ports, assign))
        prob = 1.0
        for v in verts:
            k = d.vertices[v]
            a = []
            for q in range(len(k.source)):
                w = d.wire_into(Port(v, q))
                a.append(val[w.src] if w is not None else ext[Port(v, q)])
            b = tuple(val[Port(v, p)] for p in range(len(k.target)))
            prob *= k.probs[point_index(k.in_space, tuple(a)), point_index(k.out_space, b)]
            if prob == 0.0:
                break
        y = tuple(val[p] for p in d.outputs)
        out[point_index(profile_space(d.output_profile), y)] += prob
    return out


def first_input(d: Diagram) -> tuple:
    return next(iter(enumerate_points(profile_space(d.input_profile))))


def random_tree_diagram(rng, n_vertices: int, max_states: int = 3) -> Diagram:
    """A connected random diagram with ``n_vertices - 1`` wires, so every wire order is a candidate reduction."""
    pool = object_pool(rng, 3, max_states)

    def pick():
        return pool[int(rng.integers(len(pool)))]

    vertices, wires, free = {}, [], []
    for v in range(n_vertices):
        vid = f"v{v}"
        src = [pick() for _ in range(int(rng.integers(0 if v == 0 else 1, 3)))]
        dst = [pick() for _ in range(int(rng.integers(1, 3)))]
        if v > 0:
            port, o = free.pop(int(rng.integers(len(free))))
            q = int(rng.integers(len(src)))
            src[q] = o
            wires.append(Wire(port, Port(vid, q)))
        vertices[vid] = random_table(rng, src, dst, vid)
        free += [(Port(vid, p), o) for p, o in enumerate(dst)]
        if not free:
            break
    return Diagram(vertices, wires)

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import random_diagram, random_table
from markovpoly.diagram import Diagram, DiagramError, Port, Wire, binary_ksc, connect, ksc_profiles, two_vertex_diagram
from markovpoly.kernels import FiniteTable, GaussianLinear
from markovpoly.spaces import Finite, Obj, RealVec
from markovpoly.trace import trace_kernel

A = Obj("A", Finite.of_size(2))
B = Obj("B", Finite.of_size(3))
C = Obj("C", Finite.of_size(2))
D = Obj("D", Finite.of_size(2))
X = Obj("X", RealVec(1))


def table(rng, src, dst):
    return random_table(rng, src, dst)


def test_default_external_slots_are_the_unwired_ones():
    rng = np.random.default_rng(0)
    d = Diagram({"k": table(rng, (A,), (B, C)), "l": table(rng, (B,), (D,))}, [Wire(Port("k", 0), Port("l", 0))])
    assert d.inputs == (Port("k", 0),)
    assert d.outputs == (Port("k", 1), Port("l", 0))
    assert d.input_profile == (A,)
    assert d.output_profile == (C, D)
    assert d.is_valid()


def test_validation_reports_each_violation():
    rng = np.random.default_rng(0)
    k = table(rng, (A,), (A,))
    cyc = Diagram({"x": k, "y": k}, [Wire(Port("x", 0), Port("y", 0)), Wire(Port("y", 0), Port("x", 0))])
    assert any(r.startswith("acyclicity: directed cycle") for r in cyc.validate())

    bad_type = Diagram({"x": table(rng, (A,), (B,)), "y": k}, [Wire(Port("x", 0), Port("y", 0))])
    assert any("type" in r for r in bad_type.validate())

    missing = Diagram({"x": k}, [Wire(Port("x", 3), Port("z", 0))])
    report = missing.validate()
    assert any("missing slot" in r for r in report)
    assert any("unknown vertex" in r for r in report)

    dup = Diagram({"x": table(rng, (), (A, A)), "y": table(rng, (A, A), (A,))}, [Wire(Port("x", 0), Port("y", 0)), Wire(Port("x", 0), Port("y", 1))])
    assert any(r.startswith("linearity") for r in dup.validate())
    with pytest.raises(DiagramError):
        dup.require_valid()


def test_external_list_must_cover_unwired_slots():
    rng = np.random.default_rng(0)
    d = Diagram({"x": table(rng, (A,), (A,))}, [], inputs=[], outputs=[Port("x", 0)])
    assert any("misses unwired slot" in r for r in d.validate())


def test_topological_order():
    rng = np.random.default_rng(0)
    k = table(rng, (A,), (A,))
    d = Diagram({"c": k, "b": k, "a": k}, [Wire(Port("c", 0), Port("a", 0)), Wire(Port("a", 0), Port("b", 0))])
    assert d.topo_sort() == ["c", "a", "b"]
    assert d.is_topological(["c", "a", "b"])
    assert not d.is_topological(["a", "c", "b"])


def test_ksc_profile_convention():
    rng = np.random.default_rng(0)
    k = table(rng, (A,), (B, C))
    l = table(rng, (D, B), (A, D))
    gamma, delta = ksc_profiles(k, l, 0, 1)
    assert gamma == (D, A)
    assert delta == (A, D, C)


@given(st.integers(0, 2**32 - 1), st.data())
def test_binary_ksc_matches_the_two_vertex_trace(seed, data):
    rng = np.random.default_rng(seed)
    pool = [A, B, C]
    draw = lambda lo, hi: [pool[i] for i in data.draw(st.lists(st.integers(0, 2), min_size=lo, max_size=hi))]  # noqa: E731
    src_k, dst_k, src_l, dst_l = draw(0, 2), draw(1, 2), draw(1, 2), draw(1, 2)
    i = data.draw(st.integers(0, len(dst_k) - 1))
    j = data.draw(st.integers(0, len(src_l) - 1))
    src_l[j] = dst_k[i]
    k, l = table(rng, src_k, dst_k), table(rng, src_l, dst_l)
    comp = binary_ksc(k, l, i, j)
    ref = trace_kernel(two_vertex_diagram(k, l, i, j))
    assert comp.source == ref.source and comp.target == ref.target
    np.testing.assert_allclose(comp.probs, ref.probs, atol=1e-12)
    np.testing.assert_allclose(comp.probs.sum(axis=1), 1.0)


def test_binary_ksc_type_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(DiagramError):
        binary_ksc(table(rng, (A,), (B,)), table(rng, (A,), (A,)), 0, 0)
    with pytest.raises(DiagramError):
        binary_ksc(table(rng, (A,), (B,)), table(rng, (B,), (A,)), 1, 0)


def test_gaussian_ksc_is_closed_form():
    k = GaussianLinear((X,), (X, X), [[1.0, 2.0]], [0.0, 1.0], [1.0, 0.5])
    l = GaussianLinear((X,), (X,), [[3.0]], [0.0], [0.25])
    comp = binary_ksc(k, l, 1, 0)
    assert isinstance(comp, GaussianLinear)
    np.testing.assert_allclose(comp.weight, [[1.0, 6.0]])
    np.testing.assert_allclose(comp.bias, [0.0, 3.0])
    np.testing.assert_allclose(comp.cov_diag, [1.0, 9 * 0.5 + 0.25])


def test_gaussian_ksc_with_correlated_outputs_falls_back_to_a_diagram():
    k = GaussianLinear((X,), (X,), [[1.0]], [0.0], [1.0])
    copy = GaussianLinear((X,), (X, X), [[1.0, 1.0]], [0.0, 0.0], [0.0, 0.0])
    assert isinstance(binary_ksc(k, copy, 0, 0), Diagram)


def test_connect_renames_clashing_vertices():
    rng = np.random.default_rng(2)
    d = random_diagram(rng, 3, 2)
    e = Diagram({"v0": table(rng, (d.output_profile[0],), (A,))})
    joined = connect(d, 0, e, 0)
    assert joined.is_valid()
    assert len(joined.vertices) == len(d.vertices) + 1
    assert len(joined.wires) == len(d.wires) + 1

import itertools

import numpy as np
import pytest

from helpers import random_table
from markovpoly.colors import (
    Atom,
    ColorError,
    ColoredDiagram,
    ColorSystem,
    Comp,
    InterfaceSystem,
    KMor,
    Seq,
    Unit,
    check_color_system,
    check_interface_coherence,
    check_interface_system,
    cksc,
    colored_reduce,
    colored_trace_kernel,
    compose_terms,
    interface_expand,
    interface_vertex_id,
)
from markovpoly.diagram import DiagramError, Port, Wire, binary_ksc
from markovpoly.kernels import FiniteTable
from markovpoly.project import bundled
from markovpoly.spaces import Finite, Obj
from markovpoly.trace import trace_kernel

B = Obj("B", Finite.of_size(2), "a")
C = Obj("C", Finite.of_size(3), "b")
D = Obj("D", Finite.of_size(2), "c")


def small_system(rng):
    cs = ColorSystem(["a", "b", "c"], [KMor("f", "a", "b"), KMor("g", "b", "c"), KMor("gf", "a", "c")], {("g", "f"): "gf"})
    kf = random_table(rng, (B,), (C,), "kf")
    kg = random_table(rng, (C,), (D,), "kg")
    kgf = FiniteTable((B,), (D,), kf.probs @ kg.probs, name="kgf")
    return InterfaceSystem(cs, {("f", B, C): kf, ("g", C, D): kg, ("gf", B, D): kgf})


def test_color_system_words_and_iota():
    cs = small_system(np.random.default_rng(0)).colors
    assert check_color_system(cs) == []
    assert cs.compose("gf", "id_a") == "gf"
    assert cs.word("gf") == ("f", "g")
    assert cs.iota("id_b") == Unit("b")
    assert cs.iota("gf") == Seq((Atom("f", ("a",), ("b",)), Atom("g", ("b",), ("c",))))
    with pytest.raises(ColorError):
        cs.compose("f", "g")


def test_duplicate_colors_rejected():
    with pytest.raises(ColorError):
        ColorSystem(["a", "a"])


def test_missing_composite_is_reported():
    cs = ColorSystem(["a", "b", "c"], [KMor("f", "a", "b"), KMor("g", "b", "c")])
    assert any("g" in r and "f" in r for r in check_color_system(cs))


def test_term_composition_normalizes_units():
    f = Atom("f", ("a",), ("b",))
    g = Atom("g", ("b",), ("c",))
    assert compose_terms(Unit("b"), f, 0, 0) == f
    assert compose_terms(g, Unit("b"), 0, 0) == g
    assert compose_terms(g, f, 0, 0) == Seq((f, g))
    h = Atom("h", ("x", "b"), ("y",))
    t = compose_terms(h, f, 0, 1)
    assert isinstance(t, Comp)
    assert t.dom == ("x", "a") and t.cod == ("y",)
    with pytest.raises(ColorError):
        compose_terms(f, g, 0, 0)


def test_interface_system_typing():
    rng = np.random.default_rng(0)
    isys = small_system(rng)
    assert check_interface_system(isys) == []
    assert isys.admissible(B, C) == ["f"]
    assert isys.admissible(B, B) == ["id_a"]
    with pytest.raises(ColorError):
        isys.add("f", C, D, random_table(rng, (C,), (D,)))
    with pytest.raises(ColorError):
        isys.kernel("g", B, C)


def test_missing_closure_is_reported():
    rng = np.random.default_rng(0)
    full = small_system(rng)
    partial = InterfaceSystem(full.colors, {k: v for k, v in full.kernels.items() if k[0] != "gf"})
    assert any(r.startswith("closure") for r in check_interface_system(partial))


def test_exact_coherence_on_consistent_system():
    results = check_interface_coherence(small_system(np.random.default_rng(1)))
    assert results and all(r.ok and r.mode == "exact" for r in results)


def test_incoherent_system_fails():
    rng = np.random.default_rng(1)
    isys = small_system(rng)
    isys.add("gf", B, D, random_table(rng, (B,), (D,), "bad"))
    assert any(not r.ok for r in check_interface_coherence(isys))


def test_cksc_routes_through_the_interface():
    rng = np.random.default_rng(2)
    isys = small_system(rng)
    k = random_table(rng, (B,), (B, C), "k")
    l = random_table(rng, (D,), (D,), "l")
    with pytest.raises(ColorError):
        cksc(k, l, 1, 0, "f", isys)
    out = cksc(k, l, 1, 0, "g", isys)
    ref = binary_ksc(binary_ksc(k, isys.kernel("g", C, D), 1, 0), l, 1, 0)
    np.testing.assert_allclose(out.probs, ref.probs)
    assert out.color.dom == ("a",)
    assert out.color.cod == ("a", "c")


def test_colored_diagram_validation_and_expansion():
    rng = np.random.default_rng(3)
    isys = small_system(rng)
    k = random_table(rng, (B,), (C,), "k")
    l = random_table(rng, (D,), (D,), "l")
    good = ColoredDiagram({"k": k, "l": l}, [Wire(Port("k", 0), Port("l", 0), "g")], interfaces=isys)
    assert good.validate() == []
    bad = ColoredDiagram({"k": k, "l": l}, [Wire(Port("k", 0), Port("l", 0), "f")], interfaces=isys)
    assert any("witness f is not admissible" in r for r in bad.validate())
    bare = ColoredDiagram({"k": k, "l": l}, [Wire(Port("k", 0), Port("l", 0))], interfaces=isys)
    assert any("without a witness" in r for r in bare.validate())
    with pytest.raises(DiagramError):
        interface_expand(bad)
    exp = interface_expand(good)
    vid = interface_vertex_id(good.wires[0])
    assert vid in exp.vertices and len(exp.wires) == 2
    np.testing.assert_allclose(colored_trace_kernel(good, isys).probs, k.probs @ isys.kernel("g", C, D).probs @ l.probs)


def test_unwitnessed_wire_expands_to_identity():
    rng = np.random.default_rng(3)
    isys = small_system(rng)
    k = random_table(rng, (B,), (C,), "k")
    m = random_table(rng, (C,), (D,), "m")
    cd = ColoredDiagram({"k": k, "m": m}, [Wire(Port("k", 0), Port("m", 0))], interfaces=isys)
    np.testing.assert_allclose(colored_trace_kernel(cd, isys).probs, k.probs @ m.probs)


def test_severity_tree_reductions_agree():
    p = bundled("severity")
    isys = p.interfaces
    for cd in p.diagrams.values():
        ref = trace_kernel(interface_expand(cd, isys))
        for wires in itertools.islice(itertools.permutations(cd.wires), 24):
            try:
                k, info = colored_reduce(cd, isys, wires)
            except DiagramError:
                continue
            np.testing.assert_allclose(k.probs, ref.probs, atol=1e-12)
            assert info["kernel"] == info["syntactic"]

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from markovpoly.ccmp import (
    CCMPError,
    CMPFunctor,
    IndexCat,
    check_cmp_functor,
    check_index_cat,
    check_jacobian,
    check_strict_functoriality,
    compose_functors,
    compose_pushforwards,
    embed_pushforward,
    identity_functor,
    linear_pushforward,
    pullback_gradient,
    pushforward_diagram,
)
from markovpoly.checks import functor_checks
from markovpoly.learn import central_difference
from markovpoly.project import bundled


@pytest.fixture(scope="module")
def graph():
    return bundled("dynamic-graph")


def test_index_category_tables():
    cat = IndexCat(["a", "b", "c"], {"f": ("a", "b"), "g": ("b", "c"), "h": ("a", "c")}, {("g", "f"): "h"})
    assert check_index_cat(cat) == []
    assert cat.compose("f", "id_a") == "f"
    with pytest.raises(CCMPError):
        cat.compose("f", "g")
    missing = IndexCat(["a", "b", "c"], {"f": ("a", "b"), "g": ("b", "c"), "h": ("a", "c")})
    assert check_index_cat(missing) == ["missing composite g o f"]
    bad = IndexCat(["a", "b"], {"f": ("a", "b")}, {("f", "f"): "f"})
    assert any("ill-typed" in r for r in check_index_cat(bad))


def test_bundled_ccmp_is_strictly_functorial(graph):
    assert check_strict_functoriality(graph.ccmp) == []
    assert graph.ccmp.param_dims == {"G0": 14, "G1": 24, "G2": 34}


def test_state_pushforwards_are_cmp_functors(graph):
    for alpha, g in graph.ccmp.state_push.items():
        assert check_cmp_functor(g) == [], alpha


def test_color_violation_is_reported(graph):
    g = graph.ccmp.state_push["a01"]
    names = list(g.object_map)
    by_color = {}
    for n in names:
        by_color.setdefault(g.src.objects[n].color, []).append(n)
    a, b = (vs[0] for vs in list(by_color.values())[:2])
    swapped = dict(g.object_map, **{a: g.object_map[b]})
    report = check_cmp_functor(CMPFunctor(g.src, g.dst, swapped, g.kernel_map))
    assert any(r.startswith("color violation") for r in report)


def test_composite_functor_matches_sequential(graph):
    c = graph.ccmp
    g = compose_functors(c.push_state("a12"), c.push_state("a01"))
    assert g.kernel_map == c.push_state("a02").kernel_map
    ident = identity_functor(c.states["G1"])
    assert compose_functors(ident, c.push_state("a01")).kernel_map == c.push_state("a01").kernel_map


def test_trace_of_image_is_image_of_trace(graph):
    results = functor_checks(graph, seed=0)
    assert results and all(r.ok for r in results), [r.detail for r in results if not r.ok]
    assert sum(r.subject.startswith("trace of") for r in results) >= 3


def test_identity_push_leaves_diagram_alone(graph):
    c = graph.ccmp
    theta = graph.param_diagrams["graph_G0"].theta
    g = c.instantiated_functor("id_G0", theta)
    d = graph.diagrams["graph_G0"]
    pushed = pushforward_diagram(identity_functor(c.states["G0"]), d)
    assert pushed.structure() == d.structure()
    np.testing.assert_array_equal(c.push_params("id_G0")(theta), theta)
    assert g.kernel_map == identity_functor(c.states["G0"]).kernel_map


@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_embed_jacobian_matches_finite_differences(theta):
    p = embed_pushforward(3, 5, copy=[(0, 0), (1, 1)], init=[(2, 2, "tanh"), (4, 0, "tanh")])
    assert check_jacobian(p, [np.array(theta)]) == []
    out = p(theta)
    assert out[3] == 0.0
    assert out[4] == pytest.approx(np.tanh(theta[0]))


def test_embed_rejects_unknown_init():
    with pytest.raises(CCMPError):
        embed_pushforward(1, 2, [], [(1, 0, "random")])


def test_pullback_is_chain_rule():
    rng = np.random.default_rng(0)
    p = embed_pushforward(3, 4, copy=[(0, 2)], init=[(1, 0, "tanh"), (3, 1, "tanh")])
    c = rng.standard_normal(4)
    obj = lambda t: float(np.sin(t) @ c)  # noqa: E731
    theta = rng.standard_normal(3)
    g = pullback_gradient(p, theta, np.cos(p(theta)) * c)
    np.testing.assert_allclose(g, central_difference(lambda t: obj(p(t)), theta), rtol=1e-6, atol=1e-9)
    with pytest.raises(CCMPError):
        pullback_gradient(p, theta, np.zeros(3))


def test_composite_pullback_equals_sequential(graph):
    c = graph.ccmp
    rng = np.random.default_rng(1)
    theta = rng.standard_normal(14)
    g2 = rng.standard_normal(34)
    direct = c.pullback("a02", theta, g2)
    seq = c.pullback("a01", theta, c.pullback("a12", c.push_params("a01")(theta), g2))
    np.testing.assert_allclose(direct, seq, atol=1e-12)


def test_linear_pushforward_composition():
    a = linear_pushforward([[1.0, 2.0], [0.0, 1.0], [3.0, 0.0]], "a")
    b = linear_pushforward([[1.0, 1.0, 1.0]], "b")
    ba = compose_pushforwards(b, a)
    np.testing.assert_allclose(ba([1.0, 1.0]), [7.0])
    np.testing.assert_allclose(ba.jacobian([0.0, 0.0]), [[4.0, 3.0]])
    with pytest.raises(CCMPError):
        compose_pushforwards(a, b)
    with pytest.raises(CCMPError):
        a([1.0])

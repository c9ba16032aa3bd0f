import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import brute_force_trace, first_input, random_diagram, random_table, random_tree_diagram
from markovpoly.diagram import Diagram, DiagramError, Port, Wire
from markovpoly.rng import substream
from markovpoly.spaces import Finite, Obj, enumerate_points, profile_space
from markovpoly.trace import (
    TraceError,
    all_topological_orders,
    order_invariance_check,
    random_topological_order,
    reduce_diagram,
    trace_exact,
    trace_expectation_mc,
    trace_kernel,
    trace_sample,
    trace_sample_batch,
)

seeds = st.integers(0, 2**32 - 1)
A = Obj("A", Finite.of_size(2))


@settings(max_examples=15)
@given(seeds)
def test_trace_kernel_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    d = random_diagram(rng, 4, 3)
    k = trace_kernel(d)
    for r, x in enumerate(enumerate_points(profile_space(d.input_profile))):
        np.testing.assert_allclose(k.probs[r], brute_force_trace(d, x), atol=1e-12)


@given(seeds)
def test_trace_kernel_is_stochastic(seed):
    d = random_diagram(np.random.default_rng(seed), 5, 3)
    k = trace_kernel(d)
    np.testing.assert_allclose(k.probs.sum(axis=1), 1.0, atol=1e-12)


@given(seeds)
def test_joint_law_does_not_depend_on_the_order(seed):
    rng = np.random.default_rng(seed)
    d = random_diagram(rng, 5, 3)
    orders = list(itertools.islice(all_topological_orders(d), 30))
    assert all(d.is_topological(o) for o in orders)
    assert order_invariance_check(d, first_input(d), orders) <= 1e-12


@given(seeds)
def test_random_topological_orders_are_valid(seed):
    rng = np.random.default_rng(seed)
    d = random_diagram(rng, 6, 2)
    assert d.is_topological(random_topological_order(d, rng))


def test_order_check_rejects_non_topological_orders():
    rng = np.random.default_rng(0)
    k = random_table(rng, (A,), (A,))
    d = Diagram({"a": k, "b": k}, [Wire(Port("a", 0), Port("b", 0))])
    with pytest.raises(TraceError):
        order_invariance_check(d, (0,), [["b", "a"]])


def test_joint_marginal_is_the_external_law():
    rng = np.random.default_rng(4)
    d = random_diagram(rng, 4, 3)
    x = first_input(d)
    joint, marg = trace_exact(d, x)
    assert joint.total() == pytest.approx(1.0)
    np.testing.assert_allclose(marg.probs, brute_force_trace(d, x), atol=1e-12)
    for outcome, p in joint.items():
        assert joint.prob(outcome) == p


@settings(max_examples=10)
@given(seeds)
def test_any_tree_reduction_order_gives_the_trace(seed):
    rng = np.random.default_rng(seed)
    d = random_tree_diagram(rng, 4)
    ref = trace_kernel(d)
    for wires in itertools.permutations(d.wires):
        try:
            k = reduce_diagram(d, wires)
        except DiagramError:
            continue
        np.testing.assert_allclose(k.probs, ref.probs, atol=1e-12)


def test_reduction_of_disconnected_diagram_fails():
    rng = np.random.default_rng(0)
    d = Diagram({"a": random_table(rng, (A,), (A,)), "b": random_table(rng, (A,), (A,))})
    with pytest.raises(DiagramError):
        reduce_diagram(d, [])


def test_sampled_frequencies_match_exact_law():
    rng = np.random.default_rng(11)
    d = random_diagram(rng, 4, 2)
    x = first_input(d)
    exact = trace_exact(d, x)[1].probs
    space = profile_space(d.output_profile)
    pts = list(enumerate_points(space))
    ys = trace_sample_batch(d, x, 40000, substream(1, "batch"))
    freq = np.array([sum(1 for y in ys if y == p) for p in pts]) / len(ys)
    np.testing.assert_allclose(freq, exact, atol=0.015)


def test_single_trace_sample_records_every_vertex():
    d = random_diagram(np.random.default_rng(3), 4, 2)
    s = trace_sample(d, first_input(d), substream(0, "one"))
    assert set(s.vertex_outputs) == set(d.vertices)
    assert s.external_output == tuple(s.vertex_outputs[p.vertex][p.slot] for p in d.outputs)


def test_mc_expectation_is_seeded_and_within_error():
    d = random_diagram(np.random.default_rng(5), 4, 2)
    x = first_input(d)
    f = lambda y: float(sum(y))  # noqa: E731
    space = profile_space(d.output_profile)
    exact = sum(p * f(y) for y, p in zip(enumerate_points(space), trace_exact(d, x)[1].probs))
    m1, se = trace_expectation_mc(d, x, f, 20000, substream(9, "mc"))
    m2, _ = trace_expectation_mc(d, x, f, 20000, substream(9, "mc"))
    assert m1 == m2
    assert abs(m1 - exact) <= 5 * se + 1e-12
    chunked = trace_expectation_mc(d, x, f, 20000, 9, workers=3)
    assert chunked == trace_expectation_mc(d, x, f, 20000, 9, workers=3)
    assert abs(chunked[0] - exact) <= 5 * chunked[1] + 1e-12


def test_bad_external_input_is_rejected():
    d = random_diagram(np.random.default_rng(5), 3, 2)
    with pytest.raises(Exception):
        trace_exact(d, tuple(99 for _ in d.inputs) + (0,))

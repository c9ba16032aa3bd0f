import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from markovpoly.spaces import (
    ONE_POINT,
    Finite,
    Obj,
    Product,
    RealVec,
    SpaceError,
    cardinality,
    enumerate_points,
    flatten_real,
    format_value,
    insert_at,
    point_at,
    point_index,
    project_at,
    space_from_json,
    space_to_json,
    splice,
    unflatten_real,
    value_in_space,
)

finite_spaces = st.integers(1, 4).map(Finite.of_size)
products = st.lists(finite_spaces, min_size=0, max_size=3).map(lambda fs: Product(tuple(fs)))


def test_finite_labels_and_index():
    s = Finite(("healthy", "sick"))
    assert s.size == 2
    assert s.index("sick") == 1
    with pytest.raises(SpaceError):
        s.index("dead")


@pytest.mark.parametrize("labels", [(), ("a", "a")])
def test_finite_rejects_bad_labels(labels):
    with pytest.raises(SpaceError):
        Finite(labels)


def test_one_point_space():
    assert cardinality(ONE_POINT) == 1
    assert list(enumerate_points(ONE_POINT)) == [()]
    assert point_index(ONE_POINT, ()) == 0


def test_value_membership():
    s = Product((Finite.of_size(3), RealVec(2)))
    assert value_in_space((2, (0.5, -1.0)), s)
    assert not value_in_space((3, (0.5, -1.0)), s)
    assert not value_in_space((True, (0.5, -1.0)), s)
    assert not value_in_space((1, (0.5,)), s)
    assert value_in_space(np.zeros(2), RealVec(2))


def test_cardinality_of_real_space_raises():
    with pytest.raises(SpaceError):
        cardinality(RealVec(1))


@given(products)
def test_point_index_is_a_bijection(s):
    pts = list(enumerate_points(s))
    assert len(pts) == cardinality(s)
    assert [point_index(s, p) for p in pts] == list(range(len(pts)))
    assert all(point_at(s, i) == p for i, p in enumerate(pts))


@given(st.lists(st.integers(0, 9), max_size=5), st.data())
def test_insert_then_project_roundtrip(ctx, data):
    j = data.draw(st.integers(0, len(ctx)))
    t = insert_at(ctx, j, "v")
    assert project_at(t, j) == ("v", tuple(ctx))


def test_splice_places_block_at_slot():
    assert splice((1, 2, 3), 1, ("a", "b")) == (1, "a", "b", 2, 3)
    with pytest.raises(IndexError):
        splice((1,), 3, ())


@given(st.lists(st.integers(0, 3), min_size=1, max_size=3), st.data())
def test_real_flatten_roundtrip(dims, data):
    s = Product(tuple(RealVec(d) for d in dims))
    x = np.array(data.draw(st.lists(st.floats(-5, 5), min_size=sum(dims), max_size=sum(dims))))
    v = unflatten_real(s, x)
    assert value_in_space(v, s)
    np.testing.assert_array_equal(flatten_real(s, v), x)


@pytest.mark.parametrize(
    "s",
    [Finite(("a", "b")), RealVec(3), Product((Finite.of_size(2), Product((RealVec(1),))))],
)
def test_space_json_roundtrip(s):
    assert space_from_json(space_to_json(s)) == s


def test_space_json_size_shorthand_and_errors():
    assert space_from_json({"finite": {"size": 3}}) == Finite.of_size(3)
    with pytest.raises(SpaceError):
        space_from_json({"simplex": {}})


def test_format_value_uses_labels():
    s = Product((Finite(("lo", "hi")), RealVec(1)))
    assert format_value(s, (1, (2.0,))) == ["hi", [2.0]]


def test_objects_with_same_space_are_distinct_by_name():
    assert Obj("A", Finite.of_size(2)) != Obj("B", Finite.of_size(2))

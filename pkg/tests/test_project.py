import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import random_diagram
from markovpoly.colors import Atom, Comp, Seq, Unit
from markovpoly.kernels import KernelError
from markovpoly.project import (
    Project,
    ProjectError,
    bundled,
    bundled_names,
    dumps,
    format_literal,
    load,
    loads,
    parse_literal,
    save,
    term_from_json,
    term_to_json,
)
from markovpoly.spaces import Finite, Obj, RealVec
from markovpoly.trace import trace_kernel

BUNDLED = ["bayes", "diagnosis", "dynamic-graph", "gaussian", "pathwise", "score", "severity", "training"]
S = Obj("S", Finite(("bacterial", "viral")))
Z = Obj("Z", RealVec(1))
Z2 = Obj("Z2", RealVec(2))


def bundled_text(name):
    from importlib.resources import files

    return files("markovpoly.data").joinpath(f"{name}.json").read_text(encoding="utf-8")


def test_bundled_names():
    assert bundled_names() == BUNDLED


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_roundtrip_is_byte_identical(name):
    text = bundled_text(name)
    assert dumps(loads(text)) == text


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_diagrams_validate(name):
    p = bundled(name)
    for d in p.diagrams.values():
        assert d.validate() == []


def test_save_and_load(tmp_path):
    p = bundled("bayes")
    path = tmp_path / "bayes.json"
    save(p, path)
    q = load(path)
    for name in p.diagrams:
        np.testing.assert_array_equal(trace_kernel(q.diagrams[name]).probs, trace_kernel(p.diagrams[name]).probs)


@given(st.integers(0, 2**32 - 1))
def test_random_finite_projects_roundtrip(seed):
    d = random_diagram(np.random.default_rng(seed), 4, 3)
    objects = {o.name: o for k in d.vertices.values() for o in k.source + k.target}
    p = Project(objects=objects, kernels=dict(d.vertices), diagrams={"d": d})
    text = dumps(p)
    q = loads(text)
    assert dumps(q) == text
    assert q.diagrams["d"].structure() == d.structure()
    np.testing.assert_allclose(trace_kernel(q.diagrams["d"]).probs, trace_kernel(d).probs, atol=1e-15)


@pytest.mark.parametrize(
    "profile, text, value",
    [
        ((S,), "viral", (1,)),
        ((S,), "0", (0,)),
        ((Z,), "1.5", ((1.5,),)),
        ((Z,), "[1.5]", ((1.5,),)),
        ((Z2,), "[1, 2]", ((1.0, 2.0),)),
        ((Z, Z), "[2.0],[3.0]", ((2.0,), (3.0,))),
        ((S, Z), "bacterial,1.5", (0, (1.5,))),
        ((), "[]", ()),
    ],
)
def test_parse_literal(profile, text, value):
    assert parse_literal(profile, text) == value


@pytest.mark.parametrize("profile, text", [((S,), "fungal"), ((S,), "2"), ((Z2,), "[1]"), ((S, Z), "viral"), ((Z,), "[1,")])
def test_bad_literals(profile, text):
    with pytest.raises(ProjectError):
        parse_literal(profile, text)


def test_format_literal_inverts_parse():
    v = parse_literal((S, Z), "viral,2.5")
    assert format_literal((S, Z), v) == ["viral", [2.5]]


@pytest.mark.parametrize(
    "term",
    [
        Unit("a"),
        Atom("f", ("a",), ("b",)),
        Seq((Atom("f", ("a",), ("b",)), Atom("g", ("b",), ("c",)))),
        Comp(Atom("h", ("x", "b"), ("y",)), Seq((Atom("f", ("a",), ("b",)),)), 0, 1),
    ],
)
def test_term_json_roundtrip(term):
    assert term_from_json(json.loads(json.dumps(term_to_json(term)))) == term


def test_parse_error_reports_position():
    with pytest.raises(ProjectError, match="line 2, column 8"):
        loads('{\n  "a": ,\n}')


def test_unknown_section_and_missing_references():
    with pytest.raises(ProjectError, match="unknown sections"):
        loads('{"widgets": {}}')
    with pytest.raises(ProjectError):
        loads('[1, 2]')
    data = json.loads(bundled_text("training"))
    data["param_diagrams"]["match"]["diagram"] = "nowhere"
    with pytest.raises(ProjectError, match="unknown diagram"):
        loads(json.dumps(data))


def test_bad_kernel_table_is_rejected():
    data = json.loads(bundled_text("bayes"))
    name = next(n for n, k in data["kernels"].items() if "table" in k)
    data["kernels"][name]["table"][0][0] += 0.5
    with pytest.raises((ProjectError, KernelError)):
        loads(json.dumps(data))


def test_param_setups_carry_theta():
    p = bundled("score")
    assert p.param_diagrams["net"].theta.shape == (24,)
    assert p.param_diagram("net").theta_dim == 24
    with pytest.raises(ProjectError):
        p.param_diagram("nope")

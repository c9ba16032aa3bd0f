"""Project files: one JSON document holding spaces, colors, kernels, diagrams,
parameterized diagrams, objectives and an optional co-indexed structure.

Cross-references are by name.  :func:`dumps` writes a canonical form (fixed
section order, sorted names, shortest round-trip floats), so
``dumps(loads(dumps(p))) == dumps(p)`` byte for byte.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Any

import numpy as np

from .ccmp import CCMP, CMPFunctor, IndexCat, ParamPushforward, Registry, embed_pushforward, linear_pushforward
from .colors import Atom, ColoredDiagram, ColorSystem, Comp, InterfaceSystem, KMor, Seq, Unit
from .diagram import Diagram, Port, Wire
from .kernels import FiniteTable, GaussianLinear, Kernel
from .learn import FiniteLogitTable, ObjectiveSpec, ParamDiagram, ParamKernel, affine_gaussian_family
from .library import make_builtin, make_objective
from .spaces import Finite, Obj, RealVec, SpaceDesc, SpaceError, format_value, profile_space, space_from_json, space_to_json, value_in_space

__all__ = [
    "ProjectError",
    "Project",
    "ParamSetup",
    "loads",
    "dumps",
    "load",
    "save",
    "bundled",
    "bundled_names",
    "parse_value",
    "parse_literal",
    "RHO_BUILTINS",
]

SECTIONS = (
    "description",
    "spaces",
    "colors",
    "k_morphisms",
    "k_compose",
    "interfaces",
    "kernels",
    "diagrams",
    "param_diagrams",
    "objectives",
    "index_category",
    "states",
    "state_pushforwards",
    "param_pushforwards",
)


class ProjectError(ValueError):
    pass


@dataclass
class ParamSetup:
    diagram: str
    theta: np.ndarray
    objective: str | None = None


@dataclass
class Project:
    objects: dict = field(default_factory=dict)
    colors: ColorSystem | None = None
    interfaces: InterfaceSystem | None = None
    kernels: dict = field(default_factory=dict)
    diagrams: dict = field(default_factory=dict)
    param_diagrams: dict = field(default_factory=dict)
    objectives: dict = field(default_factory=dict)
    ccmp: CCMP | None = None
    description: str = ""

    def kernel_name(self, k: Kernel) -> str:
        for name, kk in self.kernels.items():
            if kk is k:
                return name
        raise ProjectError(f"kernel {k!r} is not registered in the project")

    def object_name(self, o: Obj) -> str:
        for name, oo in self.objects.items():
            if oo == o:
                return name
        raise ProjectError(f"object {o.name} is not registered in the project")

    def param_diagram(self, name: str) -> ParamDiagram:
        if name not in self.param_diagrams:
            raise ProjectError(f"unknown parameterized diagram {name!r}")
        setup = self.param_diagrams[name]
        return ParamDiagram(self.diagrams[setup.diagram], self.interfaces)


# -- values ------------------------------------------------------------------


def parse_value(space: SpaceDesc, v: Any):
    """JSON literal to a value: finite points by label (or index), reals as numbers or lists."""
    if isinstance(space, Finite):
        if isinstance(v, str):
            return space.index(v)
        if isinstance(v, int) and not isinstance(v, bool) and 0 <= v < space.size:
            return v
        raise ProjectError(f"{v!r} is not a point of {space.labels}")
    if isinstance(space, RealVec):
        vals = [v] if isinstance(v, (int, float)) and not isinstance(v, bool) else v
        if not isinstance(vals, list) or len(vals) != space.dim:
            raise ProjectError(f"{v!r} is not a point of R^{space.dim}")
        return tuple(float(c) for c in vals)
    if not isinstance(v, list) or len(v) != len(space.factors):
        raise ProjectError(f"{v!r} does not match a product of {len(space.factors)} factors")
    return tuple(parse_value(f, c) for f, c in zip(space.factors, v))


def parse_literal(profile, text: str):
    """Compact command-line literal for a whole profile: ``p0``, ``[2.0],[3.0]``, ``bacterial,1.5``."""
    text = text.strip()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        quoted = re.sub(r'(?<![\w."])([A-Za-z_][\w\-]*)', r'"\1"', text)
        try:
            data = json.loads(quoted if quoted.startswith("[") and len(profile) == 1 and quoted.count("[") > 1 else f"[{quoted}]")
        except json.JSONDecodeError as e:
            raise ProjectError(f"cannot parse input literal {text!r}: {e.msg}") from None
    if not isinstance(data, list):
        data = [data]
    if len(profile) == 1 and len(data) != 1:
        data = [data]
    if len(data) != len(profile):
        raise ProjectError(f"literal has {len(data)} slots, expected {len(profile)}")
    try:
        value = tuple(parse_value(o.space, d) for o, d in zip(profile, data))
    except SpaceError as e:
        raise ProjectError(str(e)) from None
    if not value_in_space(value, profile_space(profile)):
        raise ProjectError(f"literal {text!r} does not inhabit the profile")
    return value


def format_literal(profile, value) -> list:
    return [format_value(o.space, v) for o, v in zip(profile, value)]


# -- color terms ---------------------------------------------------------------


def term_to_json(t):
    if isinstance(t, Atom):
        return {"atom": t.label, "dom": list(t.dom), "cod": list(t.cod)}
    if isinstance(t, Unit):
        return {"unit": t.color}
    if isinstance(t, Seq):
        return {"seq": [term_to_json(a) for a in t.items]}
    if isinstance(t, Comp):
        return {"comp": [term_to_json(t.outer), term_to_json(t.inner), t.i, t.j]}
    raise ProjectError(f"not a color term: {t!r}")


def term_from_json(d):
    if "atom" in d:
        return Atom(d["atom"], tuple(d["dom"]), tuple(d["cod"]))
    if "unit" in d:
        return Unit(d["unit"])
    if "seq" in d:
        return Seq(tuple(term_from_json(a) for a in d["seq"]))
    if "comp" in d:
        o, n, i, j = d["comp"]
        return Comp(term_from_json(o), term_from_json(n), int(i), int(j))
    raise ProjectError(f"bad color term {d!r}")


# -- data laws ---------------------------------------------------------------


def _rho_gaussian_affine(in_profile, ref_profile, mean=0.0, std=1.0, slope=1.0, intercept=0.0):
    def sampler(rng, n):
        x = mean + std * rng.standard_normal(n)
        r = slope * x + intercept
        return [((float(v),),) for v in x], [((float(v),),) for v in r]

    return sampler


RHO_BUILTINS = {"gaussian-affine": _rho_gaussian_affine}


# -- loading -------------------------------------------------------------------


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise ProjectError(f"{where}: missing field {key!r}")
    return d[key]


def _objs(p: Project, names, where) -> tuple:
    out = []
    for n in names:
        if n not in p.objects:
            raise ProjectError(f"{where}: unknown object {n!r}")
        out.append(p.objects[n])
    return tuple(out)


def _load_kernel(p: Project, name: str, d: dict) -> Kernel:
    where = f"kernel {name!r}"
    src = _objs(p, _need(d, "source", where), where)
    dst = _objs(p, _need(d, "target", where), where)
    color = term_from_json(d["color"]) if "color" in d else None
    kw = {"name": name, "color": color}
    if "table" in d:
        return FiniteTable(src, dst, np.array(d["table"], dtype=float), **kw)
    if "gaussian" in d:
        g = d["gaussian"]
        return GaussianLinear(src, dst, g["weight"], g["bias"], g["cov"], **kw)
    if "builtin" in d:
        return make_builtin(d["builtin"], src, dst, d.get("args", {}), **kw)
    if "family" in d:
        fam = d["family"]
        if fam == "softmax-table":
            k = FiniteLogitTable(src, dst, **kw)
            k.spec = {"family": "softmax-table", "args": {}}
            return k
        if fam == "affine-gaussian":
            return affine_gaussian_family(src, dst, d.get("args", {}).get("noise_std", 1.0), **kw)
        raise ProjectError(f"{where}: unknown family {fam!r}")
    raise ProjectError(f"{where}: needs one of table, gaussian, builtin, family")


def _load_diagram(p: Project, name: str, d: dict) -> Diagram:
    where = f"diagram {name!r}"
    vertices = {}
    for v, kn in _need(d, "vertices", where).items():
        if kn not in p.kernels:
            raise ProjectError(f"{where}: vertex {v!r} uses unknown kernel {kn!r}")
        vertices[v] = p.kernels[kn]
    wires = []
    for w in d.get("wires", []):
        if len(w) not in (4, 5):
            raise ProjectError(f"{where}: wire {w!r} must be [u, p, v, q] or [u, p, v, q, witness]")
        wires.append(Wire(Port(w[0], int(w[1])), Port(w[2], int(w[3])), w[4] if len(w) == 5 else None))
    inputs = [Port(v, int(q)) for v, q in d["inputs"]] if "inputs" in d else None
    outputs = [Port(v, int(q)) for v, q in d["outputs"]] if "outputs" in d else None
    if d.get("colored", False):
        return ColoredDiagram(vertices, wires, inputs, outputs, interfaces=p.interfaces)
    return Diagram(vertices, wires, inputs, outputs)


def _load_objective(p: Project, name: str, d: dict) -> ObjectiveSpec:
    where = f"objective {name!r}"
    f = _need(d, "f", where)
    obj = make_objective(f["builtin"], f.get("args", {}))
    ins = _objs(p, d.get("inputs", []), where)
    refs = _objs(p, d.get("ref", []), where)
    rho = _need(d, "rho", where)
    spec = ObjectiveSpec(obj, ref_profile=refs)
    spec.in_profile = ins
    spec.rho_spec = rho
    if "exact" in rho:
        spec.rho_exact = [(parse_value(profile_space(ins), x), parse_value(profile_space(refs), r), float(pr)) for x, r, pr in rho["exact"]]
        total = sum(pr for _, _, pr in spec.rho_exact)
        if abs(total - 1.0) > 1e-12:
            raise ProjectError(f"{where}: data law sums to {total}")
    elif "builtin" in rho:
        if rho["builtin"] not in RHO_BUILTINS:
            raise ProjectError(f"{where}: unknown data law {rho['builtin']!r}")
        spec.rho_sampler = RHO_BUILTINS[rho["builtin"]](ins, refs, **rho.get("args", {}))
    else:
        raise ProjectError(f"{where}: rho needs 'exact' or 'builtin'")
    return spec


def _load_pushforward(name: str, d: dict, src_dim: int, dst_dim: int) -> ParamPushforward:
    if "matrix" in d:
        pf = linear_pushforward(d["matrix"], name)
    elif d.get("builtin") == "embed":
        a = d.get("args", {})
        pf = embed_pushforward(src_dim, dst_dim, a.get("copy", []), a.get("init", []), name)
    else:
        raise ProjectError(f"parameter pushforward {name!r}: needs 'matrix' or builtin 'embed'")
    if (pf.src_dim, pf.dst_dim) != (src_dim, dst_dim):
        raise ProjectError(f"parameter pushforward {name!r} maps R^{pf.src_dim} -> R^{pf.dst_dim}, expected R^{src_dim} -> R^{dst_dim}")
    return pf


def from_dict(data: dict) -> Project:
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ProjectError(f"unknown sections {sorted(unknown)}")
    p = Project(description=data.get("description", ""))
    for name, d in data.get("spaces", {}).items():
        p.objects[name] = Obj(name, space_from_json(_need(d, "space", f"space {name!r}")), d.get("color"))
    if "colors" in data:
        morphs = [KMor(m, s, t) for m, (s, t) in data.get("k_morphisms", {}).items()]
        comp = {(g, f): h for g, f, h in data.get("k_compose", [])}
        p.colors = ColorSystem(data["colors"], morphs, comp)
        p.interfaces = InterfaceSystem(p.colors)
    kernels = data.get("kernels", {})
    for name, d in kernels.items():
        p.kernels[name] = _load_kernel(p, name, d)
    for f, b, c, kn in data.get("interfaces", []):
        if p.interfaces is None:
            raise ProjectError("interfaces need a colors section")
        if kn not in p.kernels:
            raise ProjectError(f"interface {f}: unknown kernel {kn!r}")
        p.interfaces.add(f, p.objects[b], p.objects[c], p.kernels[kn])
    for name, d in data.get("diagrams", {}).items():
        p.diagrams[name] = _load_diagram(p, name, d)
    for name, d in data.get("objectives", {}).items():
        p.objectives[name] = _load_objective(p, name, d)
    for name, d in data.get("param_diagrams", {}).items():
        dn = _need(d, "diagram", f"param diagram {name!r}")
        if dn not in p.diagrams:
            raise ProjectError(f"param diagram {name!r}: unknown diagram {dn!r}")
        on = d.get("objective")
        if on is not None and on not in p.objectives:
            raise ProjectError(f"param diagram {name!r}: unknown objective {on!r}")
        p.param_diagrams[name] = ParamSetup(dn, np.array(d.get("theta", []), dtype=float), on)
    if "index_category" in data:
        ic = data["index_category"]
        cat = IndexCat(ic["objects"], {m: tuple(st) for m, st in ic.get("morphisms", {}).items()}, {(b, a): c for b, a, c in ic.get("compose", [])})
        states = {}
        for t, sd in data.get("states", {}).items():
            objs = {n: p.objects[n] for n in sd.get("objects", [])}
            ks = {n: p.kernels[n] for n in sd.get("kernels", [])}
            comps = [tuple(c[:4]) + (c[4], c[5]) for c in sd.get("composites", [])]
            states[t] = Registry(objs, ks, p.interfaces, comps)
        spush = {}
        for m, fd in data.get("state_pushforwards", {}).items():
            s, t = cat.morphisms[m]
            spush[m] = CMPFunctor(states[s], states[t], dict(fd.get("objects", {})), dict(fd.get("kernels", {})))
        ppush = {}
        for m, fd in data.get("param_pushforwards", {}).items():
            s, t = cat.morphisms[m]
            ppush[m] = _load_pushforward(m, fd, states[s].param_dim, states[t].param_dim)
        p.ccmp = CCMP(cat, p.colors, states, spush, ppush)
    return p


def loads(text: str) -> Project:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ProjectError(f"parse error at line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(data, dict):
        raise ProjectError("a project file must hold a JSON object")
    try:
        return from_dict(data)
    except (KeyError, TypeError) as e:
        raise ProjectError(f"malformed project: {e!r}") from None


def load(path) -> Project:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


# -- saving --------------------------------------------------------------------


def _kernel_to_json(p: Project, name: str, k: Kernel) -> dict:
    d: dict = {"source": [p.object_name(o) for o in k.source], "target": [p.object_name(o) for o in k.target]}
    spec = k.spec or {}
    if "family" in spec:
        d["family"] = spec["family"]
        if spec.get("args"):
            d["args"] = spec["args"]
    elif "builtin" in spec:
        d["builtin"] = spec["builtin"]
        if spec.get("args"):
            d["args"] = spec["args"]
    elif isinstance(k, FiniteTable):
        d["table"] = k.probs.tolist()
    elif isinstance(k, GaussianLinear):
        d["gaussian"] = {"weight": k.weight.tolist(), "bias": k.bias.tolist(), "cov": k.cov_diag.tolist()}
    else:
        raise ProjectError(f"kernel {name!r} has no serializable form")
    if k.color is not None:
        d["color"] = term_to_json(k.color)
    return d


def _diagram_to_json(p: Project, d: Diagram) -> dict:
    wires = []
    for w in d.wires:
        row = [w.src.vertex, w.src.slot, w.dst.vertex, w.dst.slot]
        if w.witness is not None:
            row.append(w.witness)
        wires.append(row)
    return {
        "colored": isinstance(d, ColoredDiagram),
        "vertices": {v: p.kernel_name(k) for v, k in d.vertices.items()},
        "wires": wires,
        "inputs": [[q.vertex, q.slot] for q in d.inputs],
        "outputs": [[q.vertex, q.slot] for q in d.outputs],
    }


def to_dict(p: Project) -> dict:
    out: dict = {}
    if p.description:
        out["description"] = p.description
    out["spaces"] = {n: ({"space": space_to_json(o.space)} | ({"color": o.color} if o.color is not None else {})) for n, o in sorted(p.objects.items())}
    if p.colors is not None:
        cs = p.colors
        out["colors"] = list(cs.colors)
        out["k_morphisms"] = {m.id: [m.src, m.dst] for m in sorted(cs.morphisms.values(), key=lambda m: m.id) if not cs.is_identity(m.id)}
        out["k_compose"] = sorted([g, f, h] for (g, f), h in cs.compose_table.items() if not cs.is_identity(g) and not cs.is_identity(f))
    if p.interfaces is not None and p.interfaces.kernels:
        out["interfaces"] = sorted([f, p.object_name(b), p.object_name(c), p.kernel_name(k)] for (f, b, c), k in p.interfaces.kernels.items())
    out["kernels"] = {n: _kernel_to_json(p, n, k) for n, k in sorted(p.kernels.items())}
    if p.diagrams:
        out["diagrams"] = {n: _diagram_to_json(p, d) for n, d in sorted(p.diagrams.items())}
    if p.param_diagrams:
        pds = {}
        for n, s in sorted(p.param_diagrams.items()):
            e = {"diagram": s.diagram, "theta": [float(v) for v in s.theta]}
            if s.objective is not None:
                e["objective"] = s.objective
            pds[n] = e
        out["param_diagrams"] = pds
    if p.objectives:
        objs = {}
        for n, o in sorted(p.objectives.items()):
            e = {"f": o.f.spec, "inputs": [p.object_name(x) for x in getattr(o, "in_profile", ())], "ref": [p.object_name(x) for x in o.ref_profile]}
            rho = getattr(o, "rho_spec", None)
            if rho is None:
                if o.rho_exact is None:
                    raise ProjectError(f"objective {n!r} has no serializable data law")
                ins, refs = getattr(o, "in_profile", ()), o.ref_profile
                rho = {"exact": [[format_literal(ins, x), format_literal(refs, r), float(pr)] for x, r, pr in o.rho_exact]}
            e["rho"] = rho
            objs[n] = e
        out["objectives"] = objs
    if p.ccmp is not None:
        c = p.ccmp
        cat = c.index
        out["index_category"] = {
            "objects": list(cat.objects),
            "morphisms": {m: list(st) for m, st in sorted(cat.morphisms.items()) if m not in cat.identities.values()},
            "compose": sorted([b, a, g] for (b, a), g in cat.compose_table.items() if b not in cat.identities.values() and a not in cat.identities.values()),
        }
        out["states"] = {
            t: {
                "objects": sorted(r.objects),
                "kernels": sorted(r.kernels),
                "composites": [list(cm) for cm in r.composites],
            }
            for t, r in sorted(c.states.items())
        }
        out["state_pushforwards"] = {m: {"objects": dict(sorted(g.object_map.items())), "kernels": dict(sorted(g.kernel_map.items()))} for m, g in sorted(c.state_push.items())}
        out["param_pushforwards"] = {m: pf.spec for m, pf in sorted(c.param_push.items())}
    return out


def dumps(p: Project) -> str:
    return json.dumps(to_dict(p), indent=1) + "\n"


def save(p: Project, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(p))


# -- bundled fixtures -----------------------------------------------------------


def bundled_names() -> list[str]:
    return sorted(r.name[:-5] for r in resources.files("markovpoly.data").iterdir() if r.name.endswith(".json"))


def bundled(name: str) -> Project:
    res = resources.files("markovpoly.data").joinpath(f"{name}.json")
    if not res.is_file():
        raise ProjectError(f"no bundled project {name!r}; available: {bundled_names()}")
    return loads(res.read_text(encoding="utf-8"))

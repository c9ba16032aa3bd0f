"""Builders for the bundled example projects.

Each builder returns a :class:`~markovpoly.project.Project`.  The JSON files
under ``markovpoly/data`` are these projects written with
:func:`~markovpoly.project.dumps`; ``python3 -m markovpoly.fixtures`` rewrites
them.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from .ccmp import CCMP, CMPFunctor, IndexCat, Registry, embed_pushforward
from .colors import Atom, ColoredDiagram, ColorSystem, InterfaceSystem, KMor
from .diagram import Diagram, Port, Wire
from .kernels import FiniteTable, GaussianLinear
from .learn import FiniteLogitTable, ObjectiveSpec, affine_gaussian_family
from .library import copy_map, logistic_interface, make_objective, noisy_logistic_interface, std_normal, treatment_rule
from .project import RHO_BUILTINS, ParamSetup, Project
from .spaces import Finite, Obj, RealVec

__all__ = [
    "BUILDERS",
    "gaussian_project",
    "diagnosis_project",
    "bayes_project",
    "severity_project",
    "score_project",
    "pathwise_project",
    "training_project",
    "dynamic_graph_project",
    "random_stochastic",
    "dyadic_stochastic",
    "write_bundled",
]

GAUSS_SIGMA1 = 0.7
GAUSS_SIGMA2 = 1.3
PATHWISE_THETA0 = (1.0, 0.5, 1.5, -1.0)
PATHWISE_RHO = {"mean": 1.0, "std": 0.1, "slope": 2.0, "intercept": 3.0}
PATHWISE_NOISE = (0.2, 0.1)


def random_stochastic(rng, n_rows: int, n_cols: int) -> np.ndarray:
    p = rng.random((n_rows, n_cols)) + 0.05
    return p / p.sum(axis=1, keepdims=True)


def dyadic_stochastic(rng, n_rows: int, n_cols: int, denom: int = 8) -> np.ndarray:
    """Rows with entries in (1/denom)Z, so products of such tables are exact in floating point."""
    out = np.zeros((n_rows, n_cols))
    for r in range(n_rows):
        cuts = np.sort(rng.choice(np.arange(1, denom), size=n_cols - 1, replace=False))
        out[r] = np.diff(np.concatenate([[0], cuts, [denom]])) / denom
    return out


def _objs(*specs) -> dict:
    return {name: Obj(name, space, color) for name, space, color in specs}


def gaussian_project() -> Project:
    o = _objs(*[(n, RealVec(1), None) for n in ("A", "B1", "B2", "C2", "D")])
    k = GaussianLinear([o["A"]], [o["B1"], o["B2"]], [[1.0, 1.0]], [0.0, 0.0], [GAUSS_SIGMA1**2, 0.0], name="k")
    l = GaussianLinear([o["B1"], o["C2"]], [o["D"]], [[1.0], [1.0]], [0.0], [GAUSS_SIGMA2**2], name="l")
    d = Diagram(
        {"k": k, "l": l},
        [Wire(Port("k", 0), Port("l", 0))],
        [Port("k", 0), Port("l", 1)],
        [Port("l", 0), Port("k", 1)],
    )
    return Project(objects=o, kernels={"k": k, "l": l}, diagrams={"ksc": d}, description="Gaussian slotwise composition: D ~ N(a + c2, s1^2 + s2^2), second output a")


def diagnosis_project() -> Project:
    o = _objs(
        ("Pat", Finite(("p0", "p1", "p2")), "c_pat"),
        ("RawBio", RealVec(1), "c_raw"),
        ("Bio", RealVec(1), "c_bio"),
        ("Diag", Finite(("bacterial", "viral")), "c_diag"),
        ("Treat", Finite(("antibiotic", "supportive")), "c_treat"),
    )
    cs = ColorSystem(
        ["c_pat", "c_raw", "c_bio", "c_diag", "c_treat"],
        [KMor("calib", "c_raw", "c_bio"), KMor("thresh", "c_bio", "c_diag"), KMor("screen", "c_raw", "c_diag")],
        {("thresh", "calib"): "screen"},
    )
    isys = InterfaceSystem(cs)
    kernels = {
        "k": std_normal([o["Pat"]], [o["Bio"]], name="k"),
        "l": treatment_rule([o["Diag"]], [o["Treat"]], name="l"),
        "kappa_thresh": logistic_interface([o["Bio"]], [o["Diag"]], name="kappa_thresh"),
        "kappa_calib": GaussianLinear([o["RawBio"]], [o["Bio"]], [[1.0]], [0.0], [0.25], name="kappa_calib"),
        "kappa_screen": noisy_logistic_interface([o["RawBio"]], [o["Diag"]], 0.5, name="kappa_screen"),
    }
    isys.add("thresh", o["Bio"], o["Diag"], kernels["kappa_thresh"])
    isys.add("calib", o["RawBio"], o["Bio"], kernels["kappa_calib"])
    isys.add("screen", o["RawBio"], o["Diag"], kernels["kappa_screen"])
    d = ColoredDiagram({"k": kernels["k"], "l": kernels["l"]}, [Wire(Port("k", 0), Port("l", 0), "thresh")], interfaces=isys)
    return Project(objects=o, colors=cs, interfaces=isys, kernels=kernels, diagrams={"workflow": d}, description="Diagnosis and treatment: P(antibiotic | p) = 1/2 for every patient")


def bayes_project(seed: int = 11) -> Project:
    rng = np.random.default_rng(seed)
    o = _objs(("A", Finite.of_size(2), None), ("B", Finite.of_size(3), None), ("C", Finite.of_size(2), None), ("E", Finite.of_size(2), None))
    kernels = {
        "pA": FiniteTable([], [o["A"]], random_stochastic(rng, 1, 2), name="pA"),
        "kBA": FiniteTable([o["A"]], [o["B"]], random_stochastic(rng, 2, 3), name="kBA"),
        "kCB": FiniteTable([o["B"]], [o["C"]], random_stochastic(rng, 3, 2), name="kCB"),
        "pB": FiniteTable([], [o["B"]], random_stochastic(rng, 1, 3), name="pB"),
        "kEAB": FiniteTable([o["A"], o["B"]], [o["E"]], random_stochastic(rng, 6, 2), name="kEAB"),
    }
    chain = Diagram(
        {"a": kernels["pA"], "b": kernels["kBA"], "c": kernels["kCB"]},
        [Wire(Port("a", 0), Port("b", 0)), Wire(Port("b", 0), Port("c", 0))],
    )
    vee = Diagram(
        {"a": kernels["pA"], "b": kernels["pB"], "e": kernels["kEAB"]},
        [Wire(Port("a", 0), Port("e", 0)), Wire(Port("b", 0), Port("e", 1))],
    )
    return Project(objects=o, kernels=kernels, diagrams={"chain": chain, "vstructure": vee}, description="Bayesian-network fragments: a chain A -> B -> C and a v-structure A -> E <- B")


def severity_project(seed: int = 5) -> Project:
    """Colors s0..s3 along a severity scale with dyadic interface tables, and a 5-vertex colored tree."""
    rng = np.random.default_rng(seed)
    o = _objs(
        ("X0", Finite.of_size(2), "s0"),
        ("X1", Finite.of_size(3), "s1"),
        ("X2", Finite.of_size(2), "s2"),
        ("X3", Finite.of_size(3), "s3"),
        ("U", Finite.of_size(2), "u"),
        ("V", Finite.of_size(2), "v"),
    )
    cs = ColorSystem(
        ["s0", "s1", "s2", "s3", "u", "v"],
        [KMor("f", "s0", "s1"), KMor("g", "s1", "s2"), KMor("h", "s2", "s3"), KMor("gf", "s0", "s2"), KMor("hg", "s1", "s3"), KMor("hgf", "s0", "s3")],
        {("g", "f"): "gf", ("h", "g"): "hg", ("h", "gf"): "hgf", ("hg", "f"): "hgf"},
    )
    isys = InterfaceSystem(cs)
    tf, tg, th = dyadic_stochastic(rng, 2, 3), dyadic_stochastic(rng, 3, 2), dyadic_stochastic(rng, 2, 3)
    tables = {"f": (tf, "X0", "X1"), "g": (tg, "X1", "X2"), "h": (th, "X2", "X3"), "gf": (tf @ tg, "X0", "X2"), "hg": (tg @ th, "X1", "X3"), "hgf": (tf @ tg @ th, "X0", "X3")}
    kernels = {}
    for w, (t, b, c) in tables.items():
        kernels[f"kappa_{w}"] = FiniteTable([o[b]], [o[c]], t, name=f"kappa_{w}")
        isys.add(w, o[b], o[c], kernels[f"kappa_{w}"])
    shapes = {
        "a": (["U"], ["X0", "X0"]),
        "b": (["X1"], ["X1"]),
        "c": (["X2", "V"], ["X2"]),
        "d": (["X2"], ["X3", "U"]),
        "e": (["X3"], ["V"]),
    }
    for v, (ins, outs) in shapes.items():
        n_in = int(np.prod([o[n].space.size for n in ins]))
        n_out = int(np.prod([o[n].space.size for n in outs]))
        kernels[v] = FiniteTable([o[n] for n in ins], [o[n] for n in outs], random_stochastic(rng, n_in, n_out), name=v)
    tree = ColoredDiagram(
        {v: kernels[v] for v in shapes},
        [
            Wire(Port("a", 0), Port("b", 0), "f"),
            Wire(Port("b", 0), Port("c", 0), "g"),
            Wire(Port("a", 1), Port("d", 0), "gf"),
            Wire(Port("d", 0), Port("e", 0)),
        ],
        interfaces=isys,
    )
    return Project(objects=o, colors=cs, interfaces=isys, kernels=kernels, diagrams={"tree": tree}, description="Severity colors with coherent dyadic interfaces and a 5-vertex colored tree")


def score_project(seed: int = 3) -> Project:
    rng = np.random.default_rng(seed)
    X3 = Finite.of_size(3)
    o = _objs(("X", X3, None), ("X1", X3, None), ("X2", X3, None), ("B", Finite.of_size(2), None), ("C", X3, None), ("R", X3, None))
    kernels = {
        "copy": copy_map([o["X"]], [o["X1"], o["X2"]], name="copy"),
        "u1": FiniteLogitTable([o["X1"]], [o["B"]], name="u1"),
        "u2": FiniteLogitTable([o["B"], o["X2"]], [o["C"]], name="u2"),
    }
    for k in ("u1", "u2"):
        kernels[k].spec = {"family": "softmax-table", "args": {}}
    d = Diagram(
        kernels,
        [Wire(Port("copy", 0), Port("u1", 0)), Wire(Port("u1", 0), Port("u2", 0)), Wire(Port("copy", 1), Port("u2", 1))],
    )
    c, r = np.meshgrid(np.arange(3), np.arange(3), indexing="ij")
    f = make_objective("table", {"values": ((c - r) ** 2).astype(float).tolist()})
    px = (0.5, 0.3, 0.2)
    exact = [((x,), (x,), px[x] * 0.6) for x in range(3)] + [((x,), ((x + 1) % 3,), px[x] * 0.4) for x in range(3)]
    obj = ObjectiveSpec(f, rho_exact=exact, ref_profile=(o["R"],), in_profile=(o["X"],))
    theta = np.round(rng.normal(0.0, 0.5, 24), 6)
    return Project(
        objects=o,
        kernels=kernels,
        diagrams={"net": d},
        objectives={"sq": obj},
        param_diagrams={"net": ParamSetup("net", theta, "sq")},
        description="All-finite score-function fixture: two logit tables behind a copy, squared label distance to a noisy reference",
    )


def pathwise_project() -> Project:
    o = _objs(("X", RealVec(1), None), ("H", RealVec(1), None), ("Y", RealVec(1), None), ("R", RealVec(1), None))
    kernels = {
        "u1": affine_gaussian_family([o["X"]], [o["H"]], PATHWISE_NOISE[0], name="u1"),
        "u2": affine_gaussian_family([o["H"]], [o["Y"]], PATHWISE_NOISE[1], name="u2"),
    }
    d = Diagram(kernels, [Wire(Port("u1", 0), Port("u2", 0))])
    rho = {"builtin": "gaussian-affine", "args": dict(PATHWISE_RHO)}
    obj = ObjectiveSpec(make_objective("squared-error", {"weight": 1.0}), RHO_BUILTINS["gaussian-affine"]((o["X"],), (o["R"],), **PATHWISE_RHO), ref_profile=(o["R"],), in_profile=(o["X"],), rho_spec=rho)
    return Project(
        objects=o,
        kernels=kernels,
        diagrams={"chain": d},
        objectives={"sq": obj},
        param_diagrams={"chain": ParamSetup("chain", np.array(PATHWISE_THETA0), "sq")},
        description="Reparameterized Gaussian chain x -> h -> y with squared error against r = 2x + 3",
    )


def pathwise_closed_form(theta, mu=PATHWISE_RHO["mean"], sx=PATHWISE_RHO["std"], slope=PATHWISE_RHO["slope"], icpt=PATHWISE_RHO["intercept"], s1=PATHWISE_NOISE[0], s2=PATHWISE_NOISE[1]) -> float:
    """Expected squared error of the pathwise fixture from Gaussian moments."""
    w1, c1, w2, c2 = theta
    m = w2 * w1 - slope
    k = w2 * c1 + c2 - icpt
    return (m * mu + k) ** 2 + m**2 * sx**2 + w2**2 * s1**2 + s2**2


def training_project() -> Project:
    X2 = Finite(("n", "y"))
    o = _objs(("X", X2, None), ("Y", X2, None), ("R", X2, None))
    pol = FiniteLogitTable([o["X"]], [o["Y"]], name="policy")
    pol.spec = {"family": "softmax-table", "args": {}}
    d = Diagram({"policy": pol})
    match = ObjectiveSpec(make_objective("mismatch"), rho_exact=[((x,), (x,), 0.5) for x in range(2)], ref_profile=(o["R"],), in_profile=(o["X"],))
    indep = ObjectiveSpec(make_objective("mismatch"), rho_exact=[((x,), (r,), 0.25) for x in range(2) for r in range(2)], ref_profile=(o["R"],), in_profile=(o["X"],))
    return Project(
        objects=o,
        kernels={"policy": pol},
        diagrams={"policy": d},
        objectives={"match": match, "independent": indep},
        param_diagrams={"match": ParamSetup("policy", np.zeros(4), "match"), "symmetric": ParamSetup("policy", np.zeros(4), "independent")},
        description="Two-state matching: learn y = x under 0-1 loss; the independent reference makes the objective constant",
    )


def dynamic_graph_project() -> Project:
    """A graph growing along the path 1-2, 1-2-3, 1-2-3-4 with embedding parameter pushforwards."""
    B = Finite.of_size(2)
    specs = [("g", B, "c_G")] + [(f"h{i}", B, "c_V") for i in range(1, 5)] + [(f"e{i}{i + 1}", B, "c_E") for i in range(1, 4)]
    o = _objs(*specs)
    cs = ColorSystem(["c_G", "c_V", "c_E"])
    isys = InterfaceSystem(cs)
    kernels = {}

    def logit(name, src, dst, color):
        k = FiniteLogitTable([o[s] for s in src], [o[t] for t in dst], name=name, color=color)
        k.spec = {"family": "softmax-table", "args": {}}
        kernels[name] = k

    logit("glob", [], ["g"], Atom("glob", (), ("c_G",)))
    for i in range(1, 5):
        logit(f"prior_{i}", [], [f"h{i}"], Atom("prior", (), ("c_V",)))
    for i in range(1, 4):
        logit(f"edge_{i}{i + 1}", [f"h{i}", f"h{i + 1}"], [f"e{i}{i + 1}"], Atom("edge", ("c_V", "c_V"), ("c_E",)))
    for i in (2, 3):
        kernels[f"copy_{i}"] = copy_map([o[f"h{i}"]], [o[f"h{i}"], o[f"h{i}"]], name=f"copy_{i}", color=Atom("copy", ("c_V",), ("c_V", "c_V")))

    def graph(n):
        verts = ["glob"] + [f"prior_{i}" for i in range(1, n + 1)] + [f"edge_{i}{i + 1}" for i in range(1, n)] + [f"copy_{i}" for i in range(2, n)]
        wires = []
        for i in range(1, n):
            left = Port(f"copy_{i}", 1) if 1 < i else Port(f"prior_{i}", 0)
            right = Port(f"copy_{i + 1}", 0) if i + 1 < n else Port(f"prior_{i + 1}", 0)
            wires.append(Wire(left, Port(f"edge_{i}{i + 1}", 0)))
            wires.append(Wire(right, Port(f"edge_{i}{i + 1}", 1)))
        for i in range(2, n):
            wires.append(Wire(Port(f"prior_{i}", 0), Port(f"copy_{i}", 0)))
        outputs = [Port("glob", 0)] + [Port(f"edge_{i}{i + 1}", 0) for i in range(1, n)]
        return ColoredDiagram({v: kernels[v] for v in verts}, wires, [], outputs, interfaces=isys), verts

    states, diagrams, pds, objectives = {}, {}, {}, {}
    for t, n in (("G0", 2), ("G1", 3), ("G2", 4)):
        d, verts = graph(n)
        diagrams[f"graph_{t}"] = d
        objs = {"g"} | {f"h{i}" for i in range(1, n + 1)} | {f"e{i}{i + 1}" for i in range(1, n)}
        comps = [("prior_1", "edge_12", 0, 0, None, "pe_12")]
        if n > 2:
            comps.append(("prior_2", "copy_2", 0, 0, None, "pc_2"))
        states[t] = Registry({k: o[k] for k in sorted(objs)}, {k: kernels[k] for k in sorted(verts)}, isys, comps)
        objectives[f"count_{t}"] = ObjectiveSpec(make_objective("weighted-count", {"weights": [0.5] + [1.0] * (n - 1)}), rho_exact=[((), (), 1.0)])
    cat = IndexCat(["G0", "G1", "G2"], {"a01": ("G0", "G1"), "a12": ("G1", "G2"), "a02": ("G0", "G2")}, {("a12", "a01"): "a02"})

    def functor(s, t):
        src, dst = states[s], states[t]
        return CMPFunctor(src, dst, {k: k for k in src.objects}, {k: k for k in sorted(set(src.kernels) | {c[5] for c in src.composites})})

    def embed(s, t, name):
        ls, lt = states[s].param_layout, states[t].param_layout
        copy, init = [], []
        glob = ls["glob"]
        for kname, sl in lt.items():
            if kname in ls:
                copy += [(sl.start + r, ls[kname].start + r) for r in range(sl.stop - sl.start)]
            elif kname.startswith("prior"):
                init += [(sl.start + r, glob.start + r, "tanh") for r in range(sl.stop - sl.start)]
        return embed_pushforward(states[s].param_dim, states[t].param_dim, copy, init, name)

    spush = {m: functor(*cat.morphisms[m]) for m in ("a01", "a12", "a02")}
    ppush = {m: embed(*cat.morphisms[m], m) for m in ("a01", "a12", "a02")}
    ccmp = CCMP(cat, cs, states, spush, ppush, diagrams)
    rng = np.random.default_rng(2)
    for t in ("G0", "G1", "G2"):
        dim = states[t].param_dim
        theta = np.round(rng.normal(0.0, 0.7, dim), 6) if t == "G0" else ppush["a01" if t == "G1" else "a02"](pds["graph_G0"].theta)
        pds[f"graph_{t}"] = ParamSetup(f"graph_{t}", np.asarray(theta), f"count_{t}")
    return Project(
        objects=o,
        colors=cs,
        interfaces=isys,
        kernels=kernels,
        diagrams=diagrams,
        param_diagrams=pds,
        objectives=objectives,
        ccmp=ccmp,
        description="Dynamic graph: states G0 (1-2), G1 (1-2-3), G2 (1-2-3-4); new vertex priors are initialized from the global variable",
    )


BUILDERS = {
    "gaussian": gaussian_project,
    "diagnosis": diagnosis_project,
    "bayes": bayes_project,
    "severity": severity_project,
    "score": score_project,
    "pathwise": pathwise_project,
    "training": training_project,
    "dynamic-graph": dynamic_graph_project,
}


def write_bundled(directory=None) -> list[Path]:
    from .project import dumps

    directory = Path(directory) if directory else Path(__file__).parent / "data"
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, build in BUILDERS.items():
        path = directory / f"{name}.json"
        path.write_text(dumps(build()), encoding="utf-8")
        written.append(path)
    return written


if __name__ == "__main__":
    for p in write_bundled(sys.argv[1] if len(sys.argv) > 1 else None):
        print(p)

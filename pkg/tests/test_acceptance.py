"""Acceptance criteria 1-11.

Each test prints exactly one ``criterion N: PASS|FAIL`` line with the measured
quantities, and the same lines are repeated in the pytest terminal summary.
Tolerances and sample sizes are the stated ones; runtime budgets are part of
each pass condition.
"""

from __future__ import annotations

import itertools
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from helpers import first_input, random_diagram, random_tree_diagram
from markovpoly.ccmp import check_cmp_functor, check_strict_functoriality, pushforward_diagram
from markovpoly.colors import check_interface_coherence, cksc, colored_reduce, colored_trace_kernel, interface_expand
from markovpoly.diagram import DiagramError, binary_ksc
from markovpoly.fixtures import GAUSS_SIGMA1, GAUSS_SIGMA2, pathwise_closed_form, severity_project
from markovpoly.kernels import CompositionError, GaussianLinear, identity_kernel
from markovpoly.learn import (
    central_difference,
    estimator_expectation_exact,
    expected_objective_exact,
    grad_exact_enumeration,
    grad_reverse_mode_mc,
    per_sample_objectives,
    sample_gradients,
    train_sgd,
)
from markovpoly.project import bundled
from markovpoly.rng import substream
from markovpoly.trace import TraceError, all_topological_orders, order_invariance_check, reduce_diagram, trace_exact, trace_expectation_mc, trace_kernel, trace_sample_batch


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


def report(n: int, ok: bool, elapsed: float, budget: float, detail: str):
    ok = bool(ok) and elapsed < budget
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({elapsed:.2f}s of {budget:g}s) {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


# 1 -------------------------------------------------------------------------


def test_criterion_1_gaussian_ksc():
    t0 = time.perf_counter()
    p = bundled("gaussian")
    d = p.diagrams["ksc"]
    k, l = p.kernels["k"], p.kernels["l"]
    a, c2 = 0.4, -1.1
    h = binary_ksc(k, l, 0, 0)
    assert isinstance(h, GaussianLinear)
    # composite inputs (A, C2), outputs (D, B2)
    mean = np.array([a, c2]) @ h.weight + h.bias
    var = h.cov_diag
    exact_err = max(abs(mean[0] - (a + c2)), abs(var[0] - (GAUSS_SIGMA1**2 + GAUSS_SIGMA2**2)))
    second_exact = mean[1] == a and var[1] == 0.0
    n = 100_000
    ys = trace_sample_batch(d, ((a,), (c2,)), n, substream(1, "criterion-1"))
    D = np.array([y[0][0] for y in ys])
    B2 = np.array([y[1][0] for y in ys])
    m, v = D.mean(), D.var(ddof=1)
    se_m = np.sqrt(v / n)
    se_v = np.sqrt((np.mean((D - m) ** 4) - v**2) / n)
    z_m = abs(m - (a + c2)) / se_m
    z_v = abs(v - (GAUSS_SIGMA1**2 + GAUSS_SIGMA2**2)) / se_v
    second_mc = bool(np.all(B2 == a))
    ok = exact_err <= 1e-12 and second_exact and z_m <= 5 and z_v <= 5 and second_mc
    report(1, ok, time.perf_counter() - t0, 5, f"exact err {exact_err:.2e}; MC mean z {z_m:.2f}, var z {z_v:.2f}; second output exact {second_exact and second_mc}")


# 2 -------------------------------------------------------------------------


def test_criterion_2_diagnosis_workflow():
    t0 = time.perf_counter()
    p = bundled("diagnosis")
    d = interface_expand(p.diagrams["workflow"], p.interfaces)
    n = 100_000
    est, se = trace_expectation_mc(d, (0,), lambda y: float(y[0] == 0), n, substream(2, "criterion-2"))
    band = 5 * np.sqrt(0.25 / n)
    report(2, abs(est - 0.5) <= band, time.perf_counter() - t0, 5, f"P(antibiotic) = {est:.5f} +- {se:.5f}, band 0.5 +- {band:.4f}")


# 3 -------------------------------------------------------------------------


def _hand_chain(pA, kBA, kCB):
    out = np.zeros(kCB.shape[1])
    for c in range(kCB.shape[1]):
        for a_ in range(pA.shape[1]):
            for b in range(kBA.shape[1]):
                out[c] += pA[0, a_] * kBA[a_, b] * kCB[b, c]
    return out


def _hand_vee(pA, pB, kE):
    nb = pB.shape[1]
    out = np.zeros(kE.shape[1])
    for e in range(kE.shape[1]):
        for a_ in range(pA.shape[1]):
            for b in range(nb):
                out[e] += pA[0, a_] * pB[0, b] * kE[a_ * nb + b, e]
    return out


def test_criterion_3_bayes_fragments():
    t0 = time.perf_counter()
    p = bundled("bayes")
    K = {n: k.probs for n, k in p.kernels.items()}
    hand = {"chain": _hand_chain(K["pA"], K["kBA"], K["kCB"]), "vstructure": _hand_vee(K["pA"], K["pB"], K["kEAB"])}
    err, bracket = 0.0, 0.0
    for name, want in hand.items():
        d = p.diagrams[name]
        _, marg = trace_exact(d, ())
        err = max(err, float(np.max(np.abs(marg.probs - want))))
        tables = [reduce_diagram(d, order).probs for order in itertools.permutations(d.wires)]
        assert len(tables) == 2
        bracket = max(bracket, float(np.max(np.abs(tables[0] - tables[1]))))
        err = max(err, float(np.max(np.abs(tables[0].ravel() - want))))
    report(3, err <= 1e-12 and bracket <= 1e-12, time.perf_counter() - t0, 1, f"max |trace - hand sum| {err:.2e}; bracketing difference {bracket:.2e}")


# 4 -------------------------------------------------------------------------


def test_criterion_4_order_independence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    dev, n_orders, sizes = 0.0, 0, []
    for _ in range(100):
        d = random_diagram(rng, max_vertices=6, max_states=4)
        sizes.append(len(d.vertices))
        orders = list(all_topological_orders(d))
        n_orders += len(orders)
        dev = max(dev, order_invariance_check(d, first_input(d), orders))
    report(4, dev <= 1e-12, time.perf_counter() - t0, 60, f"100 diagrams ({min(sizes)}-{max(sizes)} vertices), {n_orders} orders, max deviation {dev:.2e}")


# 5 -------------------------------------------------------------------------


def _ksc_law_deviation(rng) -> tuple[float, int]:
    """Unit laws on random tables, and every admissible reduction order of random trees against the trace kernel."""
    dev, count = 0.0, 0
    for _ in range(30):
        d = random_tree_diagram(rng, int(rng.integers(3, 6)))
        for k in d.vertices.values():
            for j, o in enumerate(k.source):
                dev = max(dev, float(np.max(np.abs(binary_ksc(identity_kernel(o), k, 0, j).probs - k.probs))))
            for i, o in enumerate(k.target):
                dev = max(dev, float(np.max(np.abs(binary_ksc(k, identity_kernel(o), i, 0).probs - k.probs))))
        ref = trace_kernel(d).probs
        for order in itertools.permutations(d.wires):
            try:
                t = reduce_diagram(d, order).probs
            except (DiagramError, TraceError, CompositionError):
                continue
            count += 1
            dev = max(dev, float(np.max(np.abs(t - ref))))
    return dev, count


def test_criterion_5_structural_laws():
    t0 = time.perf_counter()
    ksc_dev, ksc_count = _ksc_law_deviation(np.random.default_rng(5))
    cksc_dev, cksc_count, terms_ok = 0.0, 0, True
    for seed in range(5):
        p = severity_project(seed)
        cd, isys = p.diagrams["tree"], p.interfaces
        ref = colored_trace_kernel(cd, isys).probs
        for order in itertools.permutations(cd.wires):
            try:
                k, terms = colored_reduce(cd, isys, order)
            except (DiagramError, TraceError, CompositionError):
                continue
            cksc_count += 1
            terms_ok &= terms["kernel"] == terms["syntactic"]
            cksc_dev = max(cksc_dev, float(np.max(np.abs(k.probs - ref))))
        # colored unit laws: the identity witness is the identity kernel
        for v, k in cd.vertices.items():
            for i, o in enumerate(k.target):
                u = identity_kernel(o)
                h = cksc(k, u, i, 0, isys.colors.identity(o.color), isys)
                cksc_dev = max(cksc_dev, float(np.max(np.abs(h.to_table().probs - k.probs))))
    ok = ksc_dev <= 1e-12 and cksc_dev <= 1e-12 and terms_ok and ksc_count > 0 and cksc_count > 0
    report(5, ok, time.perf_counter() - t0, 60, f"KSC: {ksc_count} reductions, max deviation {ksc_dev:.2e}; CKSC: {cksc_count} reductions over 5 colored fixtures, max deviation {cksc_dev:.2e}, color terms agree {terms_ok}")


# 6 -------------------------------------------------------------------------


def test_criterion_6_interface_coherence():
    t0 = time.perf_counter()
    finite = check_interface_coherence(bundled("severity").interfaces, max_len=3, n=100_000, seed=6)
    cont = check_interface_coherence(bundled("diagnosis").interfaces, max_len=3, n=100_000, seed=6)
    exact_dev = max(c.deviation for c in finite + cont if c.mode == "exact")
    all_exact = all(c.mode == "exact" for c in finite)
    stat = [c for c in cont if c.mode == "statistical"]
    tv = max(c.deviation for c in stat)
    ok = all_exact and exact_dev <= 1e-12 and stat and tv <= 0.01 and all(c.ok for c in finite + cont)
    report(6, ok, time.perf_counter() - t0, 30, f"{len(finite)} finite paths, max deviation {exact_dev:.2e}; {len(stat)} continuous paths, max TV {tv:.4f}")


# 7 -------------------------------------------------------------------------


def test_criterion_7_score_function_gradients():
    t0 = time.perf_counter()
    p = bundled("score")
    pd, obj, theta = p.param_diagram("net"), p.objectives["sq"], p.param_diagrams["net"].theta
    exact = grad_exact_enumeration(pd, theta, obj)
    fd = central_difference(lambda t: expected_objective_exact(pd, t, obj), theta, 1e-5)
    ra = rel_err(exact, fd)
    rb = float(np.max(np.abs(estimator_expectation_exact(pd, theta, obj) - exact)))
    est = grad_reverse_mode_mc(pd, theta, obj, 50_000, substream(7, "criterion-7"))
    z = float(np.max(np.abs(est.flat - exact) / est.stderr))
    ok = ra <= 1e-6 and rb <= 1e-12 and z <= 5
    report(7, ok, time.perf_counter() - t0, 60, f"(a) rel err vs FD {ra:.2e}; (b) enumerated estimator deviation {rb:.2e}; (c) max |z| over {theta.size} coords {z:.2f}")


# 8 -------------------------------------------------------------------------


def test_criterion_8_pathwise_gradients():
    t0 = time.perf_counter()
    p = bundled("pathwise")
    pd, obj, theta = p.param_diagram("chain"), p.objectives["sq"], p.param_diagrams["chain"].theta
    S, h = 16, 1e-5
    xs, rs = obj.sample_rho(substream(8, "criterion-8-rho"), S)
    per, _ = sample_gradients(pd, theta, obj, S, substream(8, "criterion-8-noise"), xs=xs, rs=rs)
    fd = np.zeros_like(per)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        jp = per_sample_objectives(pd, theta + e, obj, S, substream(8, "criterion-8-noise"), xs, rs)
        jm = per_sample_objectives(pd, theta - e, obj, S, substream(8, "criterion-8-noise"), xs, rs)
        fd[:, i] = (jp - jm) / (2 * h)
    r_sample = max(rel_err(per[s], fd[s]) for s in range(S))
    est = grad_reverse_mode_mc(pd, theta, obj, 100_000, substream(8, "criterion-8"))
    fd_closed = central_difference(pathwise_closed_form, theta, 1e-5)
    r_mc = rel_err(est.flat, fd_closed)
    report(8, r_sample <= 1e-6 and r_mc <= 1e-3, time.perf_counter() - t0, 30, f"per-sample rel err {r_sample:.2e} over {S} frozen-noise samples; MC (N=1e5) rel err vs closed-form FD {r_mc:.2e}")


# 9 -------------------------------------------------------------------------


def test_criterion_9_ccmp_functoriality():
    t0 = time.perf_counter()
    p = bundled("dynamic-graph")
    c = p.ccmp
    strict = check_strict_functoriality(c, n_points=5, seed=9)
    theta0 = p.param_diagrams["graph_G0"].theta
    reports, dev, n_traces = [], 0.0, 0
    for m, (s, t) in sorted(c.index.morphisms.items()):
        theta_s = theta0 if s == "G0" else c.push_params("a01" if s == "G1" else "a02")(theta0)
        g = c.instantiated_functor(m, theta_s)
        reports += check_cmp_functor(g)
        for dn, d in p.diagrams.items():
            if not all(p.kernel_name(k) in c.states[s].kernels for k in d.vertices.values()):
                continue
            src = d.with_kernels({v: g.src.kernels[p.kernel_name(k)] for v, k in d.vertices.items()})
            img = pushforward_diagram(g, src)
            a = trace_kernel(interface_expand(img, p.interfaces)).probs
            b = trace_kernel(interface_expand(src, p.interfaces)).probs
            dev = max(dev, float(np.max(np.abs(a - b))))
            n_traces += 1
    # image of the instantiated G0 diagram under a01 equals the G1 instantiation restricted to G0's vertices
    g01 = c.instantiated_functor("a01", theta0)
    inst1 = p.param_diagram("graph_G1").split(c.push_params("a01")(theta0))
    same = all(np.array_equal(g01.dst.kernels[v].probs, p.kernels[v].at(inst1[v]).probs) for v in ("glob", "prior_1", "prior_2", "edge_12"))
    ok = not strict and not reports and dev <= 1e-12 and same
    detail = f"strict identity/composite laws: {'exact' if not strict else strict}; functor reports {len(reports)}; {n_traces} trace comparisons, max deviation {dev:.2e}"
    report(9, ok, time.perf_counter() - t0, 10, detail)


# 10 ------------------------------------------------------------------------


def test_criterion_10_gradient_transport():
    t0 = time.perf_counter()
    p = bundled("dynamic-graph")
    c = p.ccmp
    theta0 = p.param_diagrams["graph_G0"].theta
    pd1, o1 = p.param_diagram("graph_G1"), p.objectives["count_G1"]
    pd2, o2 = p.param_diagram("graph_G2"), p.objectives["count_G2"]
    a01, a12, a02 = (c.push_params(m) for m in ("a01", "a12", "a02"))
    g1 = grad_exact_enumeration(pd1, a01(theta0), o1)
    pulled = c.pullback("a01", theta0, g1)
    fd = central_difference(lambda t: expected_objective_exact(pd1, a01(t), o1), theta0, 1e-5)
    r = rel_err(pulled, fd)
    g2 = grad_exact_enumeration(pd2, a02(theta0), o2)
    seq = c.pullback("a01", theta0, c.pullback("a12", a01(theta0), g2))
    comp = float(np.max(np.abs(c.pullback("a02", theta0, g2) - seq)))
    report(10, r <= 1e-4 and comp <= 1e-9, time.perf_counter() - t0, 10, f"pullback along a01 vs FD rel err {r:.2e}; composite vs sequential pullback {comp:.2e}")


# 11 ------------------------------------------------------------------------


def test_criterion_11_training():
    t0 = time.perf_counter()
    p = bundled("training")
    pd, obj = p.param_diagram("match"), p.objectives["match"]
    theta0 = p.param_diagrams["match"].theta
    ex = train_sgd(pd, theta0, obj, 50, 0.1, 0, None, exact=True)
    curve = [expected_objective_exact(pd, t, obj) for t in ex.thetas]
    monotone = all(b < a for a, b in zip(curve, curve[1:]))
    mc = train_sgd(pd, theta0, obj, 50, 0.1, 2000, substream(11, "criterion-11"))
    end_mc = expected_objective_exact(pd, mc.thetas[-1], obj)
    gap = abs(end_mc - curve[-1])
    report(11, monotone and gap <= 0.05, time.perf_counter() - t0, 60, f"exact descent {curve[0]:.4f} -> {curve[-1]:.4f} monotone {monotone}; MC endpoint {end_mc:.4f}, gap {gap:.4f}")


@pytest.mark.parametrize("name", ["gaussian", "diagnosis", "bayes", "severity", "score", "pathwise", "training", "dynamic-graph"])
def test_bundled_fixture_is_valid(name):
    p = bundled(name)
    for d in p.diagrams.values():
        assert d.validate() == []

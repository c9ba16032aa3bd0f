"""Parameterized diagrams and gradients of expected objectives.

The expected objective is ``L(theta) = E[f(Y, R)]`` where ``(X, R) ~ rho``
and ``Y`` is the external output of the diagram run on ``X``.  Its gradient
splits into one covector per parameterized vertex.  Monte Carlo estimates
use two local rules:

* score vertices contribute ``(J - baseline) * grad_theta log p(b | a)``
  with ``J`` the realized objective of the whole trace;
* pathwise vertices contribute ``dJ/db * db/dtheta`` at fixed noise, with
  ``dJ/db`` accumulated backwards through the input Jacobians of the
  downstream kernels.

For all-finite problems the same quantities are computed exactly by
contracting the joint law of the trace with the objective and the local
score tensors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import softmax

from .colors import ColoredDiagram, InterfaceSystem, interface_expand
from .diagram import Diagram, Port
from .kernels import DeterministicMap, FiniteTable, GaussianLinear, Kernel, KernelError, SamplerDensity, _split_real, _stack_real
from .library import Objective
from .spaces import (
    cardinality,
    enumerate_points,
    is_finite,
    is_real,
    point_at,
    point_index,
    profile_space,
    real_dim,
)
from .trace import _contract, trace_exact

__all__ = [
    "LearnError",
    "ParamKernel",
    "FiniteLogitTable",
    "ScoreFamily",
    "PathwiseFamily",
    "affine_gaussian_family",
    "ParamDiagram",
    "ObjectiveSpec",
    "GradEstimate",
    "TrainResult",
    "expected_objective_mc",
    "expected_objective_exact",
    "sample_gradients",
    "per_sample_objectives",
    "grad_reverse_mode_mc",
    "grad_exact_enumeration",
    "grad_exact_q",
    "estimator_expectation_exact",
    "validate_pathwise_admissibility",
    "train_sgd",
    "central_difference",
]


class LearnError(RuntimeError):
    pass


# -- parameterized kernels -------------------------------------------------


class ParamKernel(Kernel):
    """A family ``theta -> k_theta`` with fixed profiles and a constant color."""

    kind = "abstract"

    def __init__(self, source, target, theta_dim: int, **kw):
        super().__init__(source, target, **kw)
        self.theta_dim = int(theta_dim)

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape != (self.theta_dim,):
            raise LearnError(f"{self!r} expects {self.theta_dim} parameters, got {theta.shape[0]}")
        return theta

    def at(self, theta) -> Kernel:
        raise NotImplementedError

    def sample(self, x, rng):
        raise LearnError(f"{self!r} is a parameterized family; instantiate it first")

    def score_batch(self, theta, xs: Sequence, ys: Sequence) -> np.ndarray:
        """Per-sample ``grad_theta log p(y | x)`` stacked into shape (n, theta_dim)."""
        raise LearnError(f"{self!r} has no score function")

    def score_tensor(self, theta) -> np.ndarray:
        """``grad_theta log p`` over all (input, output) points, shaped like the kernel tensor plus one axis."""
        if not self.is_finite:
            raise LearnError(f"{self!r} is not finite")
        xs = list(enumerate_points(self.in_space))
        ys = list(enumerate_points(self.out_space))
        pairs_x = [x for x in xs for _ in ys]
        pairs_y = [y for _ in xs for y in ys]
        s = self.score_batch(theta, pairs_x, pairs_y)
        sizes = tuple(cardinality(o.space) for o in self.source + self.target)
        return s.reshape(sizes + (self.theta_dim,))


class FiniteLogitTable(ParamKernel):
    """Rows are normalized exponentials of the logits ``theta.reshape(n_in, n_out)``."""

    kind = "score"

    def __init__(self, source, target, **kw):
        tmp = Kernel(source, target)
        if not tmp.is_finite:
            raise LearnError("logit tables need finite spaces")
        self.n_in, self.n_out = cardinality(tmp.in_space), cardinality(tmp.out_space)
        super().__init__(source, target, self.n_in * self.n_out, **kw)

    def probs(self, theta) -> np.ndarray:
        return softmax(self.check_theta(theta).reshape(self.n_in, self.n_out), axis=1)

    def at(self, theta) -> FiniteTable:
        return FiniteTable(self.source, self.target, self.probs(theta), name=self.name, color=self.color)

    def score_batch(self, theta, xs, ys):
        p = self.probs(theta)
        rows = np.fromiter((point_index(self.in_space, x) for x in xs), dtype=np.int64, count=len(xs))
        cols = np.fromiter((point_index(self.out_space, y) for y in ys), dtype=np.int64, count=len(ys))
        n = len(xs)
        s = np.zeros((n, self.n_in, self.n_out))
        s[np.arange(n), rows, :] = -p[rows]
        s[np.arange(n), rows, cols] += 1.0
        return s.reshape(n, -1)


class ScoreFamily(ParamKernel):
    """A density-bearing family given by its sampler, log-density and score."""

    kind = "score"

    def __init__(self, source, target, theta_dim, sample, log_density, grad_log_density, *, batch_sample=None, reference=None, **kw):
        super().__init__(source, target, theta_dim, **kw)
        self._sample = sample
        self._log_density = log_density
        self._grad = grad_log_density
        self._batch_sample = batch_sample
        self._reference = reference

    def at(self, theta) -> SamplerDensity:
        theta = self.check_theta(theta)
        batch = None
        if self._batch_sample is not None:
            batch = lambda rng, xs: self._batch_sample(rng, theta, xs)  # noqa: E731
        return SamplerDensity(
            self.source,
            self.target,
            lambda rng, x: self._sample(rng, theta, x),
            lambda y, x: self._log_density(theta, y, x),
            batch_sampler=batch,
            reference=self._reference,
            name=self.name,
            color=self.color,
        )

    def log_density_at(self, theta, y, x) -> float:
        return float(self._log_density(self.check_theta(theta), y, x))

    def score_batch(self, theta, xs, ys):
        theta = self.check_theta(theta)
        out = np.empty((len(xs), self.theta_dim))
        for s, (x, y) in enumerate(zip(xs, ys)):
            out[s] = self._grad(theta, y, x)
        return out


class PathwiseFamily(ParamKernel):
    """``b = forward(theta, a, eps)`` with parameter-free noise ``eps``.

    All functions are batched over rows: ``a`` has shape (n, d_in), ``eps``
    has shape (n, d_eps); ``jac_theta`` returns (n, d_out, theta_dim) and
    ``jac_input`` returns (n, d_out, d_in).
    """

    kind = "pathwise"

    def __init__(self, source, target, theta_dim, forward, noise, jac_theta, jac_input, **kw):
        super().__init__(source, target, theta_dim, **kw)
        if not (is_real(self.in_space) and is_real(self.out_space)):
            raise LearnError("pathwise families need real spaces")
        self.d_in, self.d_out = real_dim(self.in_space), real_dim(self.out_space)
        self.forward = forward
        self.noise = noise
        self.jac_theta = jac_theta
        self.jac_input_batch = jac_input

    def at(self, theta) -> SamplerDensity:
        theta = self.check_theta(theta)

        def batch(rng, xs):
            a = _stack_real(self.source, xs)
            return _split_real(self.target, self.forward(theta, a, self.noise(rng, len(xs))))

        return SamplerDensity(self.source, self.target, lambda rng, x: batch(rng, [x])[0], None, batch_sampler=batch, name=self.name, color=self.color)


def affine_gaussian_family(source, target, noise_std, **kw) -> PathwiseFamily:
    """``b = a @ W + c + noise_std * eps`` with ``theta = (W.ravel(), c)``."""
    tmp = Kernel(source, target)
    din, dout = real_dim(tmp.in_space), real_dim(tmp.out_space)
    std = np.broadcast_to(np.asarray(noise_std, dtype=float), (dout,)).copy()

    def unpack(theta):
        return theta[: din * dout].reshape(din, dout), theta[din * dout :]

    def forward(theta, a, eps):
        W, c = unpack(theta)
        return a @ W + c + eps * std

    def noise(rng, n):
        return rng.standard_normal((n, dout))

    def jac_theta(theta, a, eps):
        n = a.shape[0]
        J = np.zeros((n, dout, din * dout + dout))
        for k in range(dout):
            J[:, k, k : din * dout : dout] = a
            J[:, k, din * dout + k] = 1.0
        return J

    def jac_input(theta, a, eps):
        W, _ = unpack(theta)
        return np.broadcast_to(W.T, (a.shape[0], dout, din))

    fam = PathwiseFamily(source, target, din * dout + dout, forward, noise, jac_theta, jac_input, **kw)
    fam.spec = {"family": "affine-gaussian", "args": {"noise_std": std.tolist()}}
    return fam


# -- parameterized diagrams ----------------------------------------------


class ParamDiagram:
    """A diagram whose parameterized vertices are labelled by :class:`ParamKernel` families.

    The total parameter vector concatenates the vertex blocks in vertex-id
    order.
    """

    def __init__(self, shape: Diagram, interfaces: InterfaceSystem | None = None):
        self.shape = shape
        self.interfaces = interfaces
        if isinstance(shape, ColoredDiagram):
            self.expanded_shape = interface_expand(shape, interfaces or shape.interfaces)
        else:
            shape.require_valid()
            self.expanded_shape = shape
        self.params: dict[str, ParamKernel] = {v: k for v, k in sorted(shape.vertices.items()) if isinstance(k, ParamKernel)}
        self.layout: dict[str, slice] = {}
        pos = 0
        for v, k in self.params.items():
            self.layout[v] = slice(pos, pos + k.theta_dim)
            pos += k.theta_dim
        self.theta_dim = pos

    def __repr__(self):
        return f"ParamDiagram({len(self.shape.vertices)} vertices, theta_dim={self.theta_dim})"

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape != (self.theta_dim,):
            raise LearnError(f"parameter vector must have length {self.theta_dim}, got {theta.shape[0]}")
        return theta

    def split(self, theta) -> dict[str, np.ndarray]:
        theta = self.check_theta(theta)
        return {v: theta[s] for v, s in self.layout.items()}

    def instantiate(self, theta) -> Diagram:
        parts = self.split(theta)
        return self.shape.with_kernels({v: self.params[v].at(parts[v]) for v in self.params})

    def expanded(self, theta) -> Diagram:
        parts = self.split(theta)
        return self.expanded_shape.with_kernels({v: self.params[v].at(parts[v]) for v in self.params})


@dataclass
class ObjectiveSpec:
    """Objective kernel data: ``f(outputs, reference)`` and the law ``rho`` of (input, reference).

    ``rho_sampler(rng, n)`` returns lists ``(xs, rs)``; ``rho_exact`` lists
    ``(x, r, probability)`` triples for finite problems.
    """

    f: Objective
    rho_sampler: Callable | None = None
    rho_exact: list | None = None
    ref_profile: tuple = ()
    in_profile: tuple = ()
    rho_spec: dict | None = None

    def sample_rho(self, rng, n: int):
        if self.rho_sampler is not None:
            return self.rho_sampler(rng, n)
        if self.rho_exact is None:
            raise LearnError("objective has no data law")
        probs = np.array([p for _, _, p in self.rho_exact])
        idx = rng.choice(len(probs), size=n, p=probs / probs.sum())
        return [self.rho_exact[i][0] for i in idx], [self.rho_exact[i][1] for i in idx]


@dataclass
class GradEstimate:
    per_vertex: dict
    flat: np.ndarray
    stderr: np.ndarray
    n_samples: int
    objective: float = float("nan")
    objective_stderr: float = float("nan")
    layout: dict = field(default_factory=dict)

    def records(self) -> list[dict]:
        out = []
        for v, s in self.layout.items():
            for c in range(s.stop - s.start):
                out.append({"vertex": v, "coord": c, "value": float(self.flat[s.start + c]), "stderr": float(self.stderr[s.start + c])})
        return out


def _mean_se(a: np.ndarray):
    n = a.shape[0]
    mean = a.mean(axis=0)
    se = a.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.full_like(mean, np.inf)
    return mean, se


# -- forward and reverse passes ----------------------------------------------


def _sources(d: Diagram, v: str):
    ext = {p: m for m, p in enumerate(d.inputs)}
    out = []
    for q in range(len(d.vertices[v].source)):
        w = d.wire_into(Port(v, q))
        out.append(("y", w.src.vertex, w.src.slot) if w is not None else ("x", ext[Port(v, q)]))
    return out


@dataclass
class _Pass:
    inputs: dict
    outputs: dict
    arrays: dict  # pathwise vertex -> (a, eps)
    ys: list
    rs: list
    J: np.ndarray


def _forward(pd: ParamDiagram, theta, obj: ObjectiveSpec, n: int, rng, xs=None, rs=None) -> _Pass:
    parts = pd.split(theta)
    d = pd.expanded_shape
    if xs is None:
        xs, rs = obj.sample_rho(rng, n)
    if rs is None:
        rs = [()] * n
    n = len(xs)
    inst = {v: pd.params[v].at(parts[v]) for v in pd.params if pd.params[v].kind != "pathwise"}
    inputs, outputs, arrays = {}, {}, {}
    for v in d.topo_sort():
        cols = []
        for s in _sources(d, v):
            cols.append([x[s[1]] for x in xs] if s[0] == "x" else [o[s[2]] for o in outputs[s[1]]])
        a = list(zip(*cols)) if cols else [()] * n
        inputs[v] = a
        fam = pd.params.get(v)
        if fam is not None and fam.kind == "pathwise":
            A = _stack_real(fam.source, a)
            E = fam.noise(rng, n)
            B = fam.forward(parts[v], A, E)
            arrays[v] = (A, E)
            outputs[v] = _split_real(fam.target, B)
        else:
            k = inst.get(v, d.vertices[v])
            outputs[v] = [tuple(o) for o in k.sample_many(a, rng)]
    ys = [tuple(outputs[p.vertex][s][p.slot] for p in d.outputs) for s in range(n)]
    J = obj.f.many(ys, rs)
    return _Pass(inputs, outputs, arrays, ys, list(rs), J)


def _region(pd: ParamDiagram) -> set[str]:
    d = pd.expanded_shape
    region = set()
    for v, k in pd.params.items():
        if k.kind == "pathwise":
            region |= {v} | d.descendants(v)
    return region


def _differentiable(pd: ParamDiagram, v: str) -> bool:
    k = pd.expanded_shape.vertices[v]
    if isinstance(k, ParamKernel):
        return k.kind == "pathwise"
    if isinstance(k, GaussianLinear):
        return True
    if isinstance(k, DeterministicMap):
        return k.jacobian is not None
    return False


def validate_pathwise_admissibility(pd: ParamDiagram, obj: ObjectiveSpec | None) -> list[str]:
    d = pd.expanded_shape
    report = []
    for v, k in pd.params.items():
        if k.kind != "pathwise":
            continue
        for u in sorted(d.descendants(v)):
            if not _differentiable(pd, u):
                report.append(f"pathwise-inadmissible: vertex {v!r} reaches {u!r}, which has no input Jacobian")
        reach = {v} | d.descendants(v)
        for p in d.outputs:
            if p.vertex in reach and not is_real(d.out_obj(p).space):
                report.append(f"pathwise-inadmissible: vertex {v!r} reaches non-real external output {p}")
        if any(p.vertex in reach for p in d.outputs) and (obj is None or obj.f.grad_output is None):
            report.append(f"pathwise-inadmissible: objective has no output gradient for vertex {v!r}")
    return report


def _jac_in(pd: ParamDiagram, v: str, parts, fw: _Pass) -> np.ndarray:
    """Input Jacobians of vertex ``v`` for every sample, shape (n, d_out, d_in)."""
    k = pd.expanded_shape.vertices[v]
    n = len(fw.J)
    if isinstance(k, ParamKernel):
        A, E = fw.arrays[v]
        return np.asarray(k.jac_input_batch(parts[v], A, E))
    if isinstance(k, GaussianLinear):
        return np.broadcast_to(k.weight.T, (n,) + k.weight.T.shape)
    mats = [k.jac_input(x, y) for x, y in zip(fw.inputs[v], fw.outputs[v])]
    return np.stack(mats)


def _slot_dims(profile) -> list[int]:
    return [real_dim(o.space) for o in profile]


def _pathwise_grads(pd: ParamDiagram, parts, obj: ObjectiveSpec, fw: _Pass) -> dict[str, np.ndarray]:
    region = _region(pd)
    if not region:
        return {}
    blockers = validate_pathwise_admissibility(pd, obj)
    if blockers:
        raise LearnError("; ".join(blockers))
    d = pd.expanded_shape
    n = len(fw.J)
    # gradient of f at each sample, split over external output slots
    G = np.stack([np.asarray(obj.f.grad_output(y, r), dtype=float).reshape(-1) for y, r in zip(fw.ys, fw.rs)])
    adj: dict[Port, np.ndarray] = {}
    pos = 0
    for p in d.outputs:
        obj_p = d.out_obj(p)
        if p.vertex in region:
            dim = real_dim(obj_p.space)
            adj[p] = G[:, pos : pos + dim]
            pos += dim
        elif is_real(obj_p.space):
            pos += real_dim(obj_p.space)
    grads = {}
    for v in reversed(d.topo_sort()):
        if v not in region:
            continue
        k = d.vertices[v]
        blocks = [adj.get(Port(v, p), np.zeros((n, dim))) for p, dim in enumerate(_slot_dims(k.target))]
        g_out = np.concatenate(blocks, axis=1) if blocks else np.zeros((n, 0))
        if isinstance(k, ParamKernel):
            A, E = fw.arrays[v]
            grads[v] = np.einsum("nk,nkp->np", g_out, k.jac_theta(parts[v], A, E))
        if not k.source:
            continue
        g_in = np.einsum("nk,nki->ni", g_out, _jac_in(pd, v, parts, fw))
        pos = 0
        for q, dim in enumerate(_slot_dims(k.source)):
            w = d.wire_into(Port(v, q))
            if w is not None:
                adj[w.src] = adj.get(w.src, 0) + g_in[:, pos : pos + dim]
            pos += dim
    return grads


def _score_grads(pd: ParamDiagram, parts, fw: _Pass, baseline: float) -> dict[str, np.ndarray]:
    out = {}
    centered = (fw.J - baseline)[:, None]
    for v, k in pd.params.items():
        if k.kind == "score":
            out[v] = centered * k.score_batch(parts[v], fw.inputs[v], fw.outputs[v])
    return out


def sample_gradients(pd: ParamDiagram, theta, obj: ObjectiveSpec, n: int, rng, *, baseline: float = 0.0, xs=None, rs=None):
    """Per-sample gradient contributions, shape (n, theta_dim), and the realized objectives."""
    theta = pd.check_theta(theta)
    parts = pd.split(theta)
    fw = _forward(pd, theta, obj, n, rng, xs, rs)
    n = len(fw.J)
    per = {}
    per.update(_score_grads(pd, parts, fw, baseline))
    per.update(_pathwise_grads(pd, parts, obj, fw))
    flat = np.zeros((n, pd.theta_dim))
    for v, s in pd.layout.items():
        flat[:, s] = per[v]
    return flat, fw.J


def per_sample_objectives(pd: ParamDiagram, theta, obj: ObjectiveSpec, n: int, rng, xs=None, rs=None) -> np.ndarray:
    """Realized objectives; with a freshly seeded ``rng`` this freezes all noise (common random numbers)."""
    return _forward(pd, pd.check_theta(theta), obj, n, rng, xs, rs).J


def grad_reverse_mode_mc(pd: ParamDiagram, theta, obj: ObjectiveSpec, n: int, rng, *, baseline: float = 0.0) -> GradEstimate:
    if n < 2:
        raise LearnError("need at least two samples")
    flat, J = sample_gradients(pd, theta, obj, n, rng, baseline=baseline)
    mean, se = _mean_se(flat)
    jm, jse = _mean_se(J)
    per = {v: mean[s] for v, s in pd.layout.items()}
    return GradEstimate(per, mean, se, n, float(jm), float(jse), dict(pd.layout))


def expected_objective_mc(pd: ParamDiagram, theta, obj: ObjectiveSpec, n: int, rng) -> tuple[float, float]:
    if n < 2:
        raise LearnError("need at least two samples")
    J = per_sample_objectives(pd, theta, obj, n, rng)
    m, s = _mean_se(J)
    return float(m), float(s)


# -- exact enumeration -----------------------------------------------------


def _require_exact(pd: ParamDiagram, obj: ObjectiveSpec):
    if obj.rho_exact is None:
        raise LearnError("exact evaluation needs a finite data law")
    if not pd.expanded_shape.is_finite:
        raise LearnError("exact evaluation needs every kernel to be finite")


def _objective_tensor(d: Diagram, f: Objective, r) -> np.ndarray:
    spaces = [d.out_obj(p).space for p in d.outputs]
    sizes = [cardinality(s) for s in spaces]
    pts = [list(enumerate_points(s)) for s in spaces]
    F = np.empty(sizes)
    for idx in np.ndindex(*sizes):
        F[idx] = f(tuple(pts[m][i] for m, i in enumerate(idx)), r)
    return F


def _vertex_labels(d: Diagram, v: str, out_label, in_label, fixed):
    k = d.vertices[v]
    labs, idx = [], []
    for q in range(len(k.source)):
        port = Port(v, q)
        w = d.wire_into(port)
        lab = out_label[w.src] if w is not None else in_label[port]
        if lab in fixed:
            idx.append(fixed[lab])
        else:
            idx.append(slice(None))
            labs.append(lab)
    labs += [out_label[Port(v, p)] for p in range(len(k.target))]
    idx += [slice(None)] * (len(k.target) + 1)
    return labs, tuple(idx)


def _exact_terms(pd: ParamDiagram, theta, obj: ObjectiveSpec, use_q: bool = False):
    theta = pd.check_theta(theta)
    _require_exact(pd, obj)
    parts = pd.split(theta)
    d = pd.expanded(theta)
    order = d.topo_sort()
    S = {v: pd.params[v].score_tensor(parts[v]) for v in pd.params}
    total = 0.0
    grad = np.zeros(pd.theta_dim)
    for x, r, rho in obj.rho_exact:
        joint, labels, out_label, in_label, fixed = _contract(d, order, x)
        F = _objective_tensor(d, obj.f, r)
        out_labs = [out_label[p] for p in d.outputs]
        total += rho * float(np.einsum(joint, labels, F, out_labs, []))
        K = max(labels + list(in_label.values()), default=0) + 1
        for v, s in pd.layout.items():
            vl, idx = _vertex_labels(d, v, out_label, in_label, fixed)
            Sv = S[v][idx]
            if not use_q:
                grad[s] += rho * np.einsum(joint, labels, F, out_labs, Sv, vl + [K], [K])
                continue
            desc = d.descendants(v)
            nd = [l for p, l in out_label.items() if p.vertex not in desc and l in labels]
            PF = np.einsum(joint, labels, F, out_labs, nd)
            P = np.einsum(joint, labels, nd)
            Q = np.divide(PF, P, out=np.zeros_like(PF), where=P > 0)
            grad[s] += rho * np.einsum(P * Q, nd, Sv, vl + [K], [K])
    return total, grad


def expected_objective_exact(pd: ParamDiagram, theta, obj: ObjectiveSpec) -> float:
    theta = pd.check_theta(theta)
    _require_exact(pd, obj)
    d = pd.expanded(theta)
    total = 0.0
    for x, r, rho in obj.rho_exact:
        _, marg = trace_exact(d, x)
        F = _objective_tensor(d, obj.f, r).reshape(-1)
        total += rho * float(marg.probs @ F)
    return total


def grad_exact_enumeration(pd: ParamDiagram, theta, obj: ObjectiveSpec) -> np.ndarray:
    """Exact gradient: the joint law contracted with the objective and each vertex's score tensor."""
    return _exact_terms(pd, theta, obj)[1]


def grad_exact_q(pd: ParamDiagram, theta, obj: ObjectiveSpec) -> np.ndarray:
    """Exact gradient assembled from ``Q_u * grad log p_u``.

    ``Q_u`` is the conditional expectation of the objective given every
    non-descendant trace variable of ``u`` (``u`` included), the input and
    the reference.
    """
    return _exact_terms(pd, theta, obj, use_q=True)[1]


def estimator_expectation_exact(pd: ParamDiagram, theta, obj: ObjectiveSpec, baseline: float = 0.0) -> np.ndarray:
    """Exact expectation of the Monte Carlo per-sample estimator, by enumerating every trace.

    The per-sample contributions come from the same code path as
    :func:`sample_gradients`; only the sampling is replaced by enumeration.
    """
    theta = pd.check_theta(theta)
    _require_exact(pd, obj)
    parts = pd.split(theta)
    d = pd.expanded(theta)
    out = np.zeros(pd.theta_dim)
    for x, r, rho in obj.rho_exact:
        joint, _ = trace_exact(d, x)
        outcomes = list(joint.items())
        if not outcomes:
            continue
        probs = np.array([p for _, p in outcomes])
        vouts = {v: [o[v] for o, _ in outcomes] for v in d.vertices}
        xs = [x] * len(outcomes)
        inputs = {}
        for v in d.vertices:
            cols = [[xx[s[1]] for xx in xs] if s[0] == "x" else [o[s[2]] for o in vouts[s[1]]] for s in _sources(d, v)]
            inputs[v] = list(zip(*cols)) if cols else [()] * len(outcomes)
        ys = [tuple(vouts[p.vertex][s][p.slot] for p in d.outputs) for s in range(len(outcomes))]
        fw = _Pass(inputs, vouts, {}, ys, [r] * len(outcomes), obj.f.many(ys, [r] * len(outcomes)))
        per = _score_grads(pd, parts, fw, baseline)
        for v, s in pd.layout.items():
            out[s] += rho * (probs @ per[v])
    return out


def central_difference(fn: Callable, theta, h: float = 1e-5) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (fn(theta + e) - fn(theta - e)) / (2 * h)
    return g


# -- training ----------------------------------------------------------------


@dataclass
class TrainResult:
    thetas: np.ndarray
    objectives: list
    exact_objectives: list | None = None


def train_sgd(pd: ParamDiagram, theta0, obj: ObjectiveSpec, steps: int, step_size: float, n: int, rng, *, exact: bool = False, baseline: float = 0.0) -> TrainResult:
    """Plain gradient descent with Monte Carlo or exact gradients.

    ``objectives`` holds the objective estimate at each iterate (the exact
    value when ``exact`` is set, else the Monte Carlo mean of the step's
    samples); ``exact_objectives`` is filled whenever exact evaluation is
    possible.
    """
    theta = pd.check_theta(theta0).copy()
    can_exact = obj.rho_exact is not None and pd.expanded_shape.is_finite
    thetas, objs, exacts = [theta.copy()], [], []
    for _ in range(steps):
        if exact:
            val, g = _exact_terms(pd, theta, obj)
            objs.append(val)
        else:
            est = grad_reverse_mode_mc(pd, theta, obj, n, rng, baseline=baseline)
            g = est.flat
            objs.append(est.objective)
        if can_exact:
            exacts.append(expected_objective_exact(pd, theta, obj))
        theta = theta - step_size * g
        thetas.append(theta.copy())
    if exact:
        objs.append(expected_objective_exact(pd, theta, obj))
    else:
        objs.append(expected_objective_mc(pd, theta, obj, max(n, 2), rng)[0])
    if can_exact:
        exacts.append(expected_objective_exact(pd, theta, obj))
    return TrainResult(np.array(thetas), objs, exacts if can_exact else None)

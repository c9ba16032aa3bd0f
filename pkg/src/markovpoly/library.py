"""Named kernel and objective constructors.

Project files refer to non-tabular kernels by builtin name plus numeric
arguments; every constructor here records that reference in ``kernel.spec``
so a loaded project can be written back out unchanged.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, log_expit, softmax

from .kernels import DeterministicMap, FiniteTable, GaussianLinear, Kernel, KernelError, SamplerDensity, identity_kernel
from .spaces import Finite, Obj, cardinality, is_real, real_dim, unflatten_real
from .kernels import _split_real, _stack_real

__all__ = [
    "KERNEL_BUILTINS",
    "OBJECTIVE_BUILTINS",
    "make_builtin",
    "softmax_table",
    "logistic_interface",
    "noisy_logistic_interface",
    "std_normal",
    "affine_map",
    "copy_map",
    "label_map",
    "Objective",
    "make_objective",
]

_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(80)
_GH_WEIGHTS = _GH_WEIGHTS / _GH_WEIGHTS.sum()


def _spec(name, args):
    return {"builtin": name, "args": args}


def _single(profile: Sequence[Obj], what: str) -> Obj:
    if len(profile) != 1:
        raise KernelError(f"{what} needs exactly one slot")
    return profile[0]


def softmax_table(source, target, logits, **kw) -> FiniteTable:
    logits = np.asarray(logits, dtype=float)
    k = FiniteTable(source, target, softmax(logits.reshape(cardinality(_prod(source)), -1), axis=1), **kw)
    k.spec = _spec("softmax-table", {"logits": logits.reshape(-1).tolist()})
    return k


def _prod(profile):
    from .spaces import profile_space

    return profile_space(profile)


def logistic_interface(source, target, scale: float = 1.0, shift: float = 0.0, **kw) -> SamplerDensity:
    """Real scalar ``z`` to a two-point space: first point with probability sigma(scale*z+shift)."""
    src, dst = _single(source, "logistic-interface"), _single(target, "logistic-interface")
    if real_dim(src.space) != 1 or cardinality(dst.space) != 2:
        raise KernelError("logistic-interface maps a real scalar to a two-point space")

    def logit(x):
        return scale * x[0][0] + shift

    def sampler(rng, x):
        return (0 if rng.random() < expit(logit(x)) else 1,)

    def batch(rng, xs):
        z = _stack_real(source, xs)[:, 0] * scale + shift
        u = rng.random(len(xs))
        return [(int(b),) for b in (u >= expit(z))]

    def logd(y, x):
        t = logit(x)
        return float(log_expit(t) if y[0] == 0 else log_expit(-t))

    return SamplerDensity(source, target, sampler, logd, batch_sampler=batch, spec=_spec("logistic-interface", {"scale": scale, "shift": shift}), **kw)


def noisy_logistic_interface(source, target, noise_std: float, scale: float = 1.0, shift: float = 0.0, **kw) -> SamplerDensity:
    """The logistic interface applied after additive Gaussian noise, integrated by Gauss-Hermite quadrature."""
    src, dst = _single(source, "noisy-logistic"), _single(target, "noisy-logistic")
    if real_dim(src.space) != 1 or cardinality(dst.space) != 2:
        raise KernelError("noisy-logistic maps a real scalar to a two-point space")

    def p0(z):
        return float(np.dot(_GH_WEIGHTS, expit(scale * (z + noise_std * _GH_NODES) + shift)))

    def sampler(rng, x):
        return (0 if rng.random() < p0(x[0][0]) else 1,)

    def batch(rng, xs):
        z = _stack_real(source, xs)[:, 0]
        p = expit(scale * (z[:, None] + noise_std * _GH_NODES[None, :]) + shift) @ _GH_WEIGHTS
        u = rng.random(len(xs))
        return [(int(b),) for b in (u >= p)]

    def logd(y, x):
        p = p0(x[0][0])
        return math.log(p) if y[0] == 0 else math.log1p(-p)

    args = {"noise_std": noise_std, "scale": scale, "shift": shift}
    return SamplerDensity(source, target, sampler, logd, batch_sampler=batch, spec=_spec("noisy-logistic", args), **kw)


def std_normal(source, target, **kw) -> SamplerDensity:
    """Ignores its input and draws a standard normal vector."""
    dst = _single(target, "std-normal")
    d = real_dim(dst.space)

    def sampler(rng, x):
        return (tuple(float(v) for v in rng.standard_normal(d)),)

    def batch(rng, xs):
        return _split_real(target, rng.standard_normal((len(xs), d)))

    def logd(y, x):
        v = np.asarray(y[0], dtype=float)
        return float(-0.5 * v @ v - 0.5 * d * math.log(2 * math.pi))

    return SamplerDensity(source, target, sampler, logd, batch_sampler=batch, reference="lebesgue", spec=_spec("std-normal", {}), **kw)


def affine_map(source, target, weight, bias, **kw) -> DeterministicMap:
    """Deterministic ``y = x @ weight + bias`` between real profiles."""
    from .spaces import profile_space

    din, dout = real_dim(profile_space(source)), real_dim(profile_space(target))
    W = np.asarray(weight, dtype=float).reshape(din, dout)
    b = np.asarray(bias, dtype=float).reshape(dout)
    out_space = profile_space(target)

    def fn(x):
        return unflatten_real(out_space, _stack_real(source, [x])[0] @ W + b)

    def batch(xs):
        return _split_real(target, _stack_real(source, xs) @ W + b)

    args = {"weight": W.tolist(), "bias": b.tolist()}
    return DeterministicMap(source, target, fn, lambda x: W.T, batch_fn=batch, spec=_spec("affine", args), **kw)


def copy_map(source, target, **kw) -> DeterministicMap:
    """One input slot duplicated onto every output slot."""
    src = _single(source, "copy")
    for o in target:
        if o.space != src.space:
            raise KernelError("copy outputs must share the input space")
    n = len(target)
    jac = None
    if is_real(src.space):
        d = real_dim(src.space)
        J = np.vstack([np.eye(d)] * n)
        jac = lambda x: J  # noqa: E731
    return DeterministicMap(source, target, lambda x: (x[0],) * n, jac, batch_fn=lambda xs: [(x[0],) * n for x in xs], spec=_spec("copy", {}), **kw)


def label_map(source, target, mapping: dict, **kw) -> DeterministicMap:
    """Deterministic map between finite single-slot spaces given on labels."""
    src, dst = _single(source, "label-map"), _single(target, "label-map")
    if not (isinstance(src.space, Finite) and isinstance(dst.space, Finite)):
        raise KernelError("label maps need plain finite spaces")
    table = {src.space.index(a): dst.space.index(b) for a, b in mapping.items()}
    if set(table) != set(range(src.space.size)):
        raise KernelError("label map must be total")
    return DeterministicMap(source, target, lambda x: (table[x[0]],), spec=_spec("label-map", {"map": dict(mapping)}), **kw)


def treatment_rule(source, target, **kw) -> DeterministicMap:
    k = label_map(source, target, {"bacterial": "antibiotic", "viral": "supportive"}, **kw)
    k.spec = _spec("treatment-rule", {})
    return k


def _identity(source, target, **kw) -> Kernel:
    obj = _single(source, "identity")
    if tuple(target) != (obj,):
        raise KernelError("identity needs equal source and target")
    return identity_kernel(obj).replace(**kw) if kw else identity_kernel(obj)


KERNEL_BUILTINS: dict[str, Callable] = {
    "identity": _identity,
    "affine": affine_map,
    "softmax-table": softmax_table,
    "logistic-interface": logistic_interface,
    "noisy-logistic": noisy_logistic_interface,
    "treatment-rule": treatment_rule,
    "label-map": label_map,
    "std-normal": std_normal,
    "copy": copy_map,
}


def make_builtin(builtin: str, source, target, args: dict | None = None, **kw) -> Kernel:
    try:
        ctor = KERNEL_BUILTINS[builtin]
    except KeyError:
        raise KernelError(f"unknown builtin kernel {builtin!r}; known: {sorted(KERNEL_BUILTINS)}") from None
    return ctor(source, target, **(args or {}), **kw)


# -- objectives ----------------------------------------------------------


class Objective:
    """A scalar objective ``f(outputs, reference)`` with an optional output gradient.

    ``grad_output`` returns d f / d(flattened real output coordinates); it
    only exists when every output slot is real.
    """

    def __init__(self, fn, grad_output=None, batch_fn=None, spec=None):
        self.fn = fn
        self.grad_output = grad_output
        self.batch_fn = batch_fn
        self.spec = spec

    def __call__(self, y, r) -> float:
        return float(self.fn(y, r))

    def many(self, ys, rs) -> np.ndarray:
        if self.batch_fn is not None:
            return np.asarray(self.batch_fn(ys, rs), dtype=float)
        return np.fromiter((self.fn(y, r) for y, r in zip(ys, rs)), dtype=float, count=len(ys))


def _flat(v) -> np.ndarray:
    if isinstance(v, (tuple, list)) and v and isinstance(v[0], (tuple, list)):
        return np.concatenate([np.asarray(c, dtype=float).ravel() for c in v])
    return np.asarray(v, dtype=float).ravel()


def squared_error(weight: float = 1.0) -> Objective:
    """``weight * |y - r|^2`` over all real coordinates of outputs and reference."""

    def fn(y, r):
        d = _flat(y) - _flat(r)
        return weight * float(d @ d)

    def grad(y, r):
        return 2.0 * weight * (_flat(y) - _flat(r))

    def batch(ys, rs):
        Y = np.array([_flat(y) for y in ys])
        R = np.array([_flat(r) for r in rs])
        return weight * np.sum((Y - R) ** 2, axis=1)

    return Objective(fn, grad, batch, spec=_spec("squared-error", {"weight": weight}))


def mismatch() -> Objective:
    """0-1 loss between finite outputs and reference points, slot by slot, summed."""

    def fn(y, r):
        return float(sum(int(a) != int(b) for a, b in zip(y, r)))

    return Objective(fn, spec=_spec("mismatch", {}))


def indicator(slot: int = 0, value: int = 0) -> Objective:
    def fn(y, r):
        return 1.0 if int(y[slot]) == value else 0.0

    return Objective(fn, spec=_spec("indicator", {"slot": slot, "value": value}))


def table_objective(values) -> Objective:
    """``values[index of (outputs, reference)]`` for all-finite outputs and reference, row-major."""
    vals = np.asarray(values, dtype=float)

    def fn(y, r):
        idx = tuple(int(v) for v in tuple(y) + tuple(r))
        return float(vals[idx])

    return Objective(fn, spec=_spec("table", {"values": vals.tolist()}))


def weighted_count(weights) -> Objective:
    """``sum_s weights[s] * y_s`` for finite output indices ``y_s``."""
    w = np.asarray(weights, dtype=float)

    def fn(y, r):
        return float(sum(wi * int(v) for wi, v in zip(w, y)))

    return Objective(fn, spec=_spec("weighted-count", {"weights": w.tolist()}))


OBJECTIVE_BUILTINS: dict[str, Callable] = {
    "squared-error": squared_error,
    "mismatch": mismatch,
    "indicator": indicator,
    "table": table_objective,
    "weighted-count": weighted_count,
}


def make_objective(name: str, args: dict | None = None) -> Objective:
    try:
        ctor = OBJECTIVE_BUILTINS[name]
    except KeyError:
        raise KernelError(f"unknown objective {name!r}; known: {sorted(OBJECTIVE_BUILTINS)}") from None
    return ctor(**(args or {}))

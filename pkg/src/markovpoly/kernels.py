"""Markov kernels between ordered profiles of objects.

A kernel maps an input value (a tuple with one component per source slot)
to a probability measure on output values (a tuple with one component per
target slot).  Four concrete representations are provided; each exposes the
capabilities the rest of the package needs:

=================  ==========  =========  ===========  ===================
representation     enumerate   sample     density      input Jacobian
=================  ==========  =========  ===========  ===================
FiniteTable        yes         yes        counting     no
DeterministicMap   if finite   yes        no           if registered
SamplerDensity     if finite   yes        if given     no
GaussianLinear     no          yes        Lebesgue     yes
=================  ==========  =========  ===========  ===================
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .spaces import (
    PROB_TOL,
    Finite,
    Obj,
    Product,
    RealVec,
    SpaceDesc,
    cardinality,
    enumerate_points,
    flatten_real,
    format_value,
    is_finite,
    is_real,
    point_at,
    point_index,
    profile_space,
    real_dim,
    unflatten_real,
    value_in_space,
)

__all__ = [
    "KernelError",
    "CompositionError",
    "FiniteDist",
    "Kernel",
    "FiniteTable",
    "DeterministicMap",
    "SamplerDensity",
    "GaussianLinear",
    "identity_kernel",
    "dirac_of_map",
    "compose_unary",
    "apply_exact",
    "sample",
    "log_density",
    "slot_sizes",
    "exact_row",
    "kernels_equal",
]

NEG_INFINITY = -math.inf


class KernelError(ValueError):
    pass


class CompositionError(KernelError):
    """The pair of representations is not closed under exact composition."""


@dataclass(frozen=True)
class FiniteDist:
    space: SpaceDesc
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.shape[0] != cardinality(self.space):
            raise KernelError("probability vector does not match the space")
        if np.any(p < -PROB_TOL) or abs(p.sum() - 1.0) > PROB_TOL * max(1, p.size):
            raise KernelError(f"not a probability vector (sum={p.sum()!r})")
        object.__setattr__(self, "probs", p)

    def prob(self, value) -> float:
        return float(self.probs[point_index(self.space, value)])

    def items(self):
        for idx, v in enumerate(enumerate_points(self.space)):
            yield v, float(self.probs[idx])

    def labelled(self) -> list:
        return [(format_value(self.space, v), p) for v, p in self.items()]


def slot_sizes(profile: Sequence[Obj]) -> tuple[int, ...]:
    return tuple(cardinality(o.space) for o in profile)


def _slot_bounds(profile: Sequence[Obj]) -> list[tuple[int, int]]:
    out, pos = [], 0
    for o in profile:
        n = real_dim(o.space)
        out.append((pos, pos + n))
        pos += n
    return out


def _stack_real(profile: Sequence[Obj], xs: Sequence) -> np.ndarray:
    space = profile_space(profile)
    if not xs:
        return np.zeros((0, real_dim(space)))
    if all(isinstance(o.space, RealVec) for o in profile):
        try:
            return np.asarray(xs, dtype=float).reshape(len(xs), -1)
        except ValueError:
            pass
    return np.stack([flatten_real(space, x) for x in xs])


def _split_real(profile: Sequence[Obj], rows: np.ndarray) -> list[tuple]:
    bounds = _slot_bounds(profile)
    if all(isinstance(o.space, RealVec) for o in profile):
        return [tuple(tuple(r[a:b]) for a, b in bounds) for r in rows.tolist()]
    space = profile_space(profile)
    return [unflatten_real(space, r) for r in rows]


class Kernel:
    """Base class; concrete kernels override the capabilities they support."""

    reference = "none"

    def __init__(self, source: Sequence[Obj], target: Sequence[Obj], *, name=None, color=None, spec=None):
        self.source = tuple(source)
        self.target = tuple(target)
        for o in self.source + self.target:
            if not isinstance(o, Obj):
                raise TypeError(f"profiles must hold Obj instances, got {o!r}")
        self.name = name
        self.color = color
        # serialization descriptor for builtin kernels, see markovpoly.library
        self.spec = spec

    # -- profile helpers --------------------------------------------------

    @property
    def in_space(self) -> Product:
        return profile_space(self.source)

    @property
    def out_space(self) -> Product:
        return profile_space(self.target)

    @property
    def is_finite(self) -> bool:
        return is_finite(self.in_space) and is_finite(self.out_space)

    def __repr__(self):
        label = self.name or type(self).__name__
        src = ",".join(o.name for o in self.source)
        dst = ",".join(o.name for o in self.target)
        return f"<{label}: ({src}) -> ({dst})>"

    def replace(self, **attrs) -> "Kernel":
        """Shallow copy with some attributes changed (name, color, source, target)."""
        new = copy.copy(self)
        for key, value in attrs.items():
            if key in ("source", "target"):
                value = tuple(value)
                old = getattr(self, key)
                if tuple(o.space for o in value) != tuple(o.space for o in old):
                    raise KernelError(f"retyping {key} must keep the underlying spaces")
            setattr(new, key, value)
        return new

    def check_input(self, x):
        if not value_in_space(x, self.in_space):
            raise KernelError(f"input {x!r} is not in the source space of {self!r}")

    # -- capabilities -----------------------------------------------------

    def sample(self, x, rng: np.random.Generator):
        raise NotImplementedError

    def sample_many(self, xs: Sequence, rng: np.random.Generator) -> list:
        return [self.sample(x, rng) for x in xs]

    @property
    def has_density(self) -> bool:
        return False

    def log_density(self, y, x) -> float:
        raise KernelError(f"{self!r} has no density")

    def to_table(self) -> "FiniteTable":
        raise CompositionError(f"{self!r} cannot be tabulated")

    def row(self, x) -> np.ndarray | None:
        """Exact output distribution at ``x`` when the target is finite, else None."""
        return None

    def jac_input(self, x, y) -> np.ndarray | None:
        """d(output)/d(input) at a realized pair, for reparameterizable kernels."""
        return None


class FiniteTable(Kernel):
    reference = "counting"

    def __init__(self, source, target, probs, **kw):
        super().__init__(source, target, **kw)
        if not self.is_finite:
            raise KernelError("FiniteTable needs finite source and target spaces")
        p = np.array(probs, dtype=float)
        shape = (cardinality(self.in_space), cardinality(self.out_space))
        if p.shape != shape:
            p = p.reshape(shape)
        if np.any(p < -PROB_TOL):
            raise KernelError("negative probability in table")
        sums = p.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > PROB_TOL * max(1, shape[1])):
            raise KernelError(f"table rows must sum to 1, got {sums}")
        p.setflags(write=False)
        self.probs = p
        self._cum = None

    def tensor(self) -> np.ndarray:
        return self.probs.reshape(slot_sizes(self.source) + slot_sizes(self.target))

    @classmethod
    def from_tensor(cls, source, target, tensor, **kw) -> "FiniteTable":
        n_in = cardinality(profile_space(source))
        return cls(source, target, np.asarray(tensor).reshape(n_in, -1), **kw)

    def sample(self, x, rng):
        return self.sample_many([x], rng)[0]

    def sample_many(self, xs, rng):
        if self._cum is None:
            cum = np.cumsum(self.probs, axis=1)
            cum[:, -1] = 1.0
            self._cum = cum
        in_space, out_space = self.in_space, self.out_space
        rows = np.fromiter((point_index(in_space, x) for x in xs), dtype=np.int64, count=len(xs))
        u = rng.random(len(xs))
        cum = self._cum[rows]
        idx = (cum < u[:, None]).sum(axis=1)
        idx = np.minimum(idx, self.probs.shape[1] - 1)
        return [point_at(out_space, int(i)) for i in idx]

    @property
    def has_density(self):
        return True

    def log_density(self, y, x) -> float:
        p = self.probs[point_index(self.in_space, x), point_index(self.out_space, y)]
        return math.log(p) if p > 0 else NEG_INFINITY

    def to_table(self):
        return self

    def row(self, x):
        return self.probs[point_index(self.in_space, x)]


class DeterministicMap(Kernel):
    """The Dirac kernel of a function ``fn(input tuple) -> output tuple``.

    ``jacobian(x)`` may be registered for real-valued maps; it returns the
    matrix d(flattened output)/d(flattened input).
    """

    def __init__(self, source, target, fn: Callable, jacobian: Callable | None = None, *, batch_fn=None, is_identity=False, **kw):
        super().__init__(source, target, **kw)
        self.fn = fn
        self.jacobian = jacobian
        self.batch_fn = batch_fn
        self.is_identity = is_identity
        self._table = None

    def sample(self, x, rng=None):
        return self.fn(x)

    def sample_many(self, xs, rng=None):
        if self.batch_fn is not None:
            return self.batch_fn(xs)
        return [self.fn(x) for x in xs]

    def to_table(self):
        if self._table is None:
            if not self.is_finite:
                raise CompositionError(f"{self!r} is not between finite spaces")
            out = self.out_space
            n_out = cardinality(out)
            pts = list(enumerate_points(self.in_space))
            m = np.zeros((len(pts), n_out))
            for r, x in enumerate(pts):
                m[r, point_index(out, self.fn(x))] = 1.0
            self._table = FiniteTable(self.source, self.target, m, name=self.name, color=self.color)
        return self._table

    def row(self, x):
        if not is_finite(self.out_space):
            return None
        r = np.zeros(cardinality(self.out_space))
        r[point_index(self.out_space, self.fn(x))] = 1.0
        return r

    def jac_input(self, x, y=None):
        if self.jacobian is None:
            return None
        return np.atleast_2d(np.asarray(self.jacobian(x), dtype=float))


class SamplerDensity(Kernel):
    """A kernel given by a sampler and (optionally) a log-density.

    ``sampler(rng, x) -> y``; ``log_density(y, x) -> float`` relative to the
    reference measure named by ``reference`` (``"counting"`` or ``"lebesgue"``).
    """

    def __init__(self, source, target, sampler: Callable, log_density: Callable | None = None, *, reference=None, batch_sampler=None, **kw):
        super().__init__(source, target, **kw)
        self.sampler = sampler
        self._log_density = log_density
        self.batch_sampler = batch_sampler
        if reference is None:
            reference = "counting" if is_finite(self.out_space) else "lebesgue"
        self.reference = reference
        self._table = None

    def sample(self, x, rng):
        return self.sampler(rng, x)

    def sample_many(self, xs, rng):
        if self.batch_sampler is not None:
            return self.batch_sampler(rng, xs)
        return [self.sampler(rng, x) for x in xs]

    @property
    def has_density(self):
        return self._log_density is not None

    def log_density(self, y, x) -> float:
        if self._log_density is None:
            raise KernelError(f"{self!r} was given without a density")
        return float(self._log_density(y, x))

    def row(self, x):
        if self._log_density is None or not is_finite(self.out_space):
            return None
        return np.array([math.exp(self._log_density(y, x)) for y in enumerate_points(self.out_space)])

    def to_table(self):
        if self._table is None:
            if not self.is_finite or self._log_density is None:
                raise CompositionError(f"{self!r} cannot be tabulated")
            rows = [self.row(x) for x in enumerate_points(self.in_space)]
            self._table = FiniteTable(self.source, self.target, np.array(rows), name=self.name, color=self.color)
        return self._table


class GaussianLinear(Kernel):
    """``y = x @ weight + bias + sqrt(cov_diag) * eps`` with standard normal ``eps``.

    ``weight`` has shape (source dim, target dim).  Zero variances give Dirac
    components.
    """

    reference = "lebesgue"

    def __init__(self, source, target, weight, bias, cov_diag, **kw):
        super().__init__(source, target, **kw)
        if not (is_real(self.in_space) and is_real(self.out_space)):
            raise KernelError("GaussianLinear needs real source and target spaces")
        din, dout = real_dim(self.in_space), real_dim(self.out_space)
        self.weight = np.array(weight, dtype=float).reshape(din, dout)
        self.bias = np.array(bias, dtype=float).reshape(dout)
        self.cov_diag = np.array(cov_diag, dtype=float).reshape(dout)
        if np.any(self.cov_diag < 0):
            raise KernelError("variances must be nonnegative")
        self._std = np.sqrt(self.cov_diag)
        for a in (self.weight, self.bias, self.cov_diag):
            a.setflags(write=False)

    def mean(self, x) -> np.ndarray:
        return flatten_real(self.in_space, x) @ self.weight + self.bias

    def sample(self, x, rng):
        return self.sample_many([x], rng)[0]

    def sample_many(self, xs, rng):
        X = _stack_real(self.source, xs)
        Y = X @ self.weight + self.bias
        eps = rng.standard_normal(Y.shape)
        Y = Y + eps * self._std
        return _split_real(self.target, Y)

    @property
    def has_density(self):
        return bool(np.all(self.cov_diag > 0))

    def log_density(self, y, x) -> float:
        if not self.has_density:
            raise KernelError(f"{self!r} has Dirac components and no Lebesgue density")
        r = flatten_real(self.out_space, y) - self.mean(x)
        return float(-0.5 * np.sum(r * r / self.cov_diag + np.log(2 * np.pi * self.cov_diag)))

    def jac_input(self, x, y=None):
        return self.weight.T.copy()


# -- constructors ------------------------------------------------------------


def identity_kernel(obj: Obj) -> DeterministicMap:
    jac = None
    if is_real(obj.space):
        d = real_dim(obj.space)
        eye = np.eye(d)
        jac = lambda x: eye  # noqa: E731
    return DeterministicMap(
        (obj,), (obj,), lambda x: x, jac, batch_fn=list, is_identity=True, name=f"id[{obj.name}]", spec={"builtin": "identity", "args": {}}
    )


def dirac_of_map(fn: Callable, source, target, jacobian=None, **kw) -> DeterministicMap:
    return DeterministicMap(source, target, fn, jacobian, **kw)


# -- composition ---------------------------------------------------------------


def _same_spaces(p: Sequence[Obj], q: Sequence[Obj]) -> bool:
    return tuple(o.space for o in p) == tuple(o.space for o in q)


def compose_unary(k: Kernel, l: Kernel) -> Kernel:
    """Chapman-Kolmogorov composite ``l . k`` (first ``k``, then ``l``)."""
    if not _same_spaces(k.target, l.source):
        raise KernelError(f"cannot compose {k!r} then {l!r}: target and source differ")
    if isinstance(l, DeterministicMap) and l.is_identity:
        return k.replace(target=l.target)
    if isinstance(k, DeterministicMap) and k.is_identity:
        return l.replace(source=k.source)
    if isinstance(k, GaussianLinear) and isinstance(l, GaussianLinear):
        w = k.weight @ l.weight
        b = k.bias @ l.weight + l.bias
        cov = l.weight.T @ np.diag(k.cov_diag) @ l.weight + np.diag(l.cov_diag)
        off = cov - np.diag(np.diag(cov))
        if np.any(off != 0.0):
            raise CompositionError("composite covariance is not diagonal")
        return GaussianLinear(k.source, l.target, w, b, np.diag(cov))
    if isinstance(k, DeterministicMap):
        f = k.fn
        if isinstance(l, DeterministicMap):
            g = l.fn
            jac = None
            if k.jacobian is not None and l.jacobian is not None:
                jac = lambda x: np.atleast_2d(l.jacobian(f(x))) @ np.atleast_2d(k.jacobian(x))  # noqa: E731
            return DeterministicMap(k.source, l.target, lambda x: g(f(x)), jac)
        ld = (lambda y, x: l.log_density(y, f(x))) if l.has_density else None
        return SamplerDensity(
            k.source,
            l.target,
            lambda rng, x: l.sample(f(x), rng),
            ld,
            reference=l.reference,
            batch_sampler=lambda rng, xs: l.sample_many(k.sample_many(xs), rng),
        )
    if isinstance(l, DeterministicMap):
        g = l.fn
        return SamplerDensity(
            k.source,
            l.target,
            lambda rng, x: g(k.sample(x, rng)),
            None,
            batch_sampler=lambda rng, xs: l.sample_many(k.sample_many(xs, rng)),
        )
    if k.is_finite and l.is_finite:
        try:
            a, b = k.to_table(), l.to_table()
        except CompositionError:
            pass
        else:
            return FiniteTable(k.source, l.target, a.probs @ b.probs)
    raise CompositionError(f"no exact composite for {type(k).__name__} then {type(l).__name__}; use a diagram")


def apply_exact(k: Kernel, x) -> FiniteDist:
    k.check_input(x)
    return FiniteDist(k.out_space, k.to_table().row(x))


def sample(k: Kernel, x, rng):
    k.check_input(x)
    return k.sample(x, rng)


def log_density(k: Kernel, y, x) -> float:
    if isinstance(k, DeterministicMap):
        raise KernelError(f"{k!r} is deterministic: pathwise-only kernel, no density")
    return k.log_density(y, x)


def exact_row(k: Kernel, x) -> np.ndarray | None:
    """The exact output distribution at ``x`` if the kernel can provide it."""
    return k.row(x)


def kernels_equal(a: Kernel, b: Kernel, tol: float = PROB_TOL) -> bool:
    """Representation-level equality, used where exact comparison is decidable."""
    if a is b:
        return True
    if not (_same_spaces(a.source, b.source) and _same_spaces(a.target, b.target)):
        return False
    if a.is_finite and b.is_finite:
        try:
            return bool(np.max(np.abs(a.to_table().probs - b.to_table().probs)) <= tol)
        except CompositionError:
            pass
    if isinstance(a, GaussianLinear) and isinstance(b, GaussianLinear):
        return all(np.allclose(x, y, rtol=0, atol=tol) for x, y in ((a.weight, b.weight), (a.bias, b.bias), (a.cov_diag, b.cov_diag)))
    if isinstance(a, DeterministicMap) and isinstance(b, DeterministicMap) and a.is_identity and b.is_identity:
        return True
    return a.spec is not None and a.spec == b.spec

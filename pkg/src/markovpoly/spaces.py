"""Measurable-space descriptors, typed values and tuple surgery.

Values are plain Python data so they hash and compare cheaply:

* a point of a :class:`Finite` space is an ``int`` index,
* a point of a :class:`RealVec` space is a ``tuple`` of floats,
* a point of a :class:`Product` space is a ``tuple`` of component points.

``RealVec`` points and ``Product`` points are both tuples, so a value is
only meaningful together with the space it lives in.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Any, Iterator, Sequence, Union

import numpy as np

__all__ = [
    "Finite",
    "RealVec",
    "Product",
    "SpaceDesc",
    "ONE_POINT",
    "Obj",
    "Profile",
    "SpaceError",
    "product_space",
    "profile_space",
    "value_in_space",
    "is_finite",
    "is_real",
    "cardinality",
    "enumerate_points",
    "point_index",
    "point_at",
    "real_dim",
    "flatten_real",
    "unflatten_real",
    "insert_at",
    "project_at",
    "splice",
    "space_to_json",
    "space_from_json",
    "format_value",
    "values_close",
]

#: Tolerance for equality of probabilities on finite spaces.
PROB_TOL = 1e-12


class SpaceError(ValueError):
    """A value or index does not fit the space it is used with."""


@dataclass(frozen=True)
class Finite:
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(str(s) for s in self.labels))
        if not self.labels:
            raise SpaceError("a finite space needs at least one point")
        if len(set(self.labels)) != len(self.labels):
            raise SpaceError(f"duplicate labels in {self.labels}")

    @classmethod
    def of_size(cls, n: int) -> "Finite":
        return cls(tuple(str(i) for i in range(n)))

    @property
    def size(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise SpaceError(f"unknown label {label!r}; expected one of {self.labels}") from None


@dataclass(frozen=True)
class RealVec:
    dim: int

    def __post_init__(self):
        if self.dim < 0:
            raise SpaceError("dimension must be nonnegative")


@dataclass(frozen=True)
class Product:
    factors: tuple["SpaceDesc", ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))


SpaceDesc = Union[Finite, RealVec, Product]

#: The empty product, i.e. the one-point space. Its only point is ``()``.
ONE_POINT = Product(())


@dataclass(frozen=True)
class Obj:
    """An object of a Markov polycategory: a named space with an optional color."""

    name: str
    space: SpaceDesc
    color: str | None = None

    def __repr__(self):
        return f"Obj({self.name})"


Profile = tuple  # ordered tuple of Obj


def product_space(factors: Sequence[SpaceDesc]) -> Product:
    return Product(tuple(factors))


def profile_space(profile: Sequence[Obj]) -> Product:
    return Product(tuple(o.space for o in profile))


def value_in_space(v: Any, s: SpaceDesc) -> bool:
    if isinstance(s, Finite):
        return isinstance(v, (int, np.integer)) and not isinstance(v, bool) and 0 <= v < s.size
    if isinstance(s, RealVec):
        if isinstance(v, np.ndarray):
            return v.shape == (s.dim,) and np.issubdtype(v.dtype, np.number)
        if not isinstance(v, (tuple, list)) or len(v) != s.dim:
            return False
        return all(isinstance(c, (int, float, np.number)) and not isinstance(c, bool) for c in v)
    if isinstance(s, Product):
        if not isinstance(v, (tuple, list)) or len(v) != len(s.factors):
            return False
        return all(value_in_space(c, f) for c, f in zip(v, s.factors))
    raise TypeError(f"not a space descriptor: {s!r}")


def is_finite(s: SpaceDesc) -> bool:
    if isinstance(s, Finite):
        return True
    if isinstance(s, Product):
        return all(is_finite(f) for f in s.factors)
    return False


def is_real(s: SpaceDesc) -> bool:
    """True for RealVec spaces and products built only from them."""
    if isinstance(s, RealVec):
        return True
    if isinstance(s, Product):
        return all(is_real(f) for f in s.factors)
    return False


def cardinality(s: SpaceDesc) -> int:
    if isinstance(s, Finite):
        return s.size
    if isinstance(s, Product):
        return math.prod(cardinality(f) for f in s.factors)
    raise SpaceError(f"{s!r} is not finite")


def enumerate_points(s: SpaceDesc) -> Iterator[Any]:
    """Points of a finite space in lexicographic order (first factor slowest)."""
    if isinstance(s, Finite):
        yield from range(s.size)
    elif isinstance(s, Product):
        yield from itertools.product(*(list(enumerate_points(f)) for f in s.factors))
    else:
        raise SpaceError(f"{s!r} is not finite")


def point_index(s: SpaceDesc, v: Any) -> int:
    if isinstance(s, Finite):
        if not value_in_space(v, s):
            raise SpaceError(f"{v!r} is not a point of {s!r}")
        return int(v)
    if isinstance(s, Product):
        if not isinstance(v, (tuple, list)) or len(v) != len(s.factors):
            raise SpaceError(f"{v!r} is not a point of {s!r}")
        idx = 0
        for c, f in zip(v, s.factors):
            idx = idx * cardinality(f) + point_index(f, c)
        return idx
    raise SpaceError(f"{s!r} is not finite")


def point_at(s: SpaceDesc, idx: int) -> Any:
    if isinstance(s, Finite):
        if not 0 <= idx < s.size:
            raise SpaceError(f"index {idx} out of range for {s!r}")
        return int(idx)
    if isinstance(s, Product):
        if not 0 <= idx < cardinality(s):
            raise SpaceError(f"index {idx} out of range for {s!r}")
        parts = []
        for f in reversed(s.factors):
            n = cardinality(f)
            idx, r = divmod(idx, n)
            parts.append(point_at(f, r))
        return tuple(reversed(parts))
    raise SpaceError(f"{s!r} is not finite")


def real_dim(s: SpaceDesc) -> int:
    if isinstance(s, RealVec):
        return s.dim
    if isinstance(s, Product):
        return sum(real_dim(f) for f in s.factors)
    raise SpaceError(f"{s!r} has finite components")


def flatten_real(s: SpaceDesc, v: Any) -> np.ndarray:
    """Concatenate the coordinates of a point of a real space."""
    if isinstance(s, RealVec):
        return np.asarray(v, dtype=float).reshape(s.dim)
    if isinstance(s, Product):
        if not s.factors:
            return np.zeros(0)
        return np.concatenate([flatten_real(f, c) for f, c in zip(s.factors, v)])
    raise SpaceError(f"{s!r} has finite components")


def unflatten_real(s: SpaceDesc, x: np.ndarray) -> Any:
    if isinstance(s, RealVec):
        return tuple(float(c) for c in x[: s.dim])
    if isinstance(s, Product):
        out, pos = [], 0
        for f in s.factors:
            n = real_dim(f)
            out.append(unflatten_real(f, x[pos : pos + n]))
            pos += n
        return tuple(out)
    raise SpaceError(f"{s!r} has finite components")


# -- tuple surgery (0-based slot indices) ---------------------------------


def insert_at(ctx: Sequence, j: int, v: Any) -> tuple:
    """Insert ``v`` so that it becomes slot ``j`` of the result."""
    if not 0 <= j <= len(ctx):
        raise IndexError(f"slot {j} out of range for a tuple of arity {len(ctx)}")
    return tuple(ctx[:j]) + (v,) + tuple(ctx[j:])


def project_at(t: Sequence, i: int) -> tuple[Any, tuple]:
    """Split ``t`` into its ``i``-th component and the remaining tuple."""
    if not 0 <= i < len(t):
        raise IndexError(f"slot {i} out of range for a tuple of arity {len(t)}")
    return t[i], tuple(t[:i]) + tuple(t[i + 1 :])


def splice(ctx: Sequence, j: int, block: Sequence) -> tuple:
    """Insert a whole block of components starting at slot ``j``."""
    if not 0 <= j <= len(ctx):
        raise IndexError(f"slot {j} out of range for a tuple of arity {len(ctx)}")
    return tuple(ctx[:j]) + tuple(block) + tuple(ctx[j:])


# -- serialization -------------------------------------------------------


def space_to_json(s: SpaceDesc) -> dict:
    if isinstance(s, Finite):
        return {"finite": {"labels": list(s.labels)}}
    if isinstance(s, RealVec):
        return {"realvec": {"dim": s.dim}}
    if isinstance(s, Product):
        return {"product": [space_to_json(f) for f in s.factors]}
    raise TypeError(f"not a space descriptor: {s!r}")


def space_from_json(d: dict) -> SpaceDesc:
    if not isinstance(d, dict) or len(d) != 1:
        raise SpaceError(f"bad space descriptor {d!r}")
    (kind, body), = d.items()
    if kind == "finite":
        if "labels" in body:
            return Finite(tuple(body["labels"]))
        return Finite.of_size(int(body["size"]))
    if kind == "realvec":
        return RealVec(int(body["dim"]))
    if kind == "product":
        return Product(tuple(space_from_json(f) for f in body))
    raise SpaceError(f"unknown space kind {kind!r}")


def format_value(s: SpaceDesc, v: Any):
    """JSON-friendly rendering of a value: finite points become labels."""
    if isinstance(s, Finite):
        return s.labels[int(v)]
    if isinstance(s, RealVec):
        return [float(c) for c in v]
    return [format_value(f, c) for f, c in zip(s.factors, v)]


def values_close(s: SpaceDesc, a: Any, b: Any, tol: float = 0.0) -> bool:
    if isinstance(s, Finite):
        return int(a) == int(b)
    if isinstance(s, RealVec):
        return bool(np.all(np.abs(np.asarray(a, float) - np.asarray(b, float)) <= tol))
    return all(values_close(f, x, y, tol) for f, x, y in zip(s.factors, a, b))

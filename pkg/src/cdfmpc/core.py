"""Norms, norm-ball constraint sets and comparison functions.

Everything here is an immutable value type shared by the rest of the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_TOL_FEAS = 1e-8

_ORDERS = {1: 1, 2: 2, "1": 1, "2": 2, "inf": math.inf, math.inf: math.inf}


class CdfError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(CdfError, ValueError):
    pass


class DimensionError(CdfError, ValueError):
    pass


class NumericOverflowError(CdfError, ArithmeticError):
    pass


class UnsupportedOperationError(CdfError, NotImplementedError):
    pass


class InsufficientHistoryError(CdfError, IndexError):
    pass


class CertificationFailure(CdfError):
    """Both the cycle-length and horizon caps are exhausted."""


class InfeasibleError(CdfError):
    """No admissible plan was found.

    ``kind`` is ``"set"`` when the state/input sets cannot be met and
    ``"supply"`` when only the accumulated-supply constraint fails.
    """

    def __init__(self, message: str, kind: str = "set", k: int | None = None):
        super().__init__(message)
        self.kind = kind
        self.k = k


def parse_order(order) -> float:
    """Normalise a norm order to 1, 2 or ``math.inf``."""
    if isinstance(order, str):
        order = order.strip().lower()
    try:
        return _ORDERS[order]
    except (KeyError, TypeError):
        if isinstance(order, float) and order in (1.0, 2.0):
            return int(order)
        raise InvalidInputError(f"norm order must be one of 1, 2, inf; got {order!r}")


def as_finite_vector(v, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return arr


def _norm2(arr: np.ndarray) -> float:
    # scaled to avoid underflow/overflow of the squares
    big = float(np.max(np.abs(arr)))
    if big == 0.0 or not math.isfinite(big):
        return big
    return big * float(np.linalg.norm(arr / big))


def norm(v, order=2) -> float:
    """p-norm of a finite real vector for p in {1, 2, inf}."""
    arr = as_finite_vector(v)
    p = parse_order(order)
    if arr.size == 0:
        return 0.0
    if p == 1:
        return float(np.sum(np.abs(arr)))
    if p == 2:
        return _norm2(arr)
    return float(np.max(np.abs(arr)))


@dataclass(frozen=True)
class NormBallSet:
    """``{v : ||v||_p <= radius}`` with a feasibility tolerance on membership."""

    radius: float
    norm_order: float = math.inf
    dimension: int = 1
    tol_feas: float = DEFAULT_TOL_FEAS

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise InvalidInputError("radius must be positive and finite")
        if int(self.dimension) < 1:
            raise InvalidInputError("dimension must be a positive integer")
        if self.tol_feas < 0:
            raise InvalidInputError("tol_feas must be non-negative")
        object.__setattr__(self, "norm_order", parse_order(self.norm_order))
        object.__setattr__(self, "dimension", int(self.dimension))

    def _check(self, v) -> np.ndarray:
        arr = as_finite_vector(v)
        if arr.shape[0] != self.dimension:
            raise DimensionError(
                f"expected dimension {self.dimension}, got {arr.shape[0]}")
        return arr

    def violation(self, v) -> float:
        """Excess of ``||v||`` over the radius (0 for members)."""
        return max(0.0, norm(self._check(v), self.norm_order) - self.radius)

    def contains(self, v, tol_feas: float | None = None) -> bool:
        tol = self.tol_feas if tol_feas is None else tol_feas
        return norm(self._check(v), self.norm_order) <= self.radius + tol

    def project(self, v) -> np.ndarray:
        """Euclidean projection onto the ball (orders 2 and inf only)."""
        arr = self._check(v)
        if self.norm_order == 1:
            raise UnsupportedOperationError("projection onto 1-norm balls is not supported")
        if self.norm_order == math.inf:
            return np.clip(arr, -self.radius, self.radius)
        nrm = _norm2(arr)
        if nrm <= self.radius:
            return arr.copy()
        out = arr * (self.radius / nrm)
        # rounding can leave the rescaled point a hair outside
        while _norm2(out) > self.radius:
            out = out * (1.0 - 2.0 ** -52)
        return out


def set_contains(S: NormBallSet, v, tol_feas: float | None = None) -> bool:
    return S.contains(v, tol_feas)


def project_to_set(S: NormBallSet, v) -> np.ndarray:
    return S.project(v)


@dataclass(frozen=True)
class ComparisonFunction:
    """Class-K-infinity function from a small closed family.

    ``kind`` is ``"power_law"`` (``c * s**p``), ``"linear"`` (``gamma * s``)
    or ``"composed"`` (``outer(inner(s))``).
    """

    kind: str
    params: tuple = ()
    parts: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.kind in ("power_law", "linear"):
            want = 2 if self.kind == "power_law" else 1
            if len(self.params) != want:
                raise InvalidInputError(f"{self.kind} takes {want} parameter(s)")
            if not all(float(p) > 0 and math.isfinite(float(p)) for p in self.params):
                raise InvalidInputError("comparison-function parameters must be positive")
            object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        elif self.kind == "composed":
            if len(self.parts) != 2 or not all(
                    isinstance(p, ComparisonFunction) for p in self.parts):
                raise InvalidInputError("composed needs (outer, inner) comparison functions")
        else:
            raise InvalidInputError(f"unknown comparison-function kind {self.kind!r}")

    @classmethod
    def power_law(cls, c: float, p: float) -> "ComparisonFunction":
        return cls("power_law", (c, p))

    @classmethod
    def linear(cls, gamma: float) -> "ComparisonFunction":
        return cls("linear", (gamma,))

    @classmethod
    def compose(cls, outer: "ComparisonFunction",
                inner: "ComparisonFunction") -> "ComparisonFunction":
        return cls("composed", (), (outer, inner))

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise InvalidInputError("comparison functions are defined on s >= 0")
        if self.kind == "linear":
            out = self.params[0] * s
        elif self.kind == "power_law":
            c, p = self.params
            out = c * s ** p
        else:
            outer, inner = self.parts
            out = np.asarray(outer(inner(s)))
        return float(out) if out.ndim == 0 else out

    def is_below_identity(self) -> bool:
        """True when the function is a linear scaling with gamma < 1."""
        return self.kind == "linear" and self.params[0] < 1.0

    def describe(self) -> str:
        if self.kind == "linear":
            return f"linear({self.params[0]!r})"
        if self.kind == "power_law":
            return f"power_law({self.params[0]!r}, {self.params[1]!r})"
        return f"composed({self.parts[0].describe()}, {self.parts[1].describe()})"

    def to_dict(self) -> dict:
        if self.kind == "composed":
            return {"kind": "composed", "parts": [p.to_dict() for p in self.parts]}
        return {"kind": self.kind, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "ComparisonFunction":
        try:
            if d["kind"] == "composed":
                outer, inner = (cls.from_dict(p) for p in d["parts"])
                return cls.compose(outer, inner)
            return cls(d["kind"], tuple(d["params"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"bad comparison-function description: {d!r}") from exc

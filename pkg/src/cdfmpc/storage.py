"""Quadratic kernels, sum-of-kernels storage values and tail-based supplies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (ComparisonFunction, DimensionError, InvalidInputError,
                   as_finite_vector, norm)


class KernelFunction:
    """Positive definite quadratic kernel ``l(x) = x' Q x``.

    Parameters
    ----------
    Q : array_like
        Symmetric positive definite ``n x n`` matrix, or a length-``n`` vector
        interpreted as its diagonal.
    """

    def __init__(self, Q):
        Q = np.asarray(Q, dtype=float)
        if Q.ndim == 1:
            Q = np.diag(Q)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] < 1:
            raise DimensionError("Q must be a square matrix or a diagonal vector")
        if not np.all(np.isfinite(Q)):
            raise InvalidInputError("Q has non-finite entries")
        if not np.array_equal(Q, Q.T):
            if np.max(np.abs(Q - Q.T)) > 1e-12 * max(1.0, np.max(np.abs(Q))):
                raise InvalidInputError("Q must be symmetric")
            Q = 0.5 * (Q + Q.T)
        try:
            chol = np.linalg.cholesky(Q)
        except np.linalg.LinAlgError:
            raise InvalidInputError("Q must be positive definite") from None
        self.Q = np.ascontiguousarray(Q)
        self.Q.setflags(write=False)
        # l(x) = ||R x||^2 with R = chol'
        self.R = np.ascontiguousarray(chol.T)
        self.R.setflags(write=False)
        eig = np.linalg.eigvalsh(Q)
        self.lambda_min = float(eig[0])
        self.lambda_max = float(eig[-1])
        self.n = Q.shape[0]

    @property
    def alpha1(self) -> ComparisonFunction:
        """Lower 2-norm bound ``lambda_min(Q) s^2``."""
        return ComparisonFunction.power_law(self.lambda_min, 2.0)

    @property
    def alpha2(self) -> ComparisonFunction:
        """Upper 2-norm bound ``lambda_max(Q) s^2``."""
        return ComparisonFunction.power_law(self.lambda_max, 2.0)

    def __call__(self, x) -> float:
        x = as_finite_vector(x, "state")
        if x.shape[0] != self.n:
            raise DimensionError(f"kernel expects dimension {self.n}, got {x.shape[0]}")
        return float(x @ self.Q @ x)

    def gradient(self, x) -> np.ndarray:
        return 2.0 * (self.Q @ np.asarray(x, dtype=float))

    def diagonal(self):
        """The diagonal of Q when Q is diagonal, else ``None``."""
        d = np.diag(self.Q)
        return d if np.array_equal(self.Q, np.diag(d)) else None

    def __repr__(self):
        d = self.diagonal()
        return f"KernelFunction(diag={d.tolist()})" if d is not None else \
            f"KernelFunction(Q={self.Q.tolist()})"


def kernel_eval(l: KernelFunction, x) -> float:
    return l(x)


@dataclass(frozen=True)
class StorageValue:
    value: float
    horizon: int
    per_stage: tuple


def storage_eval(l: KernelFunction, states, N: int) -> StorageValue:
    """``V = sum_{i=0}^{N-1} l(x(i|k))`` for ``states = [x(0|k), ..., x(N-1|k)]``."""
    if N < 2:
        raise InvalidInputError("storage horizon N must be >= 2")
    states = list(states)
    if len(states) != N:
        raise DimensionError(f"expected {N} states, got {len(states)}")
    per = tuple(l(x) for x in states)
    return StorageValue(math.fsum(per), N, per)


@dataclass(frozen=True)
class SupplyRecord:
    """Realised supply ``s(x(k)) = l(x_tail) - l(x(k))`` at time ``k``."""

    k: int
    s_value: float
    tail_state: np.ndarray = field(repr=False)
    tail_input: np.ndarray = field(repr=False)
    l_current: float = 0.0
    l_tail: float = 0.0


def supply_eval(l: KernelFunction, x_k, x_tail) -> float:
    x_k = as_finite_vector(x_k)
    x_tail = as_finite_vector(x_tail)
    if x_k.shape != x_tail.shape:
        raise DimensionError("supply arguments must have equal dimension")
    return l(x_tail) - l(x_k)


@dataclass
class StorageBoundsReport:
    alpha1_coeff: float
    alpha2_coeff: float
    samples: int
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def storage_bounds_check(l: KernelFunction, samples: int = 1000, radius: float = 10.0,
                         rng=None) -> StorageBoundsReport:
    """Cross-check ``lambda_min ||x||^2 <= l(x) <= lambda_max ||x||^2`` by sampling.

    Samples are drawn uniformly from the box of the given radius. The relative
    slack ``1e-12`` absorbs rounding in the quadratic form.
    """
    if samples < 1:
        raise InvalidInputError("samples must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    a1, a2 = l.alpha1, l.alpha2
    violations = []
    for x in rng.uniform(-radius, radius, size=(samples, l.n)):
        s = norm(x, 2)
        v = l(x)
        lo, hi = a1(s), a2(s)
        slack = 1e-12 * max(hi, 1e-300)
        if v < lo - slack or v > hi + slack:
            violations.append((x, lo, v, hi))
    return StorageBoundsReport(l.lambda_min, l.lambda_max, samples, violations)

"""Discrete-time models ``x(k+1) = f(x(k), u(k))`` and the built-in registry."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .core import (DimensionError, InvalidInputError, NormBallSet, NumericOverflowError,
                   as_finite_vector, norm, parse_order)


@dataclass(frozen=True)
class SinCoupledLinear:
    """Parameters of ``f(x, u) = A x + B u + E sin(C x)``.

    This is the form the compiled kernels understand. With ``E`` and ``C`` of
    zero width the model is linear.
    """

    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = np.ascontiguousarray(self.A, dtype=float)
        B = np.ascontiguousarray(self.B, dtype=float)
        n, m = A.shape[0], B.shape[1]
        E = np.ascontiguousarray(np.asarray(self.E, dtype=float).reshape(n, -1))
        C = np.ascontiguousarray(np.asarray(self.C, dtype=float).reshape(-1, n))
        if A.shape != (n, n) or B.shape[0] != n or E.shape[1] != C.shape[0]:
            raise DimensionError("inconsistent A, B, E, C shapes")
        for name, arr in (("A", A), ("B", B), ("E", E), ("C", C)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        del m

    def __call__(self, x, u):
        return self.A @ x + self.B @ u + self.E @ np.sin(self.C @ x)

    def jacobians(self, x, u):
        fx = self.A + (self.E * np.cos(self.C @ x)) @ self.C
        return fx, self.B.copy()


@dataclass(frozen=True, eq=False)
class SystemModel:
    """A transition map with dimensions, constraint sets and optional Jacobians.

    ``structure`` is set for models of :class:`SinCoupledLinear` form, which
    routes rollouts and linearisations through the kernel backend.
    """

    name: str
    n: int
    m: int
    state_set: NormBallSet
    input_set: NormBallSet
    transition: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jacobians: Optional[Callable] = None
    structure: Optional[SinCoupledLinear] = field(default=None, repr=False)

    def __post_init__(self):
        if self.state_set.dimension != self.n or self.input_set.dimension != self.m:
            raise DimensionError("constraint-set dimensions do not match the model")
        f00 = np.asarray(self.transition(np.zeros(self.n), np.zeros(self.m)), dtype=float)
        if f00.shape != (self.n,) or np.any(f00 != 0.0):
            raise InvalidInputError(f"model {self.name!r}: f(0, 0) must be exactly zero")

    @classmethod
    def sin_coupled(cls, name, A, B, E=None, C=None, *, state_radius, input_radius,
                    state_norm=math.inf, input_norm=math.inf,
                    tol_feas=1e-8) -> "SystemModel":
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        n, m = A.shape[0], B.shape[1]
        E = np.zeros((n, 0)) if E is None else E
        C = np.zeros((0, n)) if C is None else C
        st = SinCoupledLinear(A, B, E, C)
        return cls(
            name=name, n=n, m=m,
            state_set=NormBallSet(state_radius, state_norm, n, tol_feas),
            input_set=NormBallSet(input_radius, input_norm, m, tol_feas),
            transition=st, jacobians=st.jacobians, structure=st,
        )

    def with_sets(self, state_set: NormBallSet | None = None,
                  input_set: NormBallSet | None = None) -> "SystemModel":
        return SystemModel(self.name, self.n, self.m, state_set or self.state_set,
                           input_set or self.input_set, self.transition,
                           self.jacobians, self.structure)


def _check_dims(model: SystemModel, x, u):
    x = as_finite_vector(x, "state")
    u = as_finite_vector(u, "input")
    if x.shape[0] != model.n:
        raise DimensionError(f"state has dimension {x.shape[0]}, model expects {model.n}")
    if u.shape[0] != model.m:
        raise DimensionError(f"input has dimension {u.shape[0]}, model expects {model.m}")
    return x, u


def step(model: SystemModel, x, u) -> np.ndarray:
    """One transition ``f(x, u)``; constraints are not checked here."""
    x, u = _check_dims(model, x, u)
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.asarray(model.transition(x, u), dtype=float)
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError(f"model {model.name!r} produced a non-finite state")
    return out


def _as_inputs(model: SystemModel, inputs) -> np.ndarray:
    U = np.asarray(inputs, dtype=float)
    if U.ndim == 1 and model.m == 1:
        U = U.reshape(-1, 1)
    if U.ndim != 2 or U.shape[1] != model.m:
        raise DimensionError(f"inputs must have shape (L, {model.m}), got {U.shape}")
    if U.shape[0] < 1:
        raise InvalidInputError("input sequence must be nonempty")
    if not np.all(np.isfinite(U)):
        raise InvalidInputError("inputs have non-finite entries")
    return np.ascontiguousarray(U)


def rollout_full(model: SystemModel, x0, inputs) -> np.ndarray:
    """States ``x(0) ... x(L)`` as an ``(L+1, n)`` array (``x(0)`` included)."""
    x0 = as_finite_vector(x0, "initial state")
    if x0.shape[0] != model.n:
        raise DimensionError(f"state has dimension {x0.shape[0]}, model expects {model.n}")
    U = _as_inputs(model, inputs)
    st = model.structure
    with np.errstate(over="ignore", invalid="ignore"):
        if st is not None:
            X = kernels.rollout(st.A, st.B, st.E, st.C, np.ascontiguousarray(x0), U)
        else:
            X = np.empty((U.shape[0] + 1, model.n))
            X[0] = x0
            for i in range(U.shape[0]):
                X[i + 1] = model.transition(X[i], U[i])
    if not np.all(np.isfinite(X)):
        raise NumericOverflowError(f"rollout of {model.name!r} produced a non-finite state")
    return X


def rollout(model: SystemModel, x0, inputs) -> list:
    """Predicted states ``[x(1), ..., x(L)]`` for ``L = len(inputs)``."""
    return list(rollout_full(model, x0, inputs)[1:])


def jacobian_fd(model: SystemModel, x, u, h: float = 1e-6):
    """Central finite-difference Jacobians ``(df/dx, df/du)``."""
    if not h > 0:
        raise InvalidInputError("finite-difference step must be positive")
    x, u = _check_dims(model, x, u)
    fx = np.empty((model.n, model.n))
    fu = np.empty((model.n, model.m))
    for j in range(model.n):
        e = np.zeros(model.n)
        e[j] = h
        fx[:, j] = (step(model, x + e, u) - step(model, x - e, u)) / (2 * h)
    for j in range(model.m):
        e = np.zeros(model.m)
        e[j] = h
        fu[:, j] = (step(model, x, u + e) - step(model, x, u - e)) / (2 * h)
    if not (np.all(np.isfinite(fx)) and np.all(np.isfinite(fu))):
        raise NumericOverflowError("finite-difference Jacobian is not finite")
    return fx, fu


def linearize_along(model: SystemModel, X: np.ndarray, U: np.ndarray):
    """Per-step Jacobians along a rollout, stacked as ``(L, n, n)`` and ``(L, n, m)``."""
    st = model.structure
    if st is not None:
        return kernels.linearize(st.A, st.B, st.E, st.C, X, U)
    L = U.shape[0]
    Fx = np.empty((L, model.n, model.n))
    Fu = np.empty((L, model.n, model.m))
    for i in range(L):
        if model.jacobians is not None:
            Fx[i], Fu[i] = model.jacobians(X[i], U[i])
        else:
            Fx[i], Fu[i] = jacobian_fd(model, X[i], U[i])
    return Fx, Fu


# ---------------------------------------------------------------------------
# controlled K-boundedness (sampling; can only falsify)

SHELL_FRACTIONS = (0.001, 0.01, 0.1, 0.5, 1.0)
PROBE_FRACTIONS = (1e-5, 1e-7)


@dataclass
class KBoundednessReport:
    fitted_c: float
    max_ratio_profile: dict
    probe_ratio_profile: dict
    violations: list
    skipped_origin: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


def _sample_shell(rng, n, radius, order, count):
    g = rng.standard_normal((count, n))
    if order == math.inf:
        g /= np.max(np.abs(g), axis=1, keepdims=True)
    elif order == 1:
        g /= np.sum(np.abs(g), axis=1, keepdims=True)
    else:
        g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * radius


def check_k_boundedness(model: SystemModel, policy: Callable, samples: int = 1000,
                        rng=None, norm_order=None, extra_points=()) -> KBoundednessReport:
    """Empirical test of ``||f(x, policy(x))|| <= c ||x||`` on shells of the state set.

    A linear bound ``c`` is fitted on shells at ``SHELL_FRACTIONS`` of the
    state-set radius; shells much closer to the origin are then probed and any
    point whose growth ratio exceeds ``c`` is reported. Points at the origin are
    skipped.
    """
    if samples < 1:
        raise InvalidInputError("samples must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    order = parse_order(norm_order if norm_order is not None else model.state_set.norm_order)
    R = model.state_set.radius
    per_shell = max(1, samples // len(SHELL_FRACTIONS))

    def ratio(x):
        nx = norm(x, order)
        return norm(step(model, x, policy(x)), order) / nx

    profile = {}
    for frac in SHELL_FRACTIONS:
        pts = _sample_shell(rng, model.n, frac * R, order, per_shell)
        profile[frac * R] = max(ratio(x) for x in pts)
    c = max(profile.values())

    probes = {}
    violations = []
    skipped = 0
    for frac in PROBE_FRACTIONS:
        pts = _sample_shell(rng, model.n, frac * R, order, max(1, per_shell // 4))
        worst = 0.0
        for x in pts:
            r = ratio(x)
            worst = max(worst, r)
            if r > c * (1 + 1e-9):
                violations.append((x, r))
        probes[frac * R] = worst
    for x in extra_points:
        x = as_finite_vector(x)
        if norm(x, order) == 0.0:
            skipped += 1
            continue
        r = ratio(x)
        if r > c * (1 + 1e-9):
            violations.append((x, r))
    return KBoundednessReport(c, profile, probes, violations, skipped)


# ---------------------------------------------------------------------------
# built-in models

GEN_ANGLE_GAIN = 31.4159
GEN_DAMPING = 0.999


def generator_matrices():
    """``A, B1, B2`` of the two-generator benchmark, as printed (0.1 s sampling)."""
    blk = np.array([[1.0, GEN_ANGLE_GAIN], [0.0, GEN_DAMPING]])
    A = np.zeros((4, 4))
    A[:2, :2] = blk
    A[2:, 2:] = blk
    B1 = np.zeros((4, 2))
    B1[1, 0] = 0.01
    B1[3, 1] = 0.01
    B2 = np.array([0.0, -0.005, 0.0, 0.005])
    return A, B1, B2


def generator2(state_radius=10.0, input_radius=5.0, state_norm=math.inf,
               input_norm=math.inf, tol_feas=1e-8) -> SystemModel:
    """Two synchronous generators with ``sin(x1 - x3)`` coupling.

    States are ``[angle1, freq1, angle2, freq2]`` deviations (rad, rad/s).
    """
    A, B1, B2 = generator_matrices()
    return SystemModel.sin_coupled(
        "generator2", A, B1, B2.reshape(4, 1), np.array([[1.0, 0.0, -1.0, 0.0]]),
        state_radius=state_radius, input_radius=input_radius,
        state_norm=state_norm, input_norm=input_norm, tol_feas=tol_feas)


def scalar_linear(state_radius=10.0, input_radius=5.0, state_norm=math.inf,
                  input_norm=math.inf, tol_feas=1e-8) -> SystemModel:
    """``x+ = 0.5 x + u``."""
    return SystemModel.sin_coupled(
        "scalar_linear", [[0.5]], [[1.0]], state_radius=state_radius,
        input_radius=input_radius, state_norm=state_norm, input_norm=input_norm,
        tol_feas=tol_feas)


def double_integrator(state_radius=10.0, input_radius=1.0, state_norm=math.inf,
                      input_norm=math.inf, tol_feas=1e-8) -> SystemModel:
    """Zero-order-hold double integrator with 0.1 s sampling."""
    dt = 0.1
    return SystemModel.sin_coupled(
        "double_integrator", [[1.0, dt], [0.0, 1.0]], [[0.5 * dt * dt], [dt]],
        state_radius=state_radius, input_radius=input_radius, state_norm=state_norm,
        input_norm=input_norm, tol_feas=tol_feas)


MODELS = {
    "generator2": generator2,
    "scalar_linear": scalar_linear,
    "double_integrator": double_integrator,
}


def get_model(name: str, **kwargs) -> SystemModel:
    try:
        factory = MODELS[name]
    except KeyError:
        raise InvalidInputError(
            f"unknown model {name!r}; registered: {', '.join(sorted(MODELS))}") from None
    return factory(**kwargs)

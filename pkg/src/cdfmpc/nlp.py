"""Single-shooting solver for short-horizon constrained control problems.

Decision variables are the stacked inputs ``u(0), ..., u(L-1)``; states are
eliminated by rollout. Inputs are kept in the input set by projection. State
constraints and at most one terminal inequality ``l(x(L)) <= bound`` are
handled by an augmented Lagrangian (PHR form). The inner solver is a projected
Gauss-Newton method: the objective is a weighted sum of quadratic kernels, so
the merit is a sum of squares and ``J'J`` gives a cheap, positive semidefinite
Hessian model that is exact for linear dynamics.

Objective and constraints are normalised (objective by its value at the
starting point, constraints by their natural scale) so that stopping tests do
not depend on how close the initial state is to the origin.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .core import (DimensionError, InvalidInputError, NormBallSet, NumericOverflowError,
                   as_finite_vector)
from .model import SystemModel, linearize_along, rollout_full
from .storage import KernelFunction

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SolverOptions:
    tol_stat: float = 1e-8
    tol_feas: float = 1e-8
    max_outer: int = 30
    max_inner: int = 500
    penalty_init: float = 1.0
    penalty_growth: float = 10.0
    multiplier_max: float = 1e8
    armijo: float = 1e-4
    max_backtracks: int = 60

    def __post_init__(self):
        for name in ("tol_stat", "tol_feas", "penalty_init", "multiplier_max"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"solver option {name} must be positive")
        if self.penalty_growth <= 1:
            raise InvalidInputError("penalty_growth must exceed 1")
        if self.max_outer < 1 or self.max_inner < 1:
            raise InvalidInputError("iteration caps must be >= 1")


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    FEASIBLE_IMPROVED = "FeasibleImproved"
    WARM_START_RETURNED = "WarmStartReturned"
    INFEASIBLE = "Infeasible"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class StageCost:
    """``sum_i weights[i] * l(x_i)`` over the rollout ``x_0, ..., x_L``."""

    kernel: KernelFunction
    weights: tuple

    def __call__(self, X) -> float:
        X = np.asarray(X, dtype=float)
        return math.fsum(w * self.kernel(x) for w, x in zip(self.weights, X) if w)


@dataclass(frozen=True)
class TerminalConstraint:
    """``l(x(L)) <= bound``; violations are reported divided by ``scale``."""

    kernel: KernelFunction
    bound: float
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidInputError("terminal-constraint scale must be positive")


@dataclass(eq=False)
class ShootingProblem:
    model: SystemModel
    x0: np.ndarray
    horizon: int
    objective: StageCost
    extra_ineq: Optional[TerminalConstraint] = None
    input_set: Optional[NormBallSet] = None
    state_set: Optional[NormBallSet] = None

    def __post_init__(self):
        if self.horizon < 1:
            raise InvalidInputError("horizon must be >= 1")
        self.x0 = as_finite_vector(self.x0, "x0")
        if self.x0.shape[0] != self.model.n:
            raise DimensionError("x0 dimension does not match the model")
        if len(self.objective.weights) != self.horizon + 1:
            raise DimensionError("objective needs one weight per state x_0..x_L")
        if self.input_set is None:
            self.input_set = self.model.input_set
        if self.state_set is None:
            self.state_set = self.model.state_set

    @property
    def n_vars(self) -> int:
        return self.horizon * self.model.m


@dataclass
class SolveResult:
    inputs: np.ndarray
    states: np.ndarray
    objective_value: float
    status: Status
    iterations: int
    max_constraint_violation: float
    warm_objective: Optional[float] = None
    stationarity: float = field(default=math.nan)


class _Merit:
    """Normalised augmented-Lagrangian merit for one problem."""

    def __init__(self, problem: ShootingProblem):
        self.p = problem
        self.model = problem.model
        self.L = problem.horizon
        self.m = problem.model.m
        self.n = problem.model.n
        k = problem.objective.kernel
        self.Q = k.Q
        self.R = k.R
        self.w = np.ascontiguousarray(problem.objective.weights, dtype=float)
        ss = problem.state_set
        self.state_box = ss.norm_order == math.inf
        if ss.norm_order == 1:
            from .core import UnsupportedOperationError
            raise UnsupportedOperationError("1-norm state sets are not supported by the solver")
        self.r_state = ss.radius
        if self.state_box:
            self.n_state_con = 2 * self.L * self.n
        else:
            self.n_state_con = self.L
        self.term = problem.extra_ineq
        self.n_con = self.n_state_con + (1 if self.term is not None else 0)
        self.f_scale = 1.0

    # -- raw quantities ---------------------------------------------------
    def states(self, U):
        return rollout_full(self.model, self.p.x0, U)

    def objective(self, X) -> float:
        return kernels.weighted_quadratic_sum(X, self.Q, self.w)

    def con_values(self, X):
        """Normalised constraint values ``c_hat`` (feasible iff all <= 0)."""
        Xs = X[1:]
        r = self.r_state
        if self.state_box:
            c = np.concatenate([(Xs - r).ravel(), (-Xs - r).ravel()]) / r
        else:
            c = (np.einsum("ij,ij->i", Xs, Xs) - r * r) / (r * r)
        if self.term is not None:
            t = self.term
            xl = X[-1]
            c = np.append(c, (float(xl @ t.kernel.Q @ xl) - t.bound) / t.scale)
        return c

    def violation(self, X, U=None) -> float:
        """Largest raw violation: state excess over the radius, terminal excess/scale."""
        v = 0.0
        ss = self.p.state_set
        for x in X[1:]:
            v = max(v, ss.violation(x))
        if self.term is not None:
            t = self.term
            v = max(v, (t.kernel(X[-1]) - t.bound) / t.scale)
        if U is not None:
            us = self.p.input_set
            for u in U:
                v = max(v, us.violation(u))
        return v

    def merit(self, X, lam, mu) -> float:
        f = self.objective(X) / self.f_scale
        if self.n_con:
            h = np.maximum(0.0, self.con_values(X) + lam / mu)
            f += 0.5 * mu * float(h @ h)
        return f

    # -- derivatives --------------------------------------------------------
    def derivatives(self, U, X, lam, mu):
        """Gradient (by reverse accumulation) and Gauss-Newton Hessian of the merit."""
        Fx, Fu = linearize_along(self.model, X, U)
        S = kernels.sensitivities(Fx, Fu)
        L, n, q = self.L, self.n, self.L * self.m
        gX = (2.0 / self.f_scale) * (self.w[:, None] * (X @ self.Q))
        idx = np.nonzero(self.w)[0]
        T = np.einsum("ab,ibq->iaq", self.R, S[idx]) * np.sqrt(self.w[idx] / self.f_scale)[:, None, None]
        T = T.reshape(-1, q)
        H = 2.0 * (T.T @ T)
        if self.n_con:
            c = self.con_values(X)
            h = np.maximum(0.0, c + lam / mu)
            act = np.nonzero(h > 0.0)[0]
            r = self.r_state
            for j in act:
                mh = mu * h[j]
                if j < self.n_state_con:
                    if self.state_box:
                        sign = 1.0 if j < L * n else -1.0
                        jj = j % (L * n)
                        i, a = divmod(jj, n)
                        grad_x = sign / r
                        gX[i + 1, a] += mh * grad_x
                        gz = grad_x * S[i + 1, a]
                        H += mu * np.outer(gz, gz)
                    else:
                        i = j
                        xi = X[i + 1]
                        gX[i + 1] += mh * 2.0 * xi / (r * r)
                        gz = (2.0 / (r * r)) * (xi @ S[i + 1])
                        H += mu * np.outer(gz, gz) + mh * (2.0 / (r * r)) * (S[i + 1].T @ S[i + 1])
                else:
                    t = self.term
                    xl = X[L]
                    gxl = 2.0 * (t.kernel.Q @ xl) / t.scale
                    gX[L] += mh * gxl
                    gz = gxl @ S[L]
                    RS = t.kernel.R @ S[L]
                    H += mu * np.outer(gz, gz) + mh * (2.0 / t.scale) * (RS.T @ RS)
        g = kernels.adjoint_gradient(Fx, Fu, np.ascontiguousarray(gX))
        return g, H


def _as_matrix(inputs, L, m) -> np.ndarray:
    U = np.asarray(inputs, dtype=float)
    if U.size != L * m:
        raise DimensionError(f"expected {L} inputs of dimension {m}")
    return np.ascontiguousarray(U.reshape(L, m))


def _project_all(U, S: NormBallSet) -> np.ndarray:
    if S.norm_order == math.inf:
        return np.clip(U, -S.radius, S.radius)
    return np.array([S.project(u) for u in U])


def evaluate_objective_gradient(problem: ShootingProblem, inputs) -> np.ndarray:
    """Gradient of the objective with respect to the stacked inputs (reverse mode)."""
    L, m = problem.horizon, problem.model.m
    U = _as_matrix(inputs, L, m)
    X = rollout_full(problem.model, problem.x0, U)
    Fx, Fu = linearize_along(problem.model, X, U)
    w = np.asarray(problem.objective.weights, dtype=float)
    gX = 2.0 * w[:, None] * (X @ problem.objective.kernel.Q)
    g = kernels.adjoint_gradient(Fx, Fu, np.ascontiguousarray(gX))
    if not np.all(np.isfinite(g)):
        raise NumericOverflowError("objective gradient is not finite")
    return g


def check_feasible(problem: ShootingProblem, inputs) -> tuple:
    """``(feasible, max_violation)`` for an input sequence, at ``tol_feas`` of the sets."""
    L, m = problem.horizon, problem.model.m
    U = _as_matrix(inputs, L, m)
    X = rollout_full(problem.model, problem.x0, U)
    v = _Merit(problem).violation(X, U)
    return v <= problem.input_set.tol_feas, v


def _inner(mer: _Merit, U, lam, mu, opts: SolverOptions, budget: int):
    """Projected Gauss-Newton on the merit; returns ``(U, X, converged, iters, measure)``."""
    S = mer.p.input_set
    box = S.norm_order == math.inf
    r = S.radius
    q = mer.L * mer.m
    X = mer.states(U)
    phi = mer.merit(X, lam, mu)
    measure = math.inf
    for it in range(1, budget + 1):
        g, H = mer.derivatives(U, X, lam, mu)
        z = U.ravel()
        if box:
            eps_b = 1e-12 * r
            active = ((z <= -r + eps_b) & (g > 0)) | ((z >= r - eps_b) & (g < 0))
        else:
            active = np.zeros(q, dtype=bool)
        free = ~active
        d = np.zeros(q)
        dec = 0.0
        if free.any():
            Hf = H[np.ix_(free, free)]
            gf = g[free]
            diag = np.diag(Hf)
            scale = float(np.max(diag)) if diag.size and np.max(diag) > 0 else 1.0
            Lc = None
            damp = 0.0
            for _ in range(12):
                try:
                    Lc = np.linalg.cholesky(Hf + damp * np.eye(Hf.shape[0]) if damp else Hf)
                    break
                except np.linalg.LinAlgError:
                    damp = 1e-14 * scale if damp == 0.0 else damp * 100.0
            if Lc is not None:
                y = np.linalg.solve(Lc, -gf)
                df = np.linalg.solve(Lc.T, y)
                d[free] = df
                dec = float(-gf @ df)
        measure = math.sqrt(max(dec, 0.0))
        if 0.5 * dec <= max(opts.tol_stat ** 2, 8 * _EPS * abs(phi)):
            return U, X, True, it - 1, measure
        accepted = False
        for direction in (d, None):
            if direction is None:
                # fall back to a diagonally scaled projected-gradient step
                hd = np.diag(H).copy()
                hd[hd <= 0] = 1.0
                direction = -g / hd
            t = 1.0
            for _ in range(opts.max_backtracks):
                Zt = _project_all((z + t * direction).reshape(mer.L, mer.m), S)
                step = Zt.ravel() - z
                slope = float(g @ step)
                if slope >= 0 and not np.any(step):
                    break
                Xt = mer.states(Zt)
                phit = mer.merit(Xt, lam, mu)
                if slope < 0 and phit <= phi + opts.armijo * slope:
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                break
        if not accepted:
            # no representable decrease left
            stalled_ok = 0.5 * dec <= max(1e4 * opts.tol_stat ** 2, 1e3 * _EPS * abs(phi))
            return U, X, stalled_ok, it, measure
        improvement = phi - phit
        U, X, phi = Zt, Xt, phit
        if improvement <= 4 * _EPS * abs(phi):
            return U, X, True, it, measure
    return U, X, False, budget, measure


def solve(problem: ShootingProblem, warm_start=None,
          opts: SolverOptions | None = None) -> SolveResult:
    """Minimise the problem's objective over input sequences.

    A feasible ``warm_start`` is never beaten by the returned point: the
    result's objective is at most the warm start's, falling back to the warm
    start itself (status ``WarmStartReturned``) when no better feasible point
    was found.
    """
    opts = opts or SolverOptions()
    L, m = problem.horizon, problem.model.m
    mer = _Merit(problem)
    tol = opts.tol_feas

    warm = None
    if warm_start is not None:
        W = _as_matrix(warm_start, L, m)
        if not np.all(np.isfinite(W)):
            raise InvalidInputError("warm start has non-finite entries")
        XW = mer.states(W)
        fw = mer.objective(XW)
        vw = mer.violation(XW, W)
        warm = (W, XW, fw, vw)
        U = _project_all(W, problem.input_set)
    else:
        U = np.zeros((L, m))
    U = np.ascontiguousarray(U)
    X = mer.states(U)
    f0 = mer.objective(X)
    if not math.isfinite(f0):
        raise NumericOverflowError("objective is not finite at the starting point")
    if f0 > 0:
        mer.f_scale = f0
    else:
        lx0 = problem.objective.kernel(problem.x0)
        mer.f_scale = lx0 if lx0 > 0 else 1.0

    best = None  # (f, U, X, viol, converged)
    if warm is not None and warm[3] <= tol:
        best = (warm[2], warm[0], warm[1], warm[3], False)

    lam = np.zeros(mer.n_con)
    mu = opts.penalty_init
    total_iters = 0
    prev_viol = math.inf
    converged = False
    measure = math.nan
    for _ in range(opts.max_outer):
        U, X, inner_ok, iters, measure = _inner(mer, U, lam, mu, opts, opts.max_inner)
        total_iters += iters
        f = mer.objective(X)
        if not math.isfinite(f):
            raise NumericOverflowError("objective became non-finite")
        viol = mer.violation(X, U)
        if viol <= tol:
            cand = (f, U.copy(), X.copy(), viol, inner_ok)
            if best is None or f < best[0] or (f == best[0] and inner_ok):
                best = cand
            if inner_ok:
                converged = True
                break
        if mer.n_con:
            c = mer.con_values(X)
            lam = np.clip(lam + mu * c, 0.0, opts.multiplier_max)
            if viol > 0.25 * prev_viol:
                mu *= opts.penalty_growth
        elif inner_ok:
            break
        prev_viol = viol

    warm_f = warm[2] if warm is not None else None
    if best is None:
        return SolveResult(U, X, mer.objective(X), Status.INFEASIBLE, total_iters,
                           mer.violation(X, U), warm_f, measure)
    f, Ub, Xb, vb, ok = best
    if warm is not None and Ub is warm[0]:
        status = Status.WARM_START_RETURNED
    elif ok and converged:
        status = Status.OPTIMAL
    else:
        status = Status.FEASIBLE_IMPROVED
    return SolveResult(Ub, Xb, f, status, total_iters, vb, warm_f, measure)

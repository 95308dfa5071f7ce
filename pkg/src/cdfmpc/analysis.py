"""Certificate checks evaluated on recorded closed-loop data.

All checks are pure functions of their inputs, so re-running them on a
persisted trajectory reproduces the original report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .controller import cyclic_window
from .core import (ComparisonFunction, DimensionError, InsufficientHistoryError,
                   InvalidInputError, NormBallSet)
from .logs import TrajectoryLog
from .storage import KernelFunction, storage_bounds_check

DEFAULT_TOL = 1e-8
SETTLE_EPS = 1e-3


def _as_1d(v, name):
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional")
    return arr


def check_dissipation(V, s, tol: float = DEFAULT_TOL) -> tuple:
    """Check ``V(k+1) - V(k) <= s(k) + tol`` for every consecutive pair.

    Parameters
    ----------
    V : array_like
        Storage values ``V(0), ..., V(T-1)``.
    s : array_like
        Supplies; length ``T - 1`` or ``T`` (a trailing supply without a
        successor storage value is ignored).

    Returns
    -------
    tuple
        ``(ok, worst)`` where ``worst`` is the largest excess of the storage
        increment over the supply, clipped at zero.
    """
    V = _as_1d(V, "V")
    s = _as_1d(s, "s")
    if V.size < 2:
        raise InsufficientHistoryError("dissipation needs at least two storage values")
    if s.size not in (V.size - 1, V.size):
        raise DimensionError(f"{V.size} storage values need {V.size - 1} supplies, got {s.size}")
    excess = (V[1:] - V[:-1]) - s[:V.size - 1]
    worst = max(0.0, float(np.max(excess)))
    return worst <= tol, worst


def _windows(V, states, M, start):
    V = _as_1d(V, "V")
    X = np.asarray(states, dtype=float)
    if M < 1:
        raise InvalidInputError("M must be >= 1")
    if V.size <= start + M:
        raise InsufficientHistoryError(f"need more than {start + M} storage values, got {V.size}")
    if X.shape[0] < V.size:
        raise DimensionError("need one state per storage value")
    return V, X, range(start, V.size - M)


def check_finite_step_clf(V, states, M: int, nu: Callable, tol: float = 0.0,
                          start: int = 0) -> tuple:
    """Windowed decrease ``V(k+M) - V(k) <= -nu(||x(k)||_2) + tol``.

    Returns ``(ok, first_failing_k)``; the second entry is ``None`` on success.
    """
    V, X, ks = _windows(V, states, M, start)
    for k in ks:
        if V[k + M] - V[k] > -nu(float(np.linalg.norm(X[k]))) + tol:
            return False, k
    return True, None


def alpha_s(kernel: KernelFunction, rho: ComparisonFunction) -> ComparisonFunction:
    """``rho o alpha1`` with ``alpha1(c) = lambda_min(Q) c^2``."""
    return ComparisonFunction.compose(rho, kernel.alpha1)


def check_m_step_decrease(V, states, kernel: KernelFunction, M: int,
                          rho: ComparisonFunction, tol: Optional[float] = None,
                          start: int = 0) -> bool:
    """M-step decrease with ``alpha_s = rho o alpha1``.

    The slack defaults to ``M * 1e-8``: the inequality is a sum of ``M``
    one-step dissipation inequalities, each carrying its own slack.
    """
    tol = M * DEFAULT_TOL if tol is None else tol
    return check_finite_step_clf(V, states, M, alpha_s(kernel, rho), tol, start)[0]


@dataclass
class CyclicReport:
    M: int
    start: int
    margins: list
    ok: bool

    @property
    def worst_margin(self) -> float:
        return min((m for _, m in self.margins), default=math.inf)

    @property
    def failing(self) -> list:
        return [k for k, m in self.margins if m < 0]


def check_corollary_condition(s, l, rho: ComparisonFunction, M: int,
                              start: int = 0) -> CyclicReport:
    """Evaluate every window ``sum_{i=j}^{j+M-1} s(i) <= -rho(l(j))``, ``j >= start``.

    ``margins`` lists ``(j, rhs - lhs)`` per window start ``j``. The
    arithmetic is shared with the online check of the controller.
    """
    s = [float(v) for v in s]
    l = [float(v) for v in l]
    margins = []
    ok = True
    for j in range(start, len(s) - M + 1):
        holds, margin = cyclic_window(s, l, j + M - 1, M, rho)
        ok = ok and holds
        margins.append((j, margin))
    return CyclicReport(M, start, margins, ok)


@dataclass
class CrossCheck:
    consistent: bool
    forward_premise: bool
    reverse_premise: bool
    counterexample: Optional[tuple] = None


def proposition1_cross_check(V, s, l, states, kernel: KernelFunction, M: int,
                             rho: ComparisonFunction, tol: float = DEFAULT_TOL,
                             start: int = 0) -> CrossCheck:
    """Both directions of the CDF / finite-step-CLF equivalence on data.

    Forward: dissipation plus the cyclic supply condition must give the
    M-step decrease with ``nu = rho o alpha1``. Reverse: if that decrease
    holds, the supply ``V(k+1) - V(k)`` must satisfy the cyclic condition with
    ``rho_r(r) = nu(sqrt(r / lambda_max))``, since ``l(x) <= lambda_max |x|^2``.
    """
    V = _as_1d(V, "V")
    s = _as_1d(s, "s")[:V.size - 1]
    l = _as_1d(l, "l")
    X = np.asarray(states, dtype=float)
    nu = alpha_s(kernel, rho)
    # restrict to windows fully inside the storage record
    s_w = s[start:]
    diss_ok = check_dissipation(V[start:], s_w, tol)[0]
    cyc = check_corollary_condition(s_w, l[start:], rho, M)
    fwd_premise = diss_ok and cyc.ok
    fsclf_ok, bad = check_finite_step_clf(V, X, M, nu, M * tol, start)
    if fwd_premise and not fsclf_ok:
        return CrossCheck(False, True, fsclf_ok, ("forward", bad))

    rev_premise, _ = check_finite_step_clf(V, X, M, nu, 0.0, start)
    if rev_premise:
        s_tilde = np.diff(V)
        lam_max = kernel.lambda_max
        for k in range(start, V.size - M):
            lhs = math.fsum(s_tilde[k:k + M])
            bound = -nu(math.sqrt(max(l[k], 0.0) / lam_max))
            if lhs > bound + M * tol + 8 * np.finfo(float).eps * max(1.0, abs(V[k])):
                return CrossCheck(False, fwd_premise, True, ("reverse", k))
    return CrossCheck(True, fwd_premise, rev_premise)


@dataclass(frozen=True)
class ConvergenceMetrics:
    settle_time: float
    final_norm: float
    monotone_V_fraction: float

    @property
    def converged(self) -> bool:
        return math.isfinite(self.settle_time)


def convergence_metrics(states, V=None, eps: float = SETTLE_EPS) -> ConvergenceMetrics:
    """Settle time into the ``eps`` ball (``inf`` if never), final norm, V monotonicity.

    Convergence on a finite record is only a surrogate for the asymptotic
    claim: the settle time says the state stayed in the ball until the end.
    """
    X = np.asarray(states, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InsufficientHistoryError("convergence metrics need a nonempty state record")
    nrm = np.linalg.norm(X, axis=1)
    outside = np.nonzero(nrm > eps)[0]
    if outside.size == 0:
        settle = 0.0
    elif outside[-1] == X.shape[0] - 1:
        settle = math.inf
    else:
        settle = float(outside[-1] + 1)
    frac = math.nan
    if V is not None:
        V = _as_1d(V, "V")
        V = V[np.isfinite(V)]
        if V.size >= 2:
            frac = float(np.mean(np.diff(V) <= 0.0))
    return ConvergenceMetrics(settle, float(nrm[-1]), frac)


# ---------------------------------------------------------------------------
# certificate

@dataclass
class CertificateReport:
    dissipation_ok: bool
    dissipation_worst: float
    sets_ok: bool
    sets_worst: float
    cyclic: CyclicReport
    m_step_decrease_ok: bool
    storage_bounds_ok: bool
    k_bounded_ok: bool
    k_ratio_max: float
    proposition1_consistent: bool
    completed: bool
    convergence: ConvergenceMetrics
    reasons: list = field(default_factory=list)

    @property
    def cyclic_ok(self) -> bool:
        return self.cyclic.ok

    @property
    def verdict(self) -> str:
        return "Certified" if not self.reasons else "Uncertified"

    @property
    def certified(self) -> bool:
        return not self.reasons

    def render(self) -> str:
        def b(v):
            return "yes" if v else "no"

        c = self.cyclic
        lines = [
            f"verdict: {self.verdict}",
            f"run_completed: {b(self.completed)}",
            f"dissipation_ok: {b(self.dissipation_ok)} (worst excess {self.dissipation_worst!r})",
            f"sets_ok: {b(self.sets_ok)} (worst violation {self.sets_worst!r})",
            f"cyclic_ok: {b(c.ok)} (M={c.M}, windows from k={c.start}, "
            f"count {len(c.margins)}, worst margin {c.worst_margin!r})",
            f"m_step_decrease_ok: {b(self.m_step_decrease_ok)}",
            f"storage_bounds_ok: {b(self.storage_bounds_ok)}",
            f"k_bounded_ok (advisory): {b(self.k_bounded_ok)} (max |u|/|x| {self.k_ratio_max!r})",
            f"proposition1_consistent: {b(self.proposition1_consistent)}",
            f"settle_time(1e-3): {self.convergence.settle_time!r}",
            f"final_norm: {self.convergence.final_norm!r}",
            f"monotone_V_fraction: {self.convergence.monotone_V_fraction!r}",
        ]
        for r in self.reasons:
            lines.append(f"reason: {r}")
        if c.failing:
            lines.append("failing_windows: " + " ".join(str(k) for k in c.failing[:50]))
        lines.append("window_margins:")
        lines.extend(f"  {k} {m!r}" for k, m in c.margins)
        return "\n".join(lines) + "\n"


def _meta_set(spec, dim: int) -> NormBallSet:
    radius, order = spec
    return NormBallSet(float(radius), order, dim)


def certify(tlog: TrajectoryLog, samples: int = 1000) -> CertificateReport:
    """Re-check every certificate premise on a trajectory log.

    Everything needed (kernel, rho, final ``M``, first window, tolerances,
    sets, seed) is read from the log metadata.
    """
    meta = tlog.meta
    try:
        kernel = KernelFunction(meta["Q"])
        rho = ComparisonFunction.from_dict(meta["rho"])
        M = int(meta["M_final"])
        start = int(meta["cert_start"])
        tol = float(meta.get("tol_stat", DEFAULT_TOL))
        tol_feas = float(meta.get("tol_feas", DEFAULT_TOL))
        xset = _meta_set(meta["state_set"], tlog.n)
        uset = _meta_set(meta["input_set"], tlog.m)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"trajectory metadata incomplete: {exc}") from None
    seed = int(meta.get("seed", 0))

    stepped = [r for r in tlog.rows if r.u is not None]
    reasons = []
    completed = not meta.get("halted")
    if not completed:
        reasons.append(f"run halted: {meta.get('halted')}")
    if not meta.get("adaptation_certified", True):
        reasons.append("cycle-length and horizon caps exhausted")

    V = np.array([r.V for r in stepped], dtype=float)
    s = np.array([r.s for r in stepped], dtype=float)
    l = np.array([r.l for r in stepped], dtype=float)
    X = np.array([r.x for r in stepped], dtype=float).reshape(len(stepped), tlog.n)
    Ns = [r.N for r in stepped]

    # dissipation only compares storage values of equal horizon
    diss_ok, worst = True, 0.0
    for k in range(len(stepped) - 1):
        if Ns[k] != Ns[k + 1]:
            continue
        ok_k, w_k = check_dissipation(V[k:k + 2], s[k:k + 1], tol)
        diss_ok = diss_ok and ok_k
        worst = max(worst, w_k)
    if not diss_ok:
        reasons.append(f"dissipation violated by {worst!r}")

    sets_worst = 0.0
    for r in tlog.rows:
        sets_worst = max(sets_worst, xset.violation(r.x))
        if r.u is not None:
            sets_worst = max(sets_worst, uset.violation(r.u))
    sets_ok = sets_worst <= tol_feas
    if not sets_ok:
        reasons.append(f"state or input set violated by {sets_worst!r}")

    cyc = check_corollary_condition(s[start:], l[start:], rho, M)
    cyc = CyclicReport(M, start, [(j + start, m) for j, m in cyc.margins], cyc.ok)
    if not cyc.ok:
        reasons.append(f"cyclic supply condition fails for M={M} at windows {cyc.failing[:10]}")

    if len(stepped) > start + M:
        mstep = check_m_step_decrease(V, X, kernel, M, rho, M * tol, start)
        prop = proposition1_cross_check(V, s, l, X, kernel, M, rho, tol, start)
        prop_ok = prop.consistent
    else:
        mstep, prop_ok = True, True
    if not mstep:
        reasons.append(f"{M}-step decrease violated")
    if not prop_ok:
        reasons.append("forward/reverse equivalence check found a counterexample")

    sb = storage_bounds_check(kernel, samples, xset.radius, np.random.default_rng(seed))
    if not sb.ok:
        reasons.append("kernel bounds violated on samples")

    # advisory: the applied feedback should be bounded by a function vanishing at 0
    ratio, kb = 0.0, True
    for r in stepped:
        nx = float(np.linalg.norm(r.x))
        nu_ = float(np.linalg.norm(r.u))
        if nx == 0.0:
            kb = kb and nu_ == 0.0
        else:
            ratio = max(ratio, nu_ / nx)

    conv = convergence_metrics(tlog.states, V)
    return CertificateReport(diss_ok, worst, sets_ok, sets_worst, cyc, mstep, sb.ok, kb,
                             ratio, prop_ok, completed, conv, reasons)

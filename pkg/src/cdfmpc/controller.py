"""Receding-horizon schemes built on sum-of-kernels storage.

Two closed-loop schemes are provided:

``problem1_with_2``
    Minimise the storage ``V = sum_{i<N} l(x(i|k))`` over ``N-1`` inputs, then
    extend the optimal plan by one input minimising ``l`` at the appended
    state. The tail gives the supply ``s(k) = l(x_tail) - l(x(k))``. Sliding
    ``M``-step windows of supplies are checked against ``-rho(l)`` and ``M``
    (then ``N``) grows when a window fails.
``problem3``
    Minimise the same storage over ``N`` inputs with the supply of the last
    predicted state bounded by the accumulated budget ``Gamma(k, M)``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (CertificationFailure, ComparisonFunction, DimensionError,
                   InfeasibleError, InsufficientHistoryError, InvalidInputError,
                   NumericOverflowError, as_finite_vector)
from .logs import LogRow, TrajectoryLog
from .model import SystemModel, rollout_full
from .nlp import (ShootingProblem, SolverOptions, StageCost, Status, TerminalConstraint,
                  check_feasible, solve)
from .storage import KernelFunction, SupplyRecord

log = logging.getLogger(__name__)


class Scheme(str, enum.Enum):
    PROBLEM1_WITH_2 = "problem1_with_2"
    PROBLEM3 = "problem3"

    def __str__(self):
        return self.value

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, Scheme):
            return value
        key = str(value).strip().lower()
        for s in cls:
            if s.value == key:
                return s
        raise InvalidInputError(
            f"unknown scheme {value!r}; expected one of {[s.value for s in cls]}")


@dataclass(frozen=True)
class ControllerConfig:
    """Horizon, cycle length and comparison function of one controller.

    Parameters
    ----------
    kernel : KernelFunction
        Stage kernel ``l``.
    N : int
        Storage horizon (number of kernel terms), at least 2.
    M : int
        Initial cycle length of the supply condition.
    M_max, N_max : int
        Caps on online growth of ``M`` and ``N``.
    rho : ComparisonFunction
        Decrease margin; must lie below the identity.
    zero_floor : float
        States with infinity norm at or below this value are snapped to the
        origin, which keeps kernel values out of the subnormal range.
    backoff : float
        Relative tightening of the supply constraint, in units of the
        solver's feasibility tolerance.
    """

    kernel: KernelFunction
    N: int = 4
    M: int = 1
    M_max: int = 10
    N_max: int = 12
    rho: ComparisonFunction = ComparisonFunction.linear(0.99)
    scheme: Scheme = Scheme.PROBLEM1_WITH_2
    solver: SolverOptions = SolverOptions()
    zero_floor: float = 1e-100
    backoff: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        for name in ("N", "M", "M_max", "N_max"):
            v = getattr(self, name)
            if int(v) != v:
                raise InvalidInputError(f"{name} must be an integer")
            object.__setattr__(self, name, int(v))
        if self.N < 2:
            raise InvalidInputError("N must be >= 2")
        if self.N > self.N_max:
            raise InvalidInputError("N must not exceed N_max")
        if not 1 <= self.M <= self.M_max:
            raise InvalidInputError("M must satisfy 1 <= M <= M_max")
        if not isinstance(self.rho, ComparisonFunction):
            raise InvalidInputError("rho must be a ComparisonFunction")
        probe = np.array([1e-6, 1e-3, 1.0, 1e3])
        if not np.all(self.rho(probe) < probe):
            raise InvalidInputError("rho must satisfy rho(s) < s for s > 0")
        if not (self.zero_floor >= 0 and math.isfinite(self.zero_floor)):
            raise InvalidInputError("zero_floor must be finite and non-negative")
        if self.backoff < 0:
            raise InvalidInputError("backoff must be non-negative")


@dataclass
class PredictionPlan:
    """Open-loop plan at time ``k``; ``states`` includes ``x(0|k) = x(k)``."""

    inputs: np.ndarray
    states: np.ndarray
    V: float
    k: int
    N: int
    status: str = Status.OPTIMAL.value

    @property
    def predicted(self) -> np.ndarray:
        """``x*(1|k), ..., x*(L|k)``."""
        return self.states[1:]


@dataclass
class SupplyLedger:
    """Causal record of kernel values, realised supplies and adaptations."""

    l_hist: list = field(default_factory=list)
    s_hist: list = field(default_factory=list)
    records: list = field(default_factory=list)
    M_current: int = 1
    N_current: int = 2
    epoch_start: int = 0
    certified: bool = True
    events: list = field(default_factory=list)

    def record(self, k: int, l_value: float, s_value: float,
               rec: Optional[SupplyRecord] = None) -> None:
        if k != len(self.s_hist):
            raise InvalidInputError(f"ledger records must be contiguous; expected k={len(self.s_hist)}")
        if len(self.l_hist) == k:
            self.l_hist.append(float(l_value))
        elif self.l_hist[k] != float(l_value):
            raise InvalidInputError(f"kernel value at k={k} disagrees with the observed one")
        self.s_hist.append(float(s_value))
        if rec is not None:
            self.records.append(rec)

    def observe(self, k: int, l_value: float) -> None:
        """Store ``l(x(k))`` before the supply of step ``k`` is known."""
        if k != len(self.l_hist) or k != len(self.s_hist):
            raise InvalidInputError(f"ledger observations must be contiguous; got k={k}")
        self.l_hist.append(float(l_value))

    def event(self, k: int, name: str, **info) -> None:
        entry = {"k": k, "event": name, **info}
        self.events.append(entry)
        log.info("k=%d %s %s", k, name, info)


def _horizon1_cost(kernel):
    return StageCost(kernel, (0.0, 1.0))


def _zero_plan(model, x_k, L, k, N) -> PredictionPlan:
    return PredictionPlan(np.zeros((L, model.m)), np.zeros((L + 1, model.n)), 0.0, k, N)


def _storage_cost(kernel, N, L) -> StageCost:
    # one weight per state x(0..L); only x(0..N-1) enter the storage
    return StageCost(kernel, tuple(1.0 if i < N else 0.0 for i in range(L + 1)))


def solve_problem1(cfg: ControllerConfig, model: SystemModel, x_k, warm=None,
                   k: int = 0, N: Optional[int] = None) -> PredictionPlan:
    """Minimise ``sum_{i=0}^{N-1} l(x(i|k))`` over ``N-1`` inputs.

    Raises
    ------
    InfeasibleError
        No plan keeping the predicted states in the state set was found.
    """
    N = cfg.N if N is None else N
    x_k = as_finite_vector(x_k, "x_k")
    L = N - 1
    if not np.any(x_k):
        return _zero_plan(model, x_k, L, k, N)
    prob = ShootingProblem(model, x_k, L, _storage_cost(cfg.kernel, N, L))
    res = solve(prob, warm, cfg.solver)
    if res.status == Status.INFEASIBLE:
        raise InfeasibleError(f"no feasible plan at k={k} (violation {res.max_constraint_violation:.3g})",
                              kind="set", k=k)
    return PredictionPlan(res.inputs, res.states, res.objective_value, k, N, res.status.value)


def _tail_search(cfg, model, x_from, k):
    """Input minimising ``l(f(x_from, u))`` over the sets; ``(u, x_next)``."""
    x_from = as_finite_vector(x_from)
    if not np.any(x_from):
        return np.zeros(model.m), np.zeros(model.n)
    prob = ShootingProblem(model, x_from, 1, _horizon1_cost(cfg.kernel))
    res = solve(prob, None, cfg.solver)
    if res.status == Status.INFEASIBLE:
        raise InfeasibleError(f"no admissible tail input at k={k}", kind="set", k=k)
    return res.inputs[0].copy(), res.states[1].copy()


def solve_problem2(cfg: ControllerConfig, model: SystemModel,
                   plan: PredictionPlan) -> SupplyRecord:
    """Horizon-one tail from the plan's last storage state and the induced supply."""
    x_last = plan.states[plan.N - 1]
    u_tail, x_tail = _tail_search(cfg, model, x_last, plan.k)
    l_cur = cfg.kernel(plan.states[0])
    l_tail = cfg.kernel(x_tail)
    return SupplyRecord(plan.k, l_tail - l_cur, x_tail, u_tail, l_cur, l_tail)


def shift_warm_start(plan: PredictionPlan, tail_input, model: SystemModel,
                     length: Optional[int] = None, cfg: Optional[ControllerConfig] = None):
    """Drop the applied input, append ``tail_input``.

    When ``length`` exceeds the shifted length (for instance after the horizon
    grew), further inputs are appended by horizon-one searches minimising the
    kernel at each appended state; this needs ``cfg``.
    """
    tail = np.asarray(tail_input, dtype=float).reshape(1, model.m)
    W = np.vstack([plan.inputs[1:], tail])
    if length is None or length == W.shape[0]:
        return W
    if length < W.shape[0]:
        return W[:length]
    if cfg is None:
        raise InvalidInputError("extending a warm start needs the controller config")
    X = rollout_full(model, plan.states[0], np.vstack([plan.inputs[:1], W]))
    x = X[-1]
    extra = []
    for _ in range(length - W.shape[0]):
        u, x = _tail_search(cfg, model, x, plan.k + 1)
        extra.append(u)
    return np.vstack([W] + [np.asarray(extra)])


def cyclic_window(s_values, l_values, k: int, M: int, rho: ComparisonFunction):
    """Evaluate ``sum_{i=k-M+1}^{k} s(i) <= -rho(l(k-M+1))``.

    Returns ``(holds, margin)`` with ``margin = rhs - lhs``; the comparison is
    exact, without slack.
    """
    if M < 1:
        raise InvalidInputError("M must be >= 1")
    j = k - M + 1
    if j < 0 or k >= len(s_values) or j >= len(l_values):
        raise InsufficientHistoryError(f"window of length {M} ending at k={k} is not recorded")
    lhs = math.fsum(s_values[j:k + 1])
    rhs = -rho(l_values[j])
    # + 0.0 turns a negative zero margin into 0.0
    return lhs <= rhs, (rhs - lhs) + 0.0


def check_cyclic_condition(ledger: SupplyLedger, k: int, M: int,
                           rho: ComparisonFunction) -> bool:
    return cyclic_window(ledger.s_hist, ledger.l_hist, k, M, rho)[0]


def gamma(ledger: SupplyLedger, k: int, M: int, rho: ComparisonFunction) -> float:
    """Budget ``-sum_{i=k-M+1}^{k-1} s(i) - rho(l(k-M+1))`` for ``k >= M``."""
    if M < 1:
        raise InvalidInputError("M must be >= 1")
    j = k - M + 1
    if k < M or j < 0 or k - 1 >= len(ledger.s_hist) or j >= len(ledger.l_hist):
        raise InsufficientHistoryError(f"Gamma({k}, {M}) needs supplies from k={j}")
    return -math.fsum(ledger.s_hist[j:k]) - rho(ledger.l_hist[j])


def _windows_ok(ledger: SupplyLedger, k: int, M: int, rho) -> bool:
    for t in range(ledger.epoch_start + M - 1, k + 1):
        if not cyclic_window(ledger.s_hist, ledger.l_hist, t, M, rho)[0]:
            return False
    return True


def adapt_cycle(ledger: SupplyLedger, cfg: ControllerConfig, k: int) -> tuple:
    """One adaptation after a failed window at ``k``.

    ``M`` grows by one while it stays within ``M_max``; past the cap the
    horizon grows by one, ``M`` restarts at 1 and a new epoch starts at
    ``k + 1`` (supplies of different horizons are not compared).

    Returns
    -------
    tuple
        ``(M_current, N_current, events)``.

    Raises
    ------
    CertificationFailure
        Both caps are exhausted.
    """
    if ledger.M_current < cfg.M_max:
        ledger.M_current += 1
        ledger.event(k, "increase_M", M=ledger.M_current)
    elif ledger.N_current < cfg.N_max:
        ledger.N_current += 1
        ledger.M_current = 1
        ledger.epoch_start = k + 1
        ledger.event(k, "increase_N", N=ledger.N_current, M=1)
    else:
        ledger.certified = False
        ledger.event(k, "certification_failure", M=ledger.M_current, N=ledger.N_current)
        raise CertificationFailure(
            f"cyclic condition fails at k={k} with M_max={cfg.M_max}, N_max={cfg.N_max}")
    return ledger.M_current, ledger.N_current, ledger.events


def solve_problem3(cfg: ControllerConfig, model: SystemModel, x_k, ledger: SupplyLedger,
                   warm=None, k: int = 0) -> tuple:
    """Storage minimisation over ``N`` inputs with the supply budget for ``k >= M``.

    Returns
    -------
    tuple
        ``(plan, Gamma)`` where ``Gamma`` is ``None`` while the constraint is
        inactive.

    Raises
    ------
    InfeasibleError
        ``kind="supply"`` when only the budget is unattainable, ``kind="set"``
        when the state set itself cannot be met.
    """
    x_k = as_finite_vector(x_k, "x_k")
    N, M = ledger.N_current, ledger.M_current
    L = N
    G = gamma(ledger, k, M, cfg.rho) if k >= M else None
    if not np.any(x_k) and (G is None or G >= 0.0):
        return _zero_plan(model, x_k, L, k, N), G
    term = None
    if G is not None:
        l_k = cfg.kernel(x_k)
        scale = l_k if l_k > 0 else 1.0
        # tightened so that realised supplies meet the budget without slack
        bound = l_k + G - cfg.backoff * cfg.solver.tol_feas * scale
        term = TerminalConstraint(cfg.kernel, bound, scale)
    prob = ShootingProblem(model, x_k, L, _storage_cost(cfg.kernel, N, L), term)
    res = solve(prob, warm, cfg.solver)
    if res.status == Status.INFEASIBLE:
        kind = "set"
        if term is not None:
            free = solve(ShootingProblem(model, x_k, L, _storage_cost(cfg.kernel, N, L)),
                         warm, cfg.solver)
            if free.status != Status.INFEASIBLE:
                kind = "supply"
        raise InfeasibleError(f"{kind} constraints cannot be met at k={k}", kind=kind, k=k)
    return PredictionPlan(res.inputs, res.states, res.objective_value, k, N,
                          res.status.value), G


def _advance(model, cfg, x, u):
    x_next = rollout_full(model, x, u.reshape(1, -1))[1]
    if cfg.zero_floor > 0 and np.max(np.abs(x_next)) <= cfg.zero_floor and np.any(x_next):
        return np.zeros_like(x_next), True
    return x_next, False


def _meta(cfg: ControllerConfig, model: SystemModel, x0, steps: int) -> dict:
    return {
        "model": model.name,
        "Q": cfg.kernel.Q.tolist(),
        "rho": cfg.rho.to_dict(),
        "scheme": cfg.scheme.value,
        "N_initial": cfg.N,
        "M_initial": cfg.M,
        "M_max": cfg.M_max,
        "N_max": cfg.N_max,
        "tol_feas": cfg.solver.tol_feas,
        "tol_stat": cfg.solver.tol_stat,
        "zero_floor": cfg.zero_floor,
        "x0": [float(v) for v in x0],
        "steps": steps,
        "state_set": [model.state_set.radius, str(model.state_set.norm_order)],
        "input_set": [model.input_set.radius, str(model.input_set.norm_order)],
    }


def closed_loop(cfg: ControllerConfig, model: SystemModel, x0, steps: int) -> TrajectoryLog:
    """Apply the configured scheme for ``steps`` steps from ``x0``.

    The returned log has one row per visited state; the terminal row carries
    no input. A run that meets an infeasible problem stops early with
    ``meta["halted"]`` describing the failure. ``meta["cert_start"]`` is the
    first time index whose windows the certificate has to cover.
    """
    x0 = as_finite_vector(x0, "x0")
    if x0.shape[0] != model.n:
        raise InvalidInputError("x0 dimension does not match the model")
    if steps < 1:
        raise InvalidInputError("steps must be >= 1")
    if not model.state_set.contains(x0):
        raise InvalidInputError("x0 is outside the state set")
    if cfg.scheme == Scheme.PROBLEM3:
        return _closed_loop_p3(cfg, model, x0, steps)
    return _closed_loop_p12(cfg, model, x0, steps)


def _finish(tlog, ledger, cfg, x, k, halted, cert_start):
    tlog.rows.append(LogRow(k=k, x=x.copy(), l=cfg.kernel(x), M=ledger.M_current,
                            N=ledger.N_current))
    tlog.meta.update({
        "halted": halted,
        "cert_start": cert_start,
        "M_final": ledger.M_current,
        "N_final": ledger.N_current,
        "adaptation_certified": ledger.certified,
    })
    tlog.events = list(ledger.events)
    return tlog


def _check_warm(ledger, cfg, model, x, warm, L, k):
    if warm is None:
        return
    prob = ShootingProblem(model, x, L, _storage_cost(cfg.kernel, L, L))
    ok, viol = check_feasible(prob, warm)
    if not ok:
        ledger.event(k, "warm_start_infeasible", violation=viol)


def _closed_loop_p12(cfg, model, x0, steps):
    tlog = TrajectoryLog(model.n, model.m, meta=_meta(cfg, model, x0, steps))
    ledger = SupplyLedger(M_current=cfg.M, N_current=cfg.N)
    x = x0.copy()
    warm = None
    halted = None
    for k in range(steps):
        N = ledger.N_current
        _check_warm(ledger, cfg, model, x, warm, N - 1, k)
        try:
            plan = solve_problem1(cfg, model, x, warm, k, N)
            sup = solve_problem2(cfg, model, plan)
        except InfeasibleError as exc:
            halted = {"k": k, "kind": exc.kind, "message": str(exc)}
            ledger.event(k, "infeasible", kind=exc.kind)
            break
        except (NumericOverflowError, DimensionError) as exc:
            halted = {"k": k, "kind": "error", "message": str(exc)}
            ledger.event(k, "error")
            break
        ledger.record(k, sup.l_current, sup.s_value, sup)
        cyclic, margin = None, None
        if k >= ledger.epoch_start + ledger.M_current - 1 and ledger.certified:
            try:
                while not _windows_ok(ledger, k, ledger.M_current, cfg.rho):
                    adapt_cycle(ledger, cfg, k)
                    if ledger.epoch_start > k:
                        break
                    if k < ledger.epoch_start + ledger.M_current - 1:
                        break
            except CertificationFailure as exc:
                log.warning("%s; continuing uncertified", exc)
        M = ledger.M_current
        if ledger.epoch_start <= k - M + 1:
            cyclic, margin = cyclic_window(ledger.s_hist, ledger.l_hist, k, M, cfg.rho)
        tlog.rows.append(LogRow(k=k, x=x.copy(), u=plan.inputs[0].copy(), l=sup.l_current,
                                V=plan.V, s=sup.s_value, M=M, N=plan.N,
                                status=plan.status, cyclic=cyclic, margin=margin))
        x_next, snapped = _advance(model, cfg, x, plan.inputs[0])
        if snapped:
            ledger.event(k + 1, "zero_floor_snap")
        L_next = ledger.N_current - 1
        warm = shift_warm_start(plan, sup.tail_input, model, L_next, cfg)
        if snapped:
            warm = None
        x = x_next
    else:
        k = steps
    if halted is not None:
        k = halted["k"]
    return _finish(tlog, ledger, cfg, x, k, halted, ledger.epoch_start)


def _closed_loop_p3(cfg, model, x0, steps):
    tlog = TrajectoryLog(model.n, model.m, meta=_meta(cfg, model, x0, steps))
    ledger = SupplyLedger(M_current=cfg.M, N_current=cfg.N)
    M = cfg.M
    x = x0.copy()
    warm = None
    halted = None
    for k in range(steps):
        _check_warm(ledger, cfg, model, x, warm, ledger.N_current, k)
        l_k = cfg.kernel(x)
        ledger.observe(k, l_k)
        try:
            plan, G = solve_problem3(cfg, model, x, ledger, warm, k)
        except InfeasibleError as exc:
            halted = {"k": k, "kind": exc.kind, "message": str(exc)}
            ledger.event(k, "infeasible", kind=exc.kind)
            break
        except (NumericOverflowError, DimensionError) as exc:
            halted = {"k": k, "kind": "error", "message": str(exc)}
            ledger.event(k, "error")
            break
        x_N = plan.states[-1]
        s = cfg.kernel(x_N) - l_k
        ledger.record(k, l_k, s)
        cyclic, margin = None, None
        if k >= M - 1:
            cyclic, margin = cyclic_window(ledger.s_hist, ledger.l_hist, k, M, cfg.rho)
        tlog.rows.append(LogRow(k=k, x=x.copy(), u=plan.inputs[0].copy(), l=l_k, V=plan.V,
                                s=s, gamma=G, M=M, N=plan.N, status=plan.status,
                                cyclic=cyclic, margin=margin))
        x_next, snapped = _advance(model, cfg, x, plan.inputs[0])
        if snapped:
            ledger.event(k + 1, "zero_floor_snap")
            warm = None
        else:
            try:
                u_extra, _ = _tail_search(cfg, model, x_N, k)
                warm = np.vstack([plan.inputs[1:], u_extra.reshape(1, -1)])
            except InfeasibleError:
                ledger.event(k, "no_admissible_extension")
                warm = None
        x = x_next
    else:
        k = steps
    if halted is not None:
        k = halted["k"]
    # the budget constraint only binds for k >= M, so earlier windows are exempt
    return _finish(tlog, ledger, cfg, x, k, halted, 1)

import math

import numpy as np
import pytest

from cdfmpc.controller import (ControllerConfig, PredictionPlan, Scheme, SupplyLedger,
                               adapt_cycle, check_cyclic_condition, closed_loop, cyclic_window,
                               gamma, shift_warm_start, solve_problem1, solve_problem2,
                               solve_problem3)
from cdfmpc.core import (CertificationFailure, ComparisonFunction, InfeasibleError,
                         InsufficientHistoryError, InvalidInputError)
from cdfmpc.model import get_model, rollout_full
from cdfmpc.nlp import ShootingProblem, StageCost, check_feasible, solve
from cdfmpc.storage import KernelFunction

Q_DIAG = [0.1, 10, 0.1, 10]
X0 = np.array([0.0, 0.15, 0.0, -0.15])
RHO = ComparisonFunction.linear(0.99)
GOLDEN_V_N4 = 35.180329622636918


def _cfg(N=4, **kw):
    return ControllerConfig(KernelFunction(Q_DIAG), N=N, **kw)


def _scalar_cfg(N=2, **kw):
    return ControllerConfig(KernelFunction([1.0]), N=N, **kw)


def _ledger(s, l, M=1, N=4):
    led = SupplyLedger(M_current=M, N_current=N)
    for k, (sv, lv) in enumerate(zip(s, l)):
        led.record(k, lv, sv)
    return led


# -- configuration -----------------------------------------------------------

def test_config_validation():
    with pytest.raises(InvalidInputError):
        _cfg(N=1)
    with pytest.raises(InvalidInputError):
        _cfg(N=5, N_max=4)
    with pytest.raises(InvalidInputError):
        _cfg(M=0)
    with pytest.raises(InvalidInputError):
        _cfg(M=11)
    with pytest.raises(InvalidInputError):
        _cfg(rho=ComparisonFunction.linear(1.0))
    with pytest.raises(InvalidInputError):
        _cfg(scheme="problem9")
    assert _cfg(scheme="problem3").scheme is Scheme.PROBLEM3
    c = _cfg()
    assert (c.M_max, c.N_max) == (10, 12)


# -- Problem 1 ---------------------------------------------------------------

def test_problem1_equilibrium():
    plan = solve_problem1(_cfg(5), get_model("generator2"), np.zeros(4))
    assert plan.V == 0.0 and not np.any(plan.inputs) and not np.any(plan.states)
    assert plan.inputs.shape == (4, 2)


def test_problem1_scalar_deadbeat():
    plan = solve_problem1(_scalar_cfg(), get_model("scalar_linear"), [1.0])
    assert plan.inputs.ravel()[0] == pytest.approx(-0.5, abs=1e-12)
    assert plan.predicted[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert plan.V == pytest.approx(1.0, rel=1e-12)


def test_problem1_generator_regression():
    plan = solve_problem1(_cfg(4), get_model("generator2"), X0)
    assert plan.inputs.shape == (3, 2)
    assert plan.V == pytest.approx(GOLDEN_V_N4, rel=1e-9)
    assert np.array_equal(plan.states, rollout_full(get_model("generator2"), X0, plan.inputs))
    assert np.max(np.abs(plan.states)) <= 10 + 1e-8
    assert np.max(np.abs(plan.inputs)) <= 5


def test_problem1_infeasible():
    m = get_model("generator2", state_norm=2)
    with pytest.raises(InfeasibleError) as ei:
        solve_problem1(_cfg(3), m, X0)
    assert ei.value.kind == "set"


# -- Problem 2 ---------------------------------------------------------------

def test_problem2_equilibrium_tail():
    m = get_model("scalar_linear")
    plan = PredictionPlan(np.array([[-0.5]]), np.array([[1.0], [0.0]]), 1.0, 0, 2)
    rec = solve_problem2(_scalar_cfg(), m, plan)
    assert rec.tail_input.tolist() == [0.0] and rec.tail_state.tolist() == [0.0]
    assert rec.s_value == -1.0


def test_problem2_scalar_clamped():
    m = get_model("scalar_linear", input_radius=1.0)
    # last storage state 3: minimise (1.5 + u)^2 over |u| <= 1 -> u = -1, x = 0.5
    plan = PredictionPlan(np.array([[0.0]]), np.array([[6.0], [3.0]]), 45.0, 0, 2)
    rec = solve_problem2(_scalar_cfg(), m, plan)
    assert rec.tail_input.tolist() == [-1.0]
    assert rec.tail_state[0] == pytest.approx(0.5, abs=1e-15)
    assert rec.s_value == pytest.approx(0.25 - 36.0, rel=1e-15)


def test_problem2_zero_state():
    plan = solve_problem1(_cfg(4), get_model("generator2"), np.zeros(4))
    assert solve_problem2(_cfg(4), get_model("generator2"), plan).s_value == 0.0


# -- warm start --------------------------------------------------------------

def test_shift_examples():
    m = get_model("scalar_linear")
    plan = PredictionPlan(np.array([[1.0], [2.0], [3.0]]), np.zeros((4, 1)), 0.0, 0, 4)
    assert shift_warm_start(plan, [4.0], m).ravel().tolist() == [2.0, 3.0, 4.0]
    zero = PredictionPlan(np.zeros((3, 1)), np.zeros((4, 1)), 0.0, 0, 4)
    assert not np.any(shift_warm_start(zero, [0.0], m))


def test_shift_extension_needs_config():
    m = get_model("scalar_linear")
    plan = PredictionPlan(np.array([[0.5]]), np.array([[1.0], [1.0]]), 0.0, 0, 2)
    with pytest.raises(InvalidInputError):
        shift_warm_start(plan, [0.0], m, length=3)
    W = shift_warm_start(plan, [0.0], m, length=3, cfg=_scalar_cfg())
    assert W.shape == (3, 1)


def test_shifted_warm_start_feasible_generator():
    m = get_model("generator2")
    cfg = _cfg(4)
    plan = solve_problem1(cfg, m, X0)
    rec = solve_problem2(cfg, m, plan)
    W = shift_warm_start(plan, rec.tail_input, m)
    x1 = rollout_full(m, X0, plan.inputs[:1])[1]
    p = ShootingProblem(m, x1, 3, StageCost(cfg.kernel, (1.0,) * 4))
    ok, viol = check_feasible(p, W)
    assert ok, viol
    # the shifted objective equals V - l(x) + l(tail), so the next V cannot exceed it
    nxt = solve(p, W)
    assert nxt.objective_value <= plan.V + rec.s_value + 1e-10


# -- cyclic condition, adaptation, budget -----------------------------------

def test_cyclic_examples():
    assert check_cyclic_condition(_ledger([0.0], [0.0]), 0, 1, RHO)
    assert check_cyclic_condition(_ledger([-0.5], [0.45]), 0, 1, RHO)
    assert not check_cyclic_condition(_ledger([-0.4], [0.45]), 0, 1, RHO)


def test_cyclic_exact_comparison():
    # equality holds exactly: no slack either way
    led = _ledger([-0.99 * 0.5], [0.5])
    ok, margin = cyclic_window(led.s_hist, led.l_hist, 0, 1, RHO)
    assert ok and margin == 0.0
    led = _ledger([math.nextafter(-0.99 * 0.5, 0.0)], [0.5])
    assert not check_cyclic_condition(led, 0, 1, RHO)


def test_cyclic_insufficient_history():
    led = _ledger([-1.0], [1.0])
    with pytest.raises(InsufficientHistoryError):
        check_cyclic_condition(led, 0, 2, RHO)
    with pytest.raises(InsufficientHistoryError):
        check_cyclic_condition(led, 1, 1, RHO)


def test_adapt_examples():
    cfg = _cfg(4, M_max=5, N_max=9)
    led = SupplyLedger(M_current=4, N_current=4)
    assert adapt_cycle(led, cfg, 10)[:2] == (5, 4)
    assert adapt_cycle(led, cfg, 11)[:2] == (1, 5)
    assert led.epoch_start == 12
    assert [e["event"] for e in led.events] == ["increase_M", "increase_N"]


def test_adapt_no_change_when_condition_holds():
    cfg = _cfg(4)
    m = get_model("generator2")
    tlog = closed_loop(cfg, m, np.zeros(4), 5)
    assert tlog.meta["M_final"] == 1 and tlog.events == []


def test_adapt_caps_exhausted():
    cfg = _cfg(4, M_max=5, N_max=4)
    led = SupplyLedger(M_current=5, N_current=4)
    with pytest.raises(CertificationFailure):
        adapt_cycle(led, cfg, 3)
    assert not led.certified


def test_gamma_examples():
    led = _ledger([-0.2, -0.3, -0.1], [0.6, 0.45, 0.2])
    assert gamma(led, 2, 1, RHO) == -0.99 * 0.2
    assert gamma(led, 2, 2, RHO) == pytest.approx(0.3 - 0.4455, abs=1e-16)
    assert gamma(_ledger([0.0, 0.0], [0.0, 0.0]), 1, 1, RHO) == 0.0
    with pytest.raises(InsufficientHistoryError):
        gamma(led, 1, 3, RHO)
    with pytest.raises(InsufficientHistoryError):
        gamma(led, 1, 2, RHO)


def test_ledger_contiguous():
    led = SupplyLedger()
    led.record(0, 1.0, -1.0)
    with pytest.raises(InvalidInputError):
        led.record(2, 1.0, -1.0)


# -- Problem 3 ---------------------------------------------------------------

def test_problem3_equilibrium():
    led = SupplyLedger(M_current=1, N_current=8)
    led.observe(0, 0.0)
    plan, G = solve_problem3(_cfg(8), get_model("generator2"), np.zeros(4), led, k=0)
    assert plan.V == 0.0 and plan.inputs.shape == (8, 2) and G is None
    led.record(0, 0.0, 0.0)
    led.observe(1, 0.0)
    plan, G = solve_problem3(_cfg(8), get_model("generator2"), np.zeros(4), led, k=1)
    assert G == 0.0 and plan.V == 0.0


def test_problem3_startup_matches_problem1_form():
    m = get_model("generator2")
    cfg = _cfg(6, M=2)
    led = SupplyLedger(M_current=2, N_current=6)
    led.observe(0, cfg.kernel(X0))
    plan, G = solve_problem3(cfg, m, X0, led, k=0)
    assert G is None
    ref = solve(ShootingProblem(m, X0, 6, StageCost(cfg.kernel, (1.0,) * 6 + (0.0,))))
    assert plan.inputs.shape == (6, 2)
    assert plan.V == pytest.approx(ref.objective_value, rel=1e-12)


def test_problem3_infeasibility_kinds():
    tlog = closed_loop(_cfg(6, scheme="problem3"), get_model("generator2"), X0, 20)
    assert tlog.meta["halted"]["kind"] == "supply"
    m2 = get_model("generator2", state_norm=2)
    tlog = closed_loop(_cfg(6, scheme="problem3"), m2, X0, 5)
    assert tlog.meta["halted"]["kind"] == "set"
    assert tlog.meta["halted"]["k"] == 0


# -- closed loop -------------------------------------------------------------

@pytest.mark.parametrize("scheme", ["problem1_with_2", "problem3"])
def test_closed_loop_equilibrium(scheme):
    tlog = closed_loop(_cfg(8, scheme=scheme), get_model("generator2"), np.zeros(4), 30)
    assert len(tlog.rows) == 31
    assert not np.any(tlog.states) and not np.any(tlog.inputs)
    assert not np.any(tlog.s)
    assert tlog.meta["halted"] is None


def test_closed_loop_rejects_bad_start():
    with pytest.raises(InvalidInputError):
        closed_loop(_cfg(4), get_model("generator2"), [11, 0, 0, 0], 5)
    with pytest.raises(InvalidInputError):
        closed_loop(_cfg(4), get_model("generator2"), X0, 0)


def test_closed_loop_n4_certifies_at_m5(runs):
    tlog, _ = runs.get(4)
    assert tlog.meta["M_final"] == 5
    assert [e["M"] for e in tlog.events if e["event"] == "increase_M"] == [2, 3, 4, 5]


def test_closed_loop_n9_only_first_window_fails_at_m1(runs):
    # the exact optimum at k = 0 gives s(0) = -0.3632 > -0.99 * 0.45; every later
    # single-step window passes
    tlog, _ = runs.get(9)
    s, l = list(tlog.s), list(tlog.l)
    assert s[0] == pytest.approx(-0.36316, abs=1e-4)
    assert not cyclic_window(s, l, 0, 1, RHO)[0]
    assert all(cyclic_window(s, l, k, 1, RHO)[0] for k in range(1, len(s)))


@pytest.mark.parametrize("key", [(4, "problem1_with_2"), (9, "problem1_with_2"), (8, "problem3")])
def test_closed_loop_invariants(runs, key):
    tlog, _ = runs.get(*key)
    V, s = tlog.V, tlog.s
    assert np.all(np.diff(V) <= s[:-1] + 1e-8)
    assert np.max(np.abs(tlog.states)) <= 10 + 1e-8
    assert np.max(np.abs(tlog.inputs)) <= 5 + 1e-8
    assert not [e for e in tlog.events if e["event"] == "warm_start_infeasible"]
    assert tlog.meta["halted"] is None


def test_problem3_ledger_consistency(runs):
    tlog, _ = runs.get(8, "problem3")
    led = _ledger(tlog.s, tlog.l[:-1], M=1, N=8)
    for r in tlog.rows:
        if r.gamma is not None:
            assert gamma(led, r.k, 1, RHO) == r.gamma
            assert r.s <= r.gamma


def test_zero_floor_snap_logged(runs):
    tlog, _ = runs.get(4)
    snaps = [e for e in tlog.events if e["event"] == "zero_floor_snap"]
    assert len(snaps) == 1
    k = snaps[0]["k"]
    assert not np.any(tlog.rows[k].x) and np.any(tlog.rows[k - 1].x)

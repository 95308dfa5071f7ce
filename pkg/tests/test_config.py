import numpy as np
import pytest

from cdfmpc.config import ConfigError, bundled_scenario, load_scenario, parse_scenario
from cdfmpc.controller import Scheme

BASE = """
[model]
name = generator2
x0 = 0, 0.15, 0, -0.15
[controller]
N = 4
Q = 0.1, 10, 0.1, 10
[run]
steps = 10
"""


def test_bundled_scenarios_parse():
    for name, N, scheme in [("gen2_N4.cfg", 4, Scheme.PROBLEM1_WITH_2),
                            ("gen2_N9.cfg", 9, Scheme.PROBLEM1_WITH_2),
                            ("gen2_P3_N8.cfg", 8, Scheme.PROBLEM3)]:
        sc = load_scenario(bundled_scenario(name))
        assert sc.controller.N == N and sc.controller.scheme is scheme
        assert sc.steps == 600 and sc.controller.M == 1
        assert sc.x0.tolist() == [0, 0.15, 0, -0.15]
        assert sc.controller.rho.params == (0.99,)
        assert np.array_equal(sc.controller.kernel.Q, np.diag([0.1, 10, 0.1, 10]))


def test_defaults():
    sc = parse_scenario(BASE)
    assert sc.controller.M_max == 10 and sc.controller.N_max == 12
    assert sc.controller.solver.tol_feas == 1e-8


def test_matrix_q():
    sc = parse_scenario(BASE.replace("Q = 0.1, 10, 0.1, 10",
                                     "Q = [[1,0,0,0],[0,2,0,0],[0,0,3,0],[0,0,0,4]]"))
    assert sc.controller.kernel.lambda_max == 4


@pytest.mark.parametrize("text, where", [
    (BASE + "\n[extra]\na = 1\n", "[extra]"),
    (BASE.replace("N = 4", "N = 4\nhorizon = 4"), "[controller] horizon"),
    (BASE.replace("N = 4", "N = four"), "[controller] N"),
    (BASE.replace("N = 4", "N = 1"), "[controller]"),
    (BASE.replace("x0 = 0, 0.15, 0, -0.15", "x0 = 0, 0.15"), "[model] x0"),
    (BASE.replace("generator2", "pendulum"), "[model] name"),
    (BASE.replace("Q = 0.1, 10, 0.1, 10", "Q = 1, -1, 1, 1"), "[controller] Q"),
    (BASE.replace("steps = 10", "steps = 0"), "[run] steps"),
    (BASE + "\n[solver]\ntol_stat = -1\n", "[solver]"),
    (BASE.replace("[run]", "[run]\nseed = x"), "[run] seed"),
])
def test_errors_name_field(text, where):
    with pytest.raises(ConfigError, match=where.replace("[", r"\[").replace("]", r"\]")):
        parse_scenario(text, "s.cfg")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "nope.cfg")

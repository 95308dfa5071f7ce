import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdfmpc.logs import LogParseError, LogRow, TrajectoryLog, ledger_csv

floats = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.lists(floats, min_size=2, max_size=2), floats, floats, floats,
                          st.one_of(st.none(), floats), st.booleans()),
                min_size=1, max_size=8))
def test_round_trip_exact(rows):
    log = TrajectoryLog(2, 1, meta={"model": "x", "Q": [[1.0, 0.0], [0.0, 2.0]]})
    for k, (x, u, V, s, g, c) in enumerate(rows):
        log.rows.append(LogRow(k, np.array(x), np.array([u]), abs(V), V, s, g, 2, 4,
                               "Optimal", c))
    log.rows.append(LogRow(len(rows), np.array([0.0, 1.0]), l=1.0))
    back = TrajectoryLog.from_csv(log.to_csv())
    assert back.to_csv() == log.to_csv()
    for a, b in zip(log.rows, back.rows):
        assert a.x.tobytes() == b.x.tobytes()
        assert (a.V, a.s, a.gamma, a.M, a.N, a.cyclic) == (b.V, b.s, b.gamma, b.M, b.N, b.cyclic)
    assert back.meta == log.meta
    assert back.rows[-1].u is None


def test_columns_order():
    assert TrajectoryLog(2, 1).columns() == ["k", "x1", "x2", "u1", "l", "V", "s", "Gamma",
                                             "M", "N", "status", "cyclic"]


def test_parse_errors_name_location(tmp_path):
    with pytest.raises(LogParseError):
        TrajectoryLog.from_csv("")
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(LogParseError, match="empty"):
        TrajectoryLog.read_csv(p)
    head = ",".join(TrajectoryLog(1, 1).columns())
    with pytest.raises(LogParseError, match="row 1, column 'x1'"):
        TrajectoryLog.from_csv(head + "\n0,abc,1,1,1,1,,1,2,Optimal,\n")
    with pytest.raises(LogParseError, match="row 1: expected"):
        TrajectoryLog.from_csv(head + "\n0,1\n")
    with pytest.raises(LogParseError, match="header"):
        TrajectoryLog.from_csv("k,y1\n0,1\n")
    with pytest.raises(LogParseError, match="cyclic"):
        TrajectoryLog.from_csv(head + "\n0,1,1,1,1,1,,1,2,Optimal,yes\n")


def test_ledger_csv():
    log = TrajectoryLog(1, 1)
    log.rows.append(LogRow(0, np.array([1.0]), np.array([0.0]), 1.0, 2.0, -0.5, None, 1, 2,
                           "Optimal", True, 0.49))
    log.rows.append(LogRow(1, np.array([0.5])))
    assert ledger_csv(log) == "k,s,Gamma,M,margin\n0,-0.5,,1,0.48999999999999999\n"

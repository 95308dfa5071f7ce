import subprocess
import sys

import pytest

from cdfmpc.cli import main
from cdfmpc.config import bundled_scenario

SMALL = """
[model]
name = generator2
x0 = {x0}
[controller]
scheme = {scheme}
N = {N}
Q = 0.1, 10, 0.1, 10
[run]
steps = {steps}
"""


def _cfg(tmp_path, x0="0, 0.15, 0, -0.15", scheme="problem1_with_2", N=4, steps=40):
    p = tmp_path / "s.cfg"
    p.write_text(SMALL.format(x0=x0, scheme=scheme, N=N, steps=steps))
    return p


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(_cfg(tmp_path)), "--out-dir", str(out)]) == 0
    for name in ("trajectory.csv", "ledger.csv", "certificate.txt", "summary.txt",
                 "columns.txt"):
        assert (out / name).is_file()
    assert "verdict: Certified" in (out / "certificate.txt").read_text()
    assert "M=5" in capsys.readouterr().out


def test_global_flags_before_or_after_verb(tmp_path):
    cfg = _cfg(tmp_path)
    assert main(["--out-dir", str(tmp_path / "a"), "--seed", "3", "run", str(cfg)]) == 0
    assert main(["run", str(cfg), "--out-dir", str(tmp_path / "b"), "--seed", "3"]) == 0
    assert ((tmp_path / "a" / "trajectory.csv").read_bytes()
            == (tmp_path / "b" / "trajectory.csv").read_bytes())


def test_check_reproduces_certificate(tmp_path):
    out = tmp_path / "out"
    main(["run", str(_cfg(tmp_path)), "--out-dir", str(out)])
    assert main(["check", str(out / "trajectory.csv"), "--out-dir", str(tmp_path / "chk")]) == 0
    assert ((tmp_path / "chk" / "certificate.txt").read_bytes()
            == (out / "certificate.txt").read_bytes())


def test_check_detects_edit(tmp_path, capsys):
    out = tmp_path / "out"
    main(["run", str(_cfg(tmp_path)), "--out-dir", str(out)])
    lines = (out / "trajectory.csv").read_text().splitlines()
    hdr = next(i for i, ln in enumerate(lines) if ln.startswith("k,"))
    cols = lines[hdr].split(",")
    row = lines[hdr + 7].split(",")  # k=6; step 5->6 has no slack
    row[cols.index("V")] = repr(float(row[cols.index("V")]) + 0.5)
    lines[hdr + 7] = ",".join(row)
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    assert main(["check", str(bad)]) == 1
    assert "dissipation violated" in capsys.readouterr().out
    assert main(["check", str(bad), "--allow-uncertified"]) == 0


def test_check_parse_errors(tmp_path, capsys):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    assert main(["check", str(empty)]) == 2
    assert "error" in capsys.readouterr().err


def test_config_error_exit(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("[model]\nname = generator2\nx0 = 0,0,0,0\nbogus = 1\n")
    assert main(["run", str(p)]) == 2
    assert "[model] bogus" in capsys.readouterr().err


def test_uncertified_exit_codes(tmp_path):
    cfg = tmp_path / "n3.cfg"
    cfg.write_text(SMALL.format(x0="0, 0.15, 0, -0.15", scheme="problem1_with_2", N=3,
                                steps=40) + "[controller]\n".replace("[controller]\n", ""))
    text = cfg.read_text().replace("N = 3", "N = 3\nN_max = 3\nM_max = 3")
    cfg.write_text(text)
    assert main(["run", str(cfg), "--out-dir", str(tmp_path / "o")]) == 1
    assert main(["run", str(cfg), "--out-dir", str(tmp_path / "o"), "--allow-uncertified"]) == 0


def test_halted_run_persists_partial_log(tmp_path):
    cfg = _cfg(tmp_path, scheme="problem3", N=6, steps=30)
    out = tmp_path / "o"
    assert main(["run", str(cfg), "--out-dir", str(out), "--allow-uncertified"]) == 2
    text = (out / "trajectory.csv").read_text()
    assert '"kind": "supply"' in text
    assert "halted" in (out / "summary.txt").read_text()


def test_sweep_table(tmp_path, capsys):
    cfg = _cfg(tmp_path, x0="0, 0, 0, 0", steps=5)
    assert main(["sweep", str(cfg), "--param", "N", "--from", "2", "--to", "4",
                 "--out-dir", str(tmp_path / "sw")]) == 0
    table = (tmp_path / "sw" / "sweep.csv").read_text().splitlines()
    assert table[0] == "value,converged,certified_M,settle_time,verdict,N_final,halted"
    assert [r.split(",")[:2] for r in table[1:]] == [["2", "yes"], ["3", "yes"], ["4", "yes"]]
    assert "smallest converging N: 2" in capsys.readouterr().out


def test_sweep_empty_range(tmp_path):
    cfg = _cfg(tmp_path, steps=5)
    assert main(["sweep", str(cfg), "--param", "N", "--from", "5", "--to", "4",
                 "--out-dir", str(tmp_path / "sw")]) == 0
    assert (tmp_path / "sw" / "sweep.csv").read_text().strip() == \
        "value,converged,certified_M,settle_time,verdict,N_final,halted"


def test_sweep_parallel_matches_serial(tmp_path):
    cfg = _cfg(tmp_path, steps=20)
    args = ["sweep", str(cfg), "--param", "M", "--from", "1", "--to", "3"]
    main(args + ["--out-dir", str(tmp_path / "a")])
    main(args + ["--out-dir", str(tmp_path / "b"), "--jobs", "2"])
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()


def test_console_script_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "cdfmpc.cli", "--help"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and "run" in r.stdout and "sweep" in r.stdout


@pytest.mark.slow
def test_bundled_n4_scenario(tmp_path):
    assert main(["run", str(bundled_scenario("gen2_N4.cfg")), "--out-dir", str(tmp_path)]) == 0

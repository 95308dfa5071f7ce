"""Command line: ``run``, ``sweep`` and ``check``.

Exit status: 0 when the run completed and was certified (or
``--allow-uncertified`` was given), 1 for an uncertified but completed run,
2 for configuration errors, halted runs and unreadable logs.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import io
import logging
import sys
import time
from pathlib import Path

from .analysis import CertificateReport, certify
from .config import ConfigError, Scenario, load_scenario
from .controller import closed_loop
from .core import CdfError
from .logs import LogParseError, TrajectoryLog, ledger_csv

EXIT_OK, EXIT_UNCERTIFIED, EXIT_ERROR = 0, 1, 2

log = logging.getLogger("cdfmpc")

COLUMN_DOC = {
    "k": "time index",
    "x": "state entry (x1..xn)",
    "u": "applied input entry (u1..um); empty on the terminal row",
    "l": "kernel value l(x(k))",
    "V": "optimal storage value at x(k)",
    "s": "realised supply at step k",
    "Gamma": "accumulated supply budget (only where the budget constraint is active)",
    "M": "cycle length in force after step k",
    "N": "horizon used at step k",
    "status": "solver status of the plan",
    "cyclic": "1/0 result of the window ending at k, empty when not yet defined",
}


def column_manifest(tlog: TrajectoryLog) -> str:
    lines = ["# trajectory.csv"]
    for i, col in enumerate(tlog.columns()):
        key = col if col in COLUMN_DOC else col[0]
        lines.append(f"{i}\t{col}\t{COLUMN_DOC[key]}")
    lines += ["", "# ledger.csv",
              "0\tk\ttime index",
              "1\ts\trealised supply",
              "2\tGamma\taccumulated supply budget",
              "3\tM\tcycle length in force",
              "4\tmargin\twindow margin -rho(l) - sum(s); negative means the window fails"]
    return "\n".join(lines) + "\n"


def _summary(sc: Scenario, tlog: TrajectoryLog, rep: CertificateReport) -> str:
    m = tlog.meta
    conv = rep.convergence
    lines = [
        f"scenario: {sc.name}",
        f"scheme: {m['scheme']}",
        f"steps_requested: {sc.steps}",
        f"steps_completed: {len(tlog.rows) - 1}",
        f"verdict: {rep.verdict}",
        f"N_final: {m['N_final']}",
        f"M_final: {m['M_final']}",
        f"converged: {'yes' if conv.converged and rep.completed else 'no'}",
        f"settle_time: {conv.settle_time!r}",
        f"final_norm: {conv.final_norm!r}",
        f"halted: {m['halted']}",
        f"events: {len(tlog.events)}",
    ]
    lines += [f"  {e}" for e in tlog.events]
    return "\n".join(lines) + "\n"


def _write_outputs(out: Path, sc: Scenario, tlog: TrajectoryLog, rep: CertificateReport):
    out.mkdir(parents=True, exist_ok=True)
    tlog.write_csv(out / "trajectory.csv")
    (out / "ledger.csv").write_text(ledger_csv(tlog))
    (out / "certificate.txt").write_text(rep.render())
    (out / "summary.txt").write_text(_summary(sc, tlog, rep))
    (out / "columns.txt").write_text(column_manifest(tlog))


def execute(sc: Scenario, out_dir: Path):
    """Run one scenario and persist its outputs; returns ``(log, report)``."""
    tlog = closed_loop(sc.controller, sc.model, sc.x0, sc.steps)
    tlog.meta["seed"] = sc.seed
    tlog.meta["scenario"] = sc.name
    rep = certify(tlog)
    _write_outputs(out_dir, sc, tlog, rep)
    return tlog, rep


def _status(rep: CertificateReport, allow_uncertified: bool) -> int:
    if not rep.completed:
        return EXIT_ERROR
    if rep.certified:
        return EXIT_OK
    return EXIT_OK if allow_uncertified else EXIT_UNCERTIFIED


def _scenario_from_args(args) -> Scenario:
    sc = load_scenario(args.config)
    if args.seed is not None:
        sc = sc.with_overrides(seed=args.seed)
    return sc


def _out_dir(args, sc: Scenario) -> Path:
    if args.out_dir:
        return Path(args.out_dir)
    if sc.out_dir:
        return Path(sc.out_dir)
    return Path("runs") / sc.name


def cmd_run(args) -> int:
    sc = _scenario_from_args(args)
    out = _out_dir(args, sc)
    t0 = time.perf_counter()
    tlog, rep = execute(sc, out)
    log.info("run finished in %.2f s", time.perf_counter() - t0)
    print(f"{sc.name}: {rep.verdict}, M={tlog.meta['M_final']}, N={tlog.meta['N_final']}, "
          f"settle_time={rep.convergence.settle_time!r} -> {out}")
    if tlog.meta["halted"]:
        print(f"halted: {tlog.meta['halted']['message']}", file=sys.stderr)
    elif not rep.certified:
        print("warning: " + "; ".join(rep.reasons), file=sys.stderr)
    return _status(rep, args.allow_uncertified)


SWEEP_COLUMNS = ["value", "converged", "certified_M", "settle_time", "verdict", "N_final",
                 "halted"]


def _sweep_one(job):
    sc, out = job
    try:
        tlog, rep = execute(sc, out)
    except CdfError as exc:
        return {"converged": "no", "certified_M": "", "settle_time": "", "verdict": "Error",
                "N_final": "", "halted": str(exc)}
    conv = rep.convergence.converged and rep.completed
    return {
        "converged": "yes" if conv else "no",
        "certified_M": tlog.meta["M_final"] if rep.certified else "",
        "settle_time": repr(rep.convergence.settle_time),
        "verdict": rep.verdict,
        "N_final": tlog.meta["N_final"],
        "halted": tlog.meta["halted"]["kind"] if tlog.meta["halted"] else "",
    }


def sweep_table(sc: Scenario, param: str, lo: int, hi: int, out: Path, jobs: int = 1) -> list:
    """One run per value in ``lo..hi``; rows are returned in increasing order.

    Sweeping ``N`` pins ``N_max`` to the swept value so that each row measures
    that horizon alone.
    """
    runs = []
    for v in range(lo, hi + 1):
        if param == "N":
            over = {"N": v, "N_max": v}
        else:
            over = {"M": v, "M_max": max(v, sc.controller.M_max)}
        try:
            runs.append((v, (sc.with_overrides(**over), out / f"{param}={v}")))
        except CdfError as exc:
            runs.append((v, exc))
    rows = [None] * len(runs)
    todo = [(i, job) for i, (_, job) in enumerate(runs) if not isinstance(job, Exception)]
    for i, (_, job) in enumerate(runs):
        if isinstance(job, Exception):
            rows[i] = {"converged": "no", "certified_M": "", "settle_time": "",
                       "verdict": "Error", "N_final": "", "halted": str(job)}
    if jobs > 1 and len(todo) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_sweep_one, [job for _, job in todo]))
    else:
        results = [_sweep_one(job) for _, job in todo]
    for (i, _), res in zip(todo, results):
        rows[i] = res
    return [{"value": v, **row} for (v, _), row in zip(runs, rows)]


def _table_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def cmd_sweep(args) -> int:
    sc = _scenario_from_args(args)
    out = _out_dir(args, sc)
    rows = sweep_table(sc, args.param, args.lo, args.hi, out, args.jobs)
    text = _table_csv(rows)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(text)
    sys.stdout.write(text)
    conv = [r["value"] for r in rows if r["converged"] == "yes"]
    print(f"smallest converging {args.param}: {conv[0] if conv else 'none'}")
    return EXIT_OK


def cmd_check(args) -> int:
    tlog = TrajectoryLog.read_csv(args.trajectory)
    if args.seed is not None:
        tlog.meta["seed"] = args.seed
    rep = certify(tlog)
    text = rep.render()
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "certificate.txt").write_text(text)
    sys.stdout.write(text)
    return _status(rep, args.allow_uncertified)


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--out-dir", default=d(None), help="output directory")
    parser.add_argument("--seed", type=int, default=d(None),
                        help="seed for sampling-based checks (overrides the config)")
    parser.add_argument("--allow-uncertified", action="store_true", default=d(False),
                        help="exit 0 even when the certificate fails")
    parser.add_argument("-v", "--verbose", action="count", default=d(0))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdfmpc", description=__doc__.splitlines()[0])
    _global_flags(p, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="run one scenario")
    r.add_argument("config")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", parents=[common], help="run a scenario over a parameter range")
    s.add_argument("config")
    s.add_argument("--param", choices=["N", "M"], required=True)
    s.add_argument("--from", dest="lo", type=int, required=True)
    s.add_argument("--to", dest="hi", type=int, required=True)
    s.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("check", parents=[common], help="re-certify a trajectory.csv")
    c.add_argument("trajectory")
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, LogParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except CdfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

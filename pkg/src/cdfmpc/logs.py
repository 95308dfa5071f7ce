"""Closed-loop trajectory logs and their CSV form.

A trajectory CSV starts with ``# key: value`` metadata lines followed by a
header row and one row per time step. Floats are written with 17 significant
digits so a write/read cycle reproduces every value exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import CdfError


class LogParseError(CdfError, ValueError):
    pass


def fmt_float(v) -> str:
    if v is None:
        return ""
    v = float(v)
    if math.isnan(v):
        return ""
    return "%.17g" % v


def _parse_float(text: str, row: int, col: str):
    if text == "":
        return None
    try:
        return float(text)
    except ValueError:
        raise LogParseError(f"row {row}, column {col!r}: not a number: {text!r}") from None


@dataclass
class LogRow:
    k: int
    x: np.ndarray
    u: np.ndarray | None = None
    l: float | None = None
    V: float | None = None
    s: float | None = None
    gamma: float | None = None
    M: int | None = None
    N: int | None = None
    status: str = ""
    cyclic: bool | None = None
    margin: float | None = None


@dataclass
class TrajectoryLog:
    """Per-step closed-loop record; the last row holds the terminal state only."""

    n: int
    m: int
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    events: list = field(default_factory=list)

    def columns(self) -> list:
        return (["k"] + [f"x{i + 1}" for i in range(self.n)]
                + [f"u{i + 1}" for i in range(self.m)]
                + ["l", "V", "s", "Gamma", "M", "N", "status", "cyclic"])

    # convenient array views -------------------------------------------------
    @property
    def states(self) -> np.ndarray:
        return np.array([r.x for r in self.rows]).reshape(len(self.rows), self.n)

    @property
    def inputs(self) -> np.ndarray:
        return np.array([r.u for r in self.rows if r.u is not None]).reshape(-1, self.m)

    def column(self, name: str, stepped_only: bool = True) -> np.ndarray:
        rows = [r for r in self.rows if r.u is not None] if stepped_only else self.rows
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name)
                         for r in rows], dtype=float)

    @property
    def V(self):
        return self.column("V")

    @property
    def s(self):
        return self.column("s")

    @property
    def l(self):
        return self.column("l", stepped_only=False)

    # csv ------------------------------------------------------------------
    def to_csv(self) -> str:
        buf = io.StringIO()
        for key in sorted(self.meta):
            buf.write(f"# {key}: {json.dumps(self.meta[key], sort_keys=True)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for r in self.rows:
            u = list(r.u) if r.u is not None else [None] * self.m
            cyc = "" if r.cyclic is None else ("1" if r.cyclic else "0")
            w.writerow([r.k] + [fmt_float(v) for v in r.x] + [fmt_float(v) for v in u]
                       + [fmt_float(r.l), fmt_float(r.V), fmt_float(r.s),
                          fmt_float(r.gamma), "" if r.M is None else r.M,
                          "" if r.N is None else r.N, r.status, cyc])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "TrajectoryLog":
        meta = {}
        lines = text.splitlines()
        body_start = 0
        for i, line in enumerate(lines):
            if line.startswith("#"):
                key, sep, value = line[1:].partition(":")
                if not sep:
                    raise LogParseError(f"line {i + 1}: malformed metadata line")
                try:
                    meta[key.strip()] = json.loads(value.strip())
                except json.JSONDecodeError:
                    raise LogParseError(f"line {i + 1}: bad metadata value") from None
                body_start = i + 1
            else:
                break
        reader = list(csv.reader(lines[body_start:]))
        if not reader:
            raise LogParseError("trajectory file has no header row")
        header = reader[0]
        try:
            n = sum(1 for h in header if h.startswith("x"))
            m = sum(1 for h in header if h.startswith("u"))
        except Exception:  # pragma: no cover - defensive
            raise LogParseError("bad header")
        log = cls(n=n, m=m, meta=meta)
        if header != log.columns():
            raise LogParseError(f"row 0: header does not match the trajectory schema: {header}")
        if len(reader) < 2:
            raise LogParseError("trajectory file has no data rows")
        for ri, rec in enumerate(reader[1:], start=1):
            if len(rec) != len(header):
                raise LogParseError(f"row {ri}: expected {len(header)} columns, got {len(rec)}")
            cells = dict(zip(header, rec))
            try:
                k = int(cells["k"])
            except ValueError:
                raise LogParseError(f"row {ri}, column 'k': not an integer") from None
            x = np.array([_parse_float(cells[f"x{i + 1}"], ri, f"x{i + 1}") for i in range(n)],
                         dtype=float)
            if np.any(np.isnan(x)):
                raise LogParseError(f"row {ri}: missing state entry")
            uvals = [_parse_float(cells[f"u{i + 1}"], ri, f"u{i + 1}") for i in range(m)]
            u = None if all(v is None for v in uvals) else np.array(uvals, dtype=float)
            cyc = cells["cyclic"]
            if cyc not in ("", "0", "1"):
                raise LogParseError(f"row {ri}, column 'cyclic': expected 0, 1 or empty")
            log.rows.append(LogRow(
                k=k, x=x, u=u,
                l=_parse_float(cells["l"], ri, "l"),
                V=_parse_float(cells["V"], ri, "V"),
                s=_parse_float(cells["s"], ri, "s"),
                gamma=_parse_float(cells["Gamma"], ri, "Gamma"),
                M=int(cells["M"]) if cells["M"] else None,
                N=int(cells["N"]) if cells["N"] else None,
                status=cells["status"],
                cyclic=None if cyc == "" else cyc == "1",
            ))
        return log

    @classmethod
    def read_csv(cls, path) -> "TrajectoryLog":
        text = Path(path).read_text()
        if not text.strip():
            raise LogParseError(f"{path}: empty file")
        return cls.from_csv(text)


LEDGER_COLUMNS = ["k", "s", "Gamma", "M", "margin"]


def ledger_csv(log: TrajectoryLog) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LEDGER_COLUMNS)
    for r in log.rows:
        if r.s is None:
            continue
        w.writerow([r.k, fmt_float(r.s), fmt_float(r.gamma),
                    "" if r.M is None else r.M, fmt_float(r.margin)])
    return buf.getvalue()

"""Scenario files: INI sections ``[model]``, ``[controller]``, ``[solver]``, ``[run]``.

Every key is optional except ``[model] name`` and ``[model] x0``; unknown
sections or keys are rejected so that typos cannot silently fall back to
defaults. A full example::

    [model]
    name = generator2
    x0 = 0, 0.15, 0, -0.15
    state_radius = 10
    input_radius = 5
    state_norm = inf
    input_norm = inf

    [controller]
    scheme = problem1_with_2
    N = 4
    M = 1
    M_max = 10
    N_max = 12
    rho = 0.99
    Q = 0.1, 10, 0.1, 10

    [solver]
    tol_stat = 1e-8
    tol_feas = 1e-8

    [run]
    steps = 600
    seed = 0
"""

from __future__ import annotations

import configparser
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .controller import ControllerConfig, Scheme
from .core import CdfError, ComparisonFunction, parse_order
from .model import MODELS, SystemModel, get_model
from .nlp import SolverOptions
from .storage import KernelFunction


class ConfigError(CdfError, ValueError):
    pass


_KEYS = {
    "model": {"name", "x0", "state_radius", "input_radius", "state_norm", "input_norm"},
    "controller": {"scheme", "N", "M", "M_max", "N_max", "rho", "Q", "zero_floor", "backoff"},
    "solver": {"tol_stat", "tol_feas", "max_outer", "max_inner", "penalty_init",
               "penalty_growth", "multiplier_max"},
    "run": {"steps", "seed", "out_dir", "settle_eps"},
}


@dataclass(frozen=True)
class Scenario:
    name: str
    model: SystemModel
    x0: np.ndarray
    steps: int
    controller: ControllerConfig
    out_dir: Optional[str] = None
    seed: int = 0
    settle_eps: float = 1e-3

    def with_overrides(self, **changes) -> "Scenario":
        ctrl = {k: changes.pop(k) for k in ("N", "M", "M_max", "N_max") if k in changes}
        sc = replace(self, **changes)
        if ctrl:
            sc = replace(sc, controller=replace(sc.controller, **ctrl))
        return sc


def _fail(where: str, msg: str):
    raise ConfigError(f"{where}: {msg}")


def _vector(text: str, where: str) -> list:
    try:
        vals = [float(t) for t in text.replace(";", ",").split(",") if t.strip()]
    except ValueError:
        _fail(where, f"expected comma-separated numbers, got {text!r}")
    if not vals or not all(math.isfinite(v) for v in vals):
        _fail(where, "expected finite numbers")
    return vals


def _number(sec, key, where, kind=float, default=None):
    if key not in sec:
        return default
    raw = sec[key].strip()
    try:
        if kind is int:
            f = float(raw)
            if f != int(f):
                raise ValueError
            return int(f)
        return float(raw)
    except ValueError:
        _fail(where, f"expected {'an integer' if kind is int else 'a number'}, got {raw!r}")


def _matrix(text: str, where: str):
    text = text.strip()
    if text.startswith("["):
        try:
            Q = json.loads(text)
        except json.JSONDecodeError:
            _fail(where, "matrix must be a JSON list of rows")
        return np.asarray(Q, dtype=float)
    return np.asarray(_vector(text, where))


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    """Parse scenario text; errors name the file, section and key."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive (N vs n)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    for sec in cp.sections():
        if sec not in _KEYS:
            _fail(f"{source}: [{sec}]", "unknown section")
        for key in cp[sec]:
            if key not in _KEYS[sec]:
                _fail(f"{source}: [{sec}] {key}", "unknown key")
    for sec in _KEYS:
        if not cp.has_section(sec):
            cp.add_section(sec)

    def at(sec, key):
        return f"{source}: [{sec}] {key}"

    m = cp["model"]
    if "name" not in m:
        _fail(at("model", "name"), "required")
    if m["name"] not in MODELS:
        _fail(at("model", "name"), f"unknown model {m['name']!r}; known: {sorted(MODELS)}")
    if "x0" not in m:
        _fail(at("model", "x0"), "required")
    x0 = np.asarray(_vector(m["x0"], at("model", "x0")))

    sv = cp["solver"]
    sopts = {}
    for key in _KEYS["solver"]:
        kind = int if key.startswith("max_") else float
        v = _number(sv, key, at("solver", key), kind)
        if v is not None:
            sopts[key] = v
    try:
        solver = SolverOptions(**sopts)
    except CdfError as exc:
        _fail(f"{source}: [solver]", str(exc))

    mk = {"tol_feas": solver.tol_feas}
    for key in ("state_radius", "input_radius"):
        v = _number(m, key, at("model", key))
        if v is not None:
            mk[key] = v
    for key in ("state_norm", "input_norm"):
        if key in m:
            try:
                mk[key] = parse_order(m[key])
            except CdfError as exc:
                _fail(at("model", key), str(exc))
    try:
        model = get_model(m["name"], **mk)
    except CdfError as exc:
        _fail(f"{source}: [model]", str(exc))
    if x0.shape[0] != model.n:
        _fail(at("model", "x0"), f"dimension {x0.shape[0]} does not match model dimension {model.n}")

    c = cp["controller"]
    Q = _matrix(c["Q"], at("controller", "Q")) if "Q" in c else np.ones(model.n)
    try:
        kernel = KernelFunction(Q)
    except CdfError as exc:
        _fail(at("controller", "Q"), str(exc))
    if kernel.n != model.n:
        _fail(at("controller", "Q"), f"size {kernel.n} does not match model dimension {model.n}")
    ck = {"kernel": kernel, "solver": solver}
    for key in ("N", "M", "M_max", "N_max"):
        v = _number(c, key, at("controller", key), int)
        if v is not None:
            ck[key] = v
    for key in ("zero_floor", "backoff"):
        v = _number(c, key, at("controller", key))
        if v is not None:
            ck[key] = v
    rho = _number(c, "rho", at("controller", "rho"))
    if rho is not None:
        if not 0 < rho < 1:
            _fail(at("controller", "rho"), "linear coefficient must lie in (0, 1)")
        ck["rho"] = ComparisonFunction.linear(rho)
    if "scheme" in c:
        try:
            ck["scheme"] = Scheme.parse(c["scheme"])
        except CdfError as exc:
            _fail(at("controller", "scheme"), str(exc))
    try:
        ctrl = ControllerConfig(**ck)
    except CdfError as exc:
        _fail(f"{source}: [controller]", str(exc))

    r = cp["run"]
    steps = _number(r, "steps", at("run", "steps"), int, 600)
    if steps < 1:
        _fail(at("run", "steps"), "must be >= 1")
    seed = _number(r, "seed", at("run", "seed"), int, 0)
    eps = _number(r, "settle_eps", at("run", "settle_eps"), float, 1e-3)
    if not eps > 0:
        _fail(at("run", "settle_eps"), "must be positive")
    name = Path(source).stem if source != "<string>" else "scenario"
    return Scenario(name, model, x0, steps, ctrl, r.get("out_dir"), seed, eps)


def load_scenario(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    return parse_scenario(text, str(p))


def bundled_scenario(name: str) -> Path:
    """Path of a scenario file shipped with the package."""
    p = Path(__file__).parent / "scenarios" / name
    if not p.is_file():
        raise ConfigError(f"no bundled scenario {name!r}")
    return p

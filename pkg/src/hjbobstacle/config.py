"""Run configuration: a YAML document resolved into typed settings.

Canonical layout (every section but ``problem`` is optional)::

    problem: smooth-obstacle-1d          # a preset name, or an inline mapping
    scheme: {kind: fdm, h: 0.015625}     # control: {kind: control, h_scheme: .., h_grid: ..}
    solver: {tolerance: 1.0e-10, sweep: jacobi, mode: obstacle}
    experiment: {kind: rates-eps, h: 0.0009765625, eps_list: [0.125, 0.0625, 0.03125]}
    output: {dir: out, csv: results.csv, document: result.json, field: solution.field, timings: true}
    seed: 0
    threads: 1

An inline problem looks like::

    problem:
      name: my-problem
      dim: 1
      lo: [0.0]
      hi: [1.0]
      boundary: periodic
      sense: sup                      # or infsup with axes: [n_alpha, n_beta]
      controls:
        - {a: [[0.5]], b: [0.2], c: 1.0, f: "sin(2*pi*x1)", lipschitz: {f: 6.3}}
      obstacle: {g: "0.3 + 0.2*cos(2*pi*x1)", regularity: semiconvex-lipschitz, seminorm: 1.26}

Controls may give ``sigma`` (an N x P matrix of expressions) instead of
``a``.  Lipschitz constants that are not declared are estimated by
sampling (see :func:`estimate_lipschitz`).  JSON is accepted too, so the
echoed configuration inside a result document can be re-run as is.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace
from typing import Any, Optional

import numpy as np
import yaml

from .expression import ExpressionError, as_expression
from .grid import BoundaryPolicy
from .model import (
    CoefficientSet,
    ControlCoefficients,
    ControlGrid,
    LipschitzConstants,
    ModelError,
    Obstacle,
    ProblemSpec,
    Regularity,
    Sense,
    sample_box,
)
from .presets import get_preset, preset_names
from .solver import SolverConfig

__all__ = [
    "ConfigError",
    "SchemeConfig",
    "ExperimentConfig",
    "OutputConfig",
    "RunConfig",
    "load_config",
    "read_config_document",
    "parse_config",
    "estimate_lipschitz",
    "EXPERIMENTS",
]

EXPERIMENTS = ("solve", "validate", "consistency", "rates-h", "rates-eps", "combined")


class ConfigError(ValueError):
    """A configuration problem, tagged with the dotted path of the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class SchemeConfig:
    kind: str = "fdm"
    h: Optional[float] = None
    h_scheme: Optional[float] = None
    h_grid: Optional[float] = None

    def grid_step(self) -> float:
        if self.kind == "control":
            return self.h_grid
        return self.h


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "solve"
    h_list: tuple[float, ...] = ()
    eps_list: tuple[float, ...] = ()
    reference_k: int = 8
    coupling: str = "square"
    h: Optional[float] = None
    theta: Optional[float] = None
    samples: int = 1000
    wavenumber: int = 1


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    csv: str = "results.csv"
    document: str = "result.json"
    field: Optional[str] = "solution.field"
    timings: bool = True


@dataclass
class RunConfig:
    problem: ProblemSpec
    scheme: SchemeConfig
    solver: SolverConfig
    experiment: ExperimentConfig
    output: OutputConfig
    seed: int = 0
    threads: int = 1
    raw: dict = field(default_factory=dict)


# ------------------------------------------------------------------ helpers


def _num(value, path: str, positive: bool = False, allow_none: bool = False) -> Optional[float]:
    if value is None and allow_none:
        return None
    if isinstance(value, bool):
        raise ConfigError(path, "expected a number")
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected a number, got {value!r}") from None
    if not math.isfinite(v):
        raise ConfigError(path, "must be finite")
    if positive and not v > 0:
        raise ConfigError(path, f"must be positive, got {v!r}")
    return v


def _int(value, path: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(path, f"must be >= {minimum}")
    return int(value)


def _mapping(value, path: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(path, "expected a mapping")
    return value


def _check_keys(d: dict, allowed: set, path: str) -> None:
    for k in d:
        if k not in allowed:
            raise ConfigError(f"{path}.{k}" if path else str(k), "unknown field")


def _list(value, path: str) -> list:
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(path, "expected a nonempty list")
    return list(value)


def _expr(value, dim: int, path: str):
    try:
        return as_expression(value, dim)
    except ExpressionError as exc:
        raise ConfigError(path, str(exc)) from None


# ------------------------------------------------------------------ problem


def estimate_lipschitz(coef: ControlCoefficients, spec_box, safety: float = 1.1) -> LipschitzConstants:
    """Sampled Lipschitz constants of sigma, b, c and f(., 0) with a safety factor.

    Used for inline problems that do not declare their constants; the
    estimate is a lower bound on the truth, hence the margin.
    """
    X = sample_box(spec_box)
    dim = X.shape[0]
    n = X.shape[1]
    idx = np.arange(n)
    # neighbouring pairs along each axis of the tensor sample
    per_axis = round(n ** (1.0 / dim))
    shape = (per_axis,) * dim
    pairs = []
    for d in range(dim):
        grid_idx = idx.reshape(shape)
        a = np.take(grid_idx, range(per_axis - 1), axis=d).ravel()
        b = np.take(grid_idx, range(1, per_axis), axis=d).ravel()
        pairs.append((a, b))

    def lip(values):
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = np.broadcast_to(v, (n,))
        v = v.reshape(n, -1)
        best = 0.0
        for a, b in pairs:
            dist = np.linalg.norm(X[:, a] - X[:, b], axis=0)
            best = max(best, float(np.max(np.linalg.norm(v[a] - v[b], axis=1) / dist)))
        return safety * best

    return LipschitzConstants(
        sigma=lip(coef.sigma_at(X).reshape(n, -1)),
        b=lip(coef.b_at(X)),
        c=lip(coef.c_at(X)),
        f=lip(coef.f_at(X, 0.0)),
    )


_CONTROL_KEYS = {"a", "sigma", "b", "c", "f", "lipschitz", "label"}
_PROBLEM_KEYS = {"name", "dim", "lo", "hi", "boundary", "sense", "axes", "controls", "obstacle"}
_OBSTACLE_KEYS = {"g", "regularity", "seminorm", "mu", "d2_minus_bound"}


def _inline_problem(d: dict, path: str) -> ProblemSpec:
    _check_keys(d, _PROBLEM_KEYS, path)
    if "dim" not in d:
        raise ConfigError(f"{path}.dim", "required")
    dim = _int(d["dim"], f"{path}.dim", 1)
    lo = [_num(v, f"{path}.lo[{i}]") for i, v in enumerate(_list(d.get("lo", [0.0] * dim), f"{path}.lo"))]
    hi = [_num(v, f"{path}.hi[{i}]") for i, v in enumerate(_list(d.get("hi", [1.0] * dim), f"{path}.hi"))]
    if len(lo) != dim or len(hi) != dim:
        raise ConfigError(f"{path}.lo", f"need {dim} bounds per side")
    try:
        policy = BoundaryPolicy.parse(d.get("boundary", "periodic"))
    except ValueError as exc:
        raise ConfigError(f"{path}.boundary", str(exc)) from None
    try:
        sense = Sense(str(d.get("sense", "sup")).lower())
    except ValueError:
        raise ConfigError(f"{path}.sense", "expected 'sup' or 'infsup'") from None
    raw_controls = _list(d.get("controls"), f"{path}.controls")
    box = SimpleNamespace(dim=dim, lo=tuple(lo), hi=tuple(hi))
    controls = []
    for i, c in enumerate(raw_controls):
        cp = f"{path}.controls[{i}]"
        c = _mapping(c, cp)
        _check_keys(c, _CONTROL_KEYS, cp)
        if "a" in c and "sigma" in c:
            raise ConfigError(cp, "give either 'a' or 'sigma', not both")
        kw = {}
        for key in ("a", "sigma"):
            if key in c:
                rows = _list(c[key], f"{cp}.{key}")
                kw[key] = [[(_num(v, f"{cp}.{key}[{r}][{j}]") if key == "a" else _expr(v, dim, f"{cp}.{key}[{r}][{j}]"))
                            for j, v in enumerate(_list(row, f"{cp}.{key}[{r}]"))] for r, row in enumerate(rows)]
        if "b" in c:
            kw["b"] = [_expr(v, dim, f"{cp}.b[{j}]") for j, v in enumerate(_list(c["b"], f"{cp}.b"))]
        kw["c"] = _expr(c.get("c", 0.0), dim, f"{cp}.c")
        kw["f"] = _expr(c.get("f", 0.0), dim, f"{cp}.f")
        try:
            coef = ControlCoefficients.build(dim, label=c.get("label"), **kw)
        except ModelError as exc:
            raise ConfigError(cp, str(exc)) from None
        declared = _mapping(c.get("lipschitz"), f"{cp}.lipschitz")
        _check_keys(declared, {"sigma", "b", "c", "f"}, f"{cp}.lipschitz")
        est = estimate_lipschitz(coef, box)
        lip = LipschitzConstants(**{k: (_num(declared[k], f"{cp}.lipschitz.{k}") if k in declared else getattr(est, k))
                                    for k in ("sigma", "b", "c", "f")})
        controls.append(ControlCoefficients(coef.sigma, coef.b, coef.c, coef.f, lip, coef.a, coef.label))
    X = sample_box(box)
    cvals = [float(np.min(cc.c_at(X))) for cc in controls]
    cmax = [float(np.max(cc.c_at(X))) for cc in controls]
    try:
        coefs = CoefficientSet(tuple(controls), min(cvals), max(cmax))
    except ModelError as exc:
        raise ConfigError(f"{path}.controls", f"{exc} (sampled inf of c is {min(cvals)!r})") from None
    if "axes" in d:
        axes = _list(d["axes"], f"{path}.axes")
        if len(axes) != 2:
            raise ConfigError(f"{path}.axes", "expected [n_alpha, n_beta]")
        na = _int(axes[0], f"{path}.axes[0]", 1)
        nb = _int(axes[1], f"{path}.axes[1]", 1)
        cgrid = ControlGrid(na, second_axis=ControlGrid(nb))
    else:
        if sense is Sense.INFSUP:
            raise ConfigError(f"{path}.axes", "inf-sup problems need axes: [n_alpha, n_beta]")
        cgrid = ControlGrid(len(controls))
    if cgrid.total != len(controls):
        raise ConfigError(f"{path}.axes", f"axes give {cgrid.total} controls but {len(controls)} are listed")
    obstacle = None
    if d.get("obstacle") is not None:
        op = f"{path}.obstacle"
        o = _mapping(d["obstacle"], op)
        _check_keys(o, _OBSTACLE_KEYS, op)
        if "g" not in o:
            raise ConfigError(f"{op}.g", "required")
        g = _expr(o["g"], dim, f"{op}.g")
        try:
            reg = Regularity(str(o.get("regularity", "lipschitz")).lower())
        except ValueError:
            raise ConfigError(f"{op}.regularity", f"expected one of {[r.value for r in Regularity]}") from None
        try:
            obstacle = Obstacle(g, reg, _num(o.get("seminorm", 0.0), f"{op}.seminorm"),
                                _num(o.get("mu", 1.0), f"{op}.mu"),
                                _num(o.get("d2_minus_bound"), f"{op}.d2_minus_bound", allow_none=True))
        except ModelError as exc:
            raise ConfigError(op, str(exc)) from None
    try:
        return ProblemSpec(dim, lo, hi, cgrid, coefs, obstacle, sense, policy, str(d.get("name", "inline")))
    except ModelError as exc:
        raise ConfigError(path, str(exc)) from None


def _problem(value) -> ProblemSpec:
    if value is None:
        raise ConfigError("problem", "required")
    if isinstance(value, str):
        if value not in preset_names():
            raise ConfigError("problem", f"unknown preset {value!r}; known: {', '.join(preset_names())}")
        return get_preset(value)
    if isinstance(value, dict) and set(value) == {"preset"}:
        return _problem(value["preset"])
    return _inline_problem(_mapping(value, "problem"), "problem")


# ------------------------------------------------------------------ sections


def _scheme(d: dict) -> SchemeConfig:
    _check_keys(d, {"kind", "h", "h_scheme", "h_grid"}, "scheme")
    kind = str(d.get("kind", "fdm")).lower()
    if kind not in ("fdm", "control"):
        raise ConfigError("scheme.kind", "expected 'fdm' or 'control'")
    h = _num(d.get("h"), "scheme.h", positive=True, allow_none=True)
    hs = _num(d.get("h_scheme"), "scheme.h_scheme", positive=True, allow_none=True)
    hg = _num(d.get("h_grid"), "scheme.h_grid", positive=True, allow_none=True)
    if kind == "fdm":
        if hs is not None or hg is not None:
            raise ConfigError("scheme", "h_scheme/h_grid belong to the control scheme; use h")
        return SchemeConfig("fdm", h if h is not None else 1.0 / 64)
    if h is not None and hg is not None and h != hg:
        raise ConfigError("scheme.h", "contradicts scheme.h_grid")
    hg = hg if hg is not None else h
    if hg is None and hs is None:
        hs = 1.0 / 8
    if hg is None:
        hg = hs * hs
    if hs is None:
        hs = math.sqrt(hg)
    return SchemeConfig("control", None, hs, hg)


_SOLVER_KEYS = {"tolerance", "max_iterations", "sweep", "mode", "eps", "backend", "newton_max_steps", "history_limit"}


def _solver(d: dict, problem: ProblemSpec) -> SolverConfig:
    _check_keys(d, _SOLVER_KEYS, "solver")
    kw: dict[str, Any] = {}
    if "tolerance" in d:
        kw["tolerance"] = _num(d["tolerance"], "solver.tolerance", positive=True)
    if "max_iterations" in d:
        kw["max_iterations"] = _int(d["max_iterations"], "solver.max_iterations", 1)
    if "newton_max_steps" in d and d["newton_max_steps"] is not None:
        kw["newton_max_steps"] = _int(d["newton_max_steps"], "solver.newton_max_steps", 1)
    if "history_limit" in d:
        kw["history_limit"] = _int(d["history_limit"], "solver.history_limit", 1)
    if "eps" in d and d["eps"] is not None:
        kw["eps"] = _num(d["eps"], "solver.eps", positive=True)
    for key in ("sweep", "mode", "backend"):
        if key in d and d[key] is not None:
            kw[key] = str(d[key])
    kw.setdefault("mode", "obstacle" if problem.obstacle is not None else "plain")
    if kw["mode"] != "plain" and problem.obstacle is None:
        raise ConfigError("solver.mode", f"mode {kw['mode']!r} needs an obstacle")
    try:
        return SolverConfig(**kw)
    except ValueError as exc:
        raise ConfigError("solver", str(exc)) from None


_EXPERIMENT_KEYS = {"kind", "h_list", "eps_list", "reference_k", "coupling", "h", "theta", "samples", "wavenumber"}


def _experiment(d: dict, scheme: SchemeConfig, problem: ProblemSpec) -> ExperimentConfig:
    _check_keys(d, _EXPERIMENT_KEYS, "experiment")
    kind = str(d.get("kind", "solve")).lower()
    if kind not in EXPERIMENTS:
        raise ConfigError("experiment.kind", f"expected one of {', '.join(EXPERIMENTS)}")
    kw: dict[str, Any] = {"kind": kind}
    if "h_list" in d:
        hl = [_num(v, f"experiment.h_list[{i}]", positive=True) for i, v in enumerate(_list(d["h_list"], "experiment.h_list"))]
        for i in range(1, len(hl)):
            if not hl[i] < hl[i - 1]:
                raise ConfigError(f"experiment.h_list[{i}]", "h values must be strictly decreasing")
        kw["h_list"] = tuple(hl)
    if "eps_list" in d:
        el = [_num(v, f"experiment.eps_list[{i}]", positive=True) for i, v in enumerate(_list(d["eps_list"], "experiment.eps_list"))]
        kw["eps_list"] = tuple(el)
    if "reference_k" in d:
        kw["reference_k"] = _int(d["reference_k"], "experiment.reference_k", 1)
    if "coupling" in d:
        if d["coupling"] not in ("square", "equal"):
            raise ConfigError("experiment.coupling", "expected 'square' or 'equal'")
        kw["coupling"] = d["coupling"]
    if "h" in d:
        kw["h"] = _num(d["h"], "experiment.h", positive=True)
    if "theta" in d:
        kw["theta"] = _num(d["theta"], "experiment.theta", positive=True)
    if "samples" in d:
        kw["samples"] = _int(d["samples"], "experiment.samples", 1)
    if "wavenumber" in d:
        kw["wavenumber"] = _int(d["wavenumber"], "experiment.wavenumber", 1)
    exp = ExperimentConfig(**kw)
    if kind in ("rates-h", "combined", "consistency") and not exp.h_list:
        raise ConfigError("experiment.h_list", f"required for {kind}")
    if kind in ("rates-h", "combined") and len(exp.h_list) < 3:
        raise ConfigError("experiment.h_list", "a rate study needs at least 3 values")
    if kind == "rates-eps":
        if not exp.eps_list:
            raise ConfigError("experiment.eps_list", "required for rates-eps")
        if problem.obstacle is None:
            raise ConfigError("problem.obstacle", "rates-eps needs an obstacle")
    if kind == "combined" and problem.obstacle is None:
        raise ConfigError("problem.obstacle", "combined needs an obstacle")
    return exp


def _output(d: dict) -> OutputConfig:
    _check_keys(d, {"dir", "csv", "document", "field", "timings"}, "output")
    kw = {k: (str(v) if v is not None else None) for k, v in d.items() if k != "timings"}
    for k in ("dir", "csv", "document"):
        if k in kw and kw[k] is None:
            raise ConfigError(f"output.{k}", "may not be empty")
    if "timings" in d:
        if not isinstance(d["timings"], bool):
            raise ConfigError("output.timings", "expected true or false")
        kw["timings"] = d["timings"]
    return OutputConfig(**kw)


def parse_config(raw: dict) -> RunConfig:
    """Resolve a configuration mapping (already parsed from YAML or JSON)."""
    raw = _mapping(raw, "")
    _check_keys(raw, {"problem", "scheme", "solver", "experiment", "output", "seed", "threads"}, "")
    problem = _problem(raw.get("problem"))
    scheme = _scheme(_mapping(raw.get("scheme"), "scheme"))
    solver = _solver(_mapping(raw.get("solver"), "solver"), problem)
    experiment = _experiment(_mapping(raw.get("experiment"), "experiment"), scheme, problem)
    output = _output(_mapping(raw.get("output"), "output"))
    seed = _int(raw.get("seed", 0), "seed", 0)
    threads = _int(raw.get("threads", 1), "threads", 1)
    return RunConfig(problem, scheme, solver, experiment, output, seed, threads, copy.deepcopy(raw))


def read_config_document(path) -> dict:
    """Parse the YAML (or JSON) document at ``path`` without resolving it."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("", f"{path}: malformed document: {exc}") from None
    if raw is None:
        raise ConfigError("problem", "required")
    return _mapping(raw, "")


def load_config(path) -> RunConfig:
    return parse_config(read_config_document(path))

"""Batch front end: ``hjbobstacle VERB --config PATH [--out DIR] [--seed N] [--threads N]``.

Verbs map onto experiment kinds: ``solve``, ``validate`` and ``consistency``
run the experiment of the same name, ``rates`` runs whichever of
``rates-h``, ``rates-eps`` or ``combined`` the configuration names, and
``presets list`` prints the registry.  Each run writes a CSV table and a
JSON result document into the output directory.

Exit status: 0 when every row converged, 2 when some row did not, 1 on a
configuration error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import __version__
from .analysis import (
    AnalysisError,
    _map,
    apriori_bounds_continuous,
    apriori_bounds_discrete,
    eps_rate_study,
    fit_rate,
    h_rate_study,
    local_rates,
    zero_diffusion_closed_form,
)
from .config import ConfigError, RunConfig, parse_config, read_config_document
from .control import control_consistency_error
from .expression import ExpressionError
from .fdm import consistency_error
from .grid import Grid, GridError, sup_diff, write_field
from .model import ModelError, Regularity, SamplingPlan, validate_assumptions
from .presets import DESCRIPTIONS, preset_names
from .solver import SolveReport, SolverError, discretize, solve_operator

__all__ = ["CSV_COLUMNS", "CsvRow", "ResultDocument", "run", "main", "format_number", "GAMMA"]

CSV_COLUMNS = ("h", "eps", "sup_error", "local_rate", "iterations", "residual", "wall_ms", "status")

# consistency exponent of each scheme, used by the combined eps(h) rule
GAMMA = {"fdm": 0.5, "control": 0.25}

_VERB_KINDS = {
    "solve": ("solve",),
    "validate": ("validate",),
    "consistency": ("consistency",),
    "rates": ("rates-h", "rates-eps", "combined"),
}


def format_number(x) -> str:
    """Shortest round-trip text for a number; blank for missing or non-finite values."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        return ""
    return repr(x)


@dataclass
class CsvRow:
    h: float
    eps: Optional[float]
    sup_error: Optional[float]
    local_rate: Optional[float]
    iterations: Optional[int]
    residual: Optional[float]
    wall_ms: Optional[float]
    status: str

    def cells(self, timings: bool = True) -> list[str]:
        vals = [self.h, self.eps, self.sup_error, self.local_rate, self.iterations, self.residual,
                self.wall_ms if timings else None]
        out = [format_number(v) for v in vals]
        status = self.status
        # non-finite numbers are never written; flag them instead
        for name, v, cell in zip(CSV_COLUMNS, vals, out):
            if v is not None and cell == "" and name != "wall_ms":
                status = status if status != "ok" else f"non-finite-{name}"
        return out + [status]

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class ResultDocument:
    config: dict
    experiment: str
    rows: list[CsvRow] = field(default_factory=list)
    reports: list[dict] = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    validation: Optional[dict] = None
    bounds: Optional[dict] = None
    extra: dict = field(default_factory=dict)
    wall_time: Optional[float] = None
    version: str = __version__

    @property
    def success(self) -> bool:
        return all(r.ok for r in self.rows)

    @property
    def exit_code(self) -> int:
        return 0 if self.success else 2

    def csv_text(self, timings: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow(r.cells(timings))
        return buf.getvalue()

    def to_dict(self) -> dict:
        return _jsonable({
            "tool": "hjbobstacle",
            "version": self.version,
            "experiment": self.experiment,
            "config": self.config,
            "status": "ok" if self.success else "not-converged",
            "rows": [dict(zip(CSV_COLUMNS, r.cells())) for r in self.rows],
            "reports": self.reports,
            "fits": self.fits,
            "validation": self.validation,
            "bounds": self.bounds,
            "extra": self.extra,
            "wall_time_s": self.wall_time,
        })


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if hasattr(obj, "value") and hasattr(obj, "name"):
        return obj.value
    return obj


# ------------------------------------------------------------------ experiments


def _report_dict(rep: SolveReport, timings: bool, label: str, **extra) -> dict:
    d = rep.to_dict()
    if not timings:
        d["wall_time"] = None
    d["label"] = label
    d.update(extra)
    return d


def _wall_ms(rep: SolveReport) -> float:
    return rep.wall_time * 1000.0


def _status(rep: SolveReport) -> str:
    return "ok" if rep.converged else "not-converged"


def _scheme_grid(cfg: RunConfig, h: Optional[float] = None) -> tuple[Grid, Optional[float]]:
    spec = cfg.problem
    if cfg.scheme.kind == "control":
        hg = cfg.scheme.h_grid if h is None else h * h
        hs = cfg.scheme.h_scheme if h is None else h
        return Grid.uniform(spec.lo, spec.hi, hg, spec.policy), hs
    return Grid.uniform(spec.lo, spec.hi, cfg.scheme.h if h is None else h, spec.policy), None


def _run_solve(cfg: RunConfig, doc: ResultDocument, out: Path) -> None:
    spec = cfg.problem
    grid, hs = _scheme_grid(cfg)
    op = discretize(spec, grid, cfg.scheme.kind, hs)
    u, rep = solve_operator(op, cfg.solver)
    U = op.to_grid_function(u)
    err = None
    exact = None
    if cfg.solver.mode == "obstacle" or spec.obstacle is None:
        exact = zero_diffusion_closed_form(spec, grid)
    if exact is not None:
        err = sup_diff(U, exact)
        doc.extra["closed_form"] = True
    mode_eps = cfg.solver.eps if cfg.solver.mode == "penalized" else None
    doc.rows.append(CsvRow(grid.h, mode_eps, err, None, rep.iterations, rep.residual, _wall_ms(rep), _status(rep)))
    doc.reports.append(_report_dict(rep, cfg.output.timings, "solve"))
    if cfg.output.field:
        meta = {"problem": spec.name, "scheme": cfg.scheme.kind, "mode": cfg.solver.mode}
        if hs is not None:
            meta["h_scheme"] = hs
        write_field(out / cfg.output.field, U, meta)
        doc.extra["field"] = cfg.output.field


def _run_validate(cfg: RunConfig, doc: ResultDocument, out: Path) -> None:
    spec = cfg.problem
    grid, hs = _scheme_grid(cfg)
    plan = SamplingPlan(n_random=cfg.experiment.samples, seed=cfg.seed, grid_h=grid.h)
    doc.validation = validate_assumptions(spec, plan).to_dict()
    bounds = {"continuous": apriori_bounds_continuous(spec).to_dict()}
    if spec.obstacle is not None:
        bounds["continuous_obstacle"] = apriori_bounds_continuous(spec, obstacle=True).to_dict()
    if cfg.scheme.kind == "fdm":
        bounds["discrete"] = apriori_bounds_discrete(spec, grid.h).to_dict()
        if spec.obstacle is not None:
            bounds["discrete_obstacle"] = apriori_bounds_discrete(spec, grid.h, obstacle=True, grid=grid).to_dict()
    doc.bounds = bounds


def _phi_family(dim: int, m: int):
    w = 2.0 * math.pi * m

    def phi(*X):
        return np.sin(w * X[0])

    def grad(*X):
        g = [w * np.cos(w * X[0])] + [np.zeros_like(X[0]) for _ in range(dim - 1)]
        return g if dim > 1 else g[0]

    def hess(*X):
        H = np.zeros((X[0].size, dim, dim))
        H[:, 0, 0] = -w * w * np.sin(w * X[0])
        return H if dim > 1 else H[:, 0, 0]

    norms = {i: w**i for i in range(5)}
    return phi, grad, hess, norms


def _run_consistency(cfg: RunConfig, doc: ResultDocument, out: Path) -> None:
    spec = cfg.problem
    phi, grad, hess, norms = _phi_family(spec.dim, cfg.experiment.wavenumber)
    results = []
    for h in cfg.experiment.h_list:
        grid, hs = _scheme_grid(cfg, h)
        t0 = time.perf_counter()
        if cfg.scheme.kind == "control":
            err, bound = control_consistency_error(spec, grid, hs, phi, grad, hess, norms)
        else:
            err, bound = consistency_error(spec, grid, phi, grad, hess, norms)
        results.append((h, err, bound, (time.perf_counter() - t0) * 1000.0))
    hs_ = [r[0] for r in results]
    errs = [r[1] for r in results]
    rates = local_rates(hs_, errs)
    for (h, err, bound, ms), rate in zip(results, rates):
        doc.rows.append(CsvRow(h, None, err, rate, 0, None, ms, "ok"))
    doc.extra["bounds"] = [{"h": h, "measured": e, "bound": b} for h, e, b, _ in results]
    good = [(h, e) for h, e in zip(hs_, errs) if e > 0]
    if len(good) >= 3:
        doc.fits["consistency"] = fit_rate(good).to_dict()


def _rows_from_study(cfg: RunConfig, doc: ResultDocument, rows, fit, ref_rep, label: str) -> None:
    timings = cfg.output.timings
    ref_ok = ref_rep.converged
    for r in rows:
        status = _status(r.report) if ref_ok else "reference-not-converged"
        doc.rows.append(CsvRow(r.h, r.eps, r.sup_error, r.local_rate, r.report.iterations, r.report.residual,
                               _wall_ms(r.report), status))
        doc.reports.append(_report_dict(r.report, timings, label, h=r.h, eps=r.eps, **r.extra))
    doc.reports.append(_report_dict(ref_rep, timings, "reference"))
    if fit is not None:
        doc.fits[label] = fit.to_dict()


def _run_rates_h(cfg: RunConfig, doc: ResultDocument, out: Path) -> None:
    e = cfg.experiment
    rows, fit, ref = h_rate_study(cfg.problem, e.h_list, cfg.scheme.kind, e.reference_k, cfg.solver,
                                  e.coupling, cfg.threads)
    _rows_from_study(cfg, doc, rows, fit, ref, "rates-h")


def _run_rates_eps(cfg: RunConfig, doc: ResultDocument, out: Path) -> None:
    e = cfg.experiment
    if cfg.scheme.kind == "control":
        h, hs = cfg.scheme.h_grid if e.h is None else e.h, cfg.scheme.h_scheme
    else:
        h, hs = (cfg.scheme.h if e.h is None else e.h), None
    rows, fit, ref = eps_rate_study(cfg.problem, h, e.eps_list, cfg.scheme.kind, cfg.solver, hs, cfg.threads)
    _rows_from_study(cfg, doc, rows, fit, ref, "rates-eps")
    doc.extra["min_gap"] = min(r.extra["min_gap"] for r in rows)


def combined_theta(cfg: RunConfig) -> float:
    """Exponent in ``eps = h^(gamma * theta)``: 1/2 for semiconvex obstacles, 2/3 otherwise."""
    if cfg.experiment.theta is not None:
        return cfg.experiment.theta
    ob = cfg.problem.obstacle
    return 0.5 if ob.regularity is Regularity.SEMICONVEX_LIPSCHITZ else 2.0 / 3.0


def _run_combined(cfg: RunConfig, doc: ResultDocument, out: Path) -> None:
    spec = cfg.problem
    e = cfg.experiment
    kind = cfg.scheme.kind
    gamma = GAMMA[kind]
    theta = combined_theta(cfg)
    h_list = list(e.h_list)
    h_ref = h_list[-1] / e.reference_k
    ref_grid, ref_hs = _scheme_grid(cfg, h_ref)
    op_ref = discretize(spec, ref_grid, kind, ref_hs)
    uref, ref_rep = solve_operator(op_ref, cfg.solver.with_(mode="obstacle", eps=None))
    Uref = op_ref.to_grid_function(uref).values

    def one(h):
        grid, hs = _scheme_grid(cfg, h)
        eps = h ** (gamma * theta)
        op = discretize(spec, grid, kind, hs)
        v, rep = solve_operator(op, cfg.solver.with_(mode="penalized", eps=eps))
        factor = int(round(grid.h / ref_grid.h))
        sl = tuple(slice(None, None, factor) for _ in range(spec.dim))
        err = float(np.max(np.abs(op.to_grid_function(v).values - Uref[sl])))
        return eps, err, rep

    results = _map(one, h_list, cfg.threads)
    rates = local_rates(h_list, [r[1] for r in results])
    timings = cfg.output.timings
    for h, (eps, err, rep), rate in zip(h_list, results, rates):
        status = _status(rep) if ref_rep.converged else "reference-not-converged"
        doc.rows.append(CsvRow(h, eps, err, rate, rep.iterations, rep.residual, _wall_ms(rep), status))
        doc.reports.append(_report_dict(rep, timings, "combined", h=h, eps=eps))
    doc.reports.append(_report_dict(ref_rep, timings, "reference"))
    doc.extra["eps_rule"] = {"gamma": gamma, "theta": theta}
    good = [(h, err) for h, (_, err, rep) in zip(h_list, results) if rep.converged and err > 0]
    if len(good) >= 3 and ref_rep.converged:
        doc.fits["combined"] = fit_rate(good).to_dict()


_RUNNERS = {
    "solve": _run_solve,
    "validate": _run_validate,
    "consistency": _run_consistency,
    "rates-h": _run_rates_h,
    "rates-eps": _run_rates_eps,
    "combined": _run_combined,
}


def run(config: RunConfig, out_dir=None, write: bool = True) -> ResultDocument:
    """Run the configured experiment; write CSV, result document and field dump into ``out_dir``."""
    out = Path(out_dir if out_dir is not None else config.output.dir)
    if write:
        out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    np.random.seed(config.seed)
    doc = ResultDocument(config=copy.deepcopy(config.raw), experiment=config.experiment.kind)
    runner = _RUNNERS[config.experiment.kind]
    if not write:
        import tempfile

        with tempfile.TemporaryDirectory() as tmp:
            runner(config, doc, Path(tmp))
    else:
        runner(config, doc, out)
    doc.wall_time = time.perf_counter() - t0 if config.output.timings else None
    if write:
        (out / config.output.csv).write_text(doc.csv_text(config.output.timings), encoding="utf-8")
        (out / config.output.document).write_text(
            json.dumps(doc.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return doc


# ------------------------------------------------------------------ command line


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hjbobstacle", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hjbobstacle {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in _VERB_KINDS:
        s = sub.add_parser(verb, help=f"run the {verb} experiment")
        s.add_argument("--config", required=True, metavar="PATH", help="YAML or JSON run configuration")
        s.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
        s.add_argument("--seed", type=int, metavar="N", help="random seed (overrides seed)")
        s.add_argument("--threads", type=int, metavar="N", help="concurrent runs (overrides threads)")
        s.add_argument("--no-timings", action="store_true",
                       help="leave wall_ms blank so repeated runs give byte-identical tables")
    pr = sub.add_parser("presets", help="inspect the preset registry")
    pr.add_argument("action", choices=["list"])
    return p


def _apply_overrides(raw: dict, args, verb: str) -> dict:
    raw = copy.deepcopy(raw)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.threads is not None:
        raw["threads"] = args.threads
    if args.out is not None or args.no_timings:
        output = dict(raw.get("output") or {})
        if args.out is not None:
            output["dir"] = args.out
        if args.no_timings:
            output["timings"] = False
        raw["output"] = output
    allowed = _VERB_KINDS[verb]
    exp = raw.get("experiment")
    if exp is None or (isinstance(exp, dict) and "kind" not in exp):
        if len(allowed) > 1:
            raise ConfigError("experiment.kind", f"'{verb}' needs one of {', '.join(allowed)}")
        raw["experiment"] = {**(exp or {}), "kind": allowed[0]}
    elif isinstance(exp, dict) and str(exp["kind"]).lower() not in allowed:
        raise ConfigError("experiment.kind", f"{exp['kind']!r} does not match verb '{verb}'")
    return raw


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    if args.verb == "presets":
        for name in preset_names():
            print(f"{name:26s} {DESCRIPTIONS[name]}")
        return 0
    try:
        raw = _apply_overrides(read_config_document(args.config), args, args.verb)
        cfg = parse_config(raw)
    except (ConfigError, ModelError, ExpressionError, GridError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        doc = run(cfg)
    except (AnalysisError, GridError, SolverError, ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out = Path(cfg.output.dir)
    n_bad = sum(not r.ok for r in doc.rows)
    print(f"{cfg.experiment.kind}: {len(doc.rows)} rows, {n_bad} not converged -> {out / cfg.output.csv}")
    for name, fit in doc.fits.items():
        print(f"  {name} slope {fit['slope']:.4f} (r2 {fit['r2']:.4f})")
    if doc.validation is not None:
        bad = [k for k, v in doc.validation.items() if v.get("status") == "violated"]
        print("  assumptions: " + ("all hold" if not bad else "violated " + ", ".join(bad)))
    return doc.exit_code


if __name__ == "__main__":
    sys.exit(main())

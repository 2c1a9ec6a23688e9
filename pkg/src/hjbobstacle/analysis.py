"""A priori bounds, continuous dependence, reference solutions and rate fits.

The a priori bounds take a supremum over controls of per-control quotients
(never the quotient of suprema), so a control whose ``|f|`` and ``c`` both
blow up does not spoil the estimate.  Penalization is folded in the same
way: ``(1/eps)(u - g)^-`` is an extra minimising choice with coefficients
``c + 1/eps`` and ``f + g/eps``; the obstacle problem is its ``eps -> 0``
limit.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .grid import Grid, GridFunction, lipschitz_estimate, sup_diff, sup_norm
from .model import ModelError, ProblemSpec, sample_box, sampled_inf, sampled_sup_abs
from .solver import SolveReport, SolverConfig, discretize, solve_operator

__all__ = [
    "AnalysisError",
    "AprioriBounds",
    "apriori_bounds_continuous",
    "apriori_bounds_discrete",
    "continuous_dependence_bound",
    "discrete_dependence_bound",
    "dependence_inputs",
    "reference_solution",
    "zero_diffusion_closed_form",
    "RateFit",
    "fit_rate",
    "local_rates",
    "RateRow",
    "h_rate_study",
    "eps_rate_study",
]


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class AprioriBounds:
    sup_bound: float
    lipschitz_bound: float
    K: float
    C_R: Optional[float] = None
    lambda0: float = 0.0
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class _ControlData:
    sup_f: float
    inf_c: float
    lip_f: float
    lip_c: float
    lip_b: float
    lip_sigma: float


def _control_data(spec: ProblemSpec) -> list[_ControlData]:
    X = sample_box(spec)
    out = []
    for coef in spec.coefficients:
        lip = coef.lipschitz
        out.append(_ControlData(sampled_sup_abs(coef.f, spec, X), sampled_inf(coef.c, spec, X),
                                lip.f, lip.c, lip.b, lip.sigma))
    return out


def _obstacle_norms(spec: ProblemSpec) -> tuple[float, float]:
    g = spec.obstacle
    sup_g = sampled_sup_abs(g.g, spec)
    lip_g = g.seminorm if g.regularity.value != "hoelder" else math.inf
    return sup_g, lip_g


def _fold(spec: ProblemSpec, data: list[_ControlData], eps: Optional[float], obstacle: bool):
    """Per-control data with the penalty choice appended (``eps=None`` with ``obstacle``: limit)."""
    if not obstacle:
        return data, None
    if spec.obstacle is None:
        raise AnalysisError("obstacle bounds requested for a problem without obstacle")
    sup_g, lip_g = _obstacle_norms(spec)
    if eps is None:
        return data, (sup_g, lip_g)
    if not eps > 0:
        raise AnalysisError("eps must be positive")
    X = sample_box(spec)
    gX = spec.obstacle.at(X)
    extra = []
    for coef, d in zip(spec.coefficients, data):
        sup_f = float(np.max(np.abs(coef.f_at(X, 0.0) + gX / eps)))
        extra.append(_ControlData(sup_f, d.inf_c + 1.0 / eps, d.lip_f + lip_g / eps, d.lip_c, d.lip_b, d.lip_sigma))
    return data + extra, None


def _sup_quotient(data: list[_ControlData]) -> float:
    vals = []
    for d in data:
        if d.inf_c <= 0:
            return math.inf
        vals.append(d.sup_f / d.inf_c)
    return max(vals)


def _check_r_independent(spec: ProblemSpec) -> Optional[str]:
    if spec.f_depends_on_r:
        return "f depends on r: bounds are stated for r-independent sources and reported as infinite"
    return None


def apriori_bounds_continuous(spec: ProblemSpec, eps: Optional[float] = None, obstacle: bool = False) -> AprioriBounds:
    """``|u|_0 <= sup_k |f_k|_0 / inf c_k`` and the matching gradient bound.

    The gradient bound's denominator is ``inf c - [sigma]_1^2 - [b]_1`` per
    control; if it is nonpositive for any control the bound is infinite.
    """
    note = _check_r_independent(spec)
    if note:
        return AprioriBounds(math.inf, math.inf, math.inf, note=note)
    data, limit = _fold(spec, _control_data(spec), eps, obstacle)
    sup_b = _sup_quotient(data)
    lip = 0.0
    for d in data:
        den = d.inf_c - d.lip_sigma**2 - d.lip_b
        if den <= 0:
            lip = math.inf
            break
        lip = max(lip, (sup_b * d.lip_c + d.lip_f) / den)
    if limit is not None:
        sup_b = max(sup_b, limit[0])
        lip = max(lip, limit[1]) if math.isfinite(lip) else lip
    lam0 = min(d.inf_c - d.lip_sigma**2 - d.lip_b for d in data)
    return AprioriBounds(sup_b, lip, sup_b + lip, None, lam0)


def apriori_bounds_discrete(spec: ProblemSpec, h: float, eps: Optional[float] = None, obstacle: bool = False,
                            u_sup: Optional[float] = None, grid: Optional[Grid] = None) -> AprioriBounds:
    """Bounds for the finite-difference solution with step ``h``.

    ``[u_h]_1 <= sup_k {((|u_h|_0 + h^2|f_k|_0)/(1 + h^2 inf c_k)) [c_k]_1 + [f_k]_1} / (inf c_k - 2 sqrt(N) [b_k]_1)``
    with ``|u_h|_0`` taken as the sup bound unless ``u_sup`` is supplied.
    When ``grid`` is given and the problem has an obstacle, ``C_R`` reports
    ``max_x S(h, x, g(x), [g]_x)``, the discrete regularity constant of the
    obstacle.
    """
    if not h > 0:
        raise AnalysisError("h must be positive")
    note = _check_r_independent(spec)
    if note:
        return AprioriBounds(math.inf, math.inf, math.inf, note=note)
    data, limit = _fold(spec, _control_data(spec), eps, obstacle)
    sup_b = _sup_quotient(data)
    if limit is not None:
        sup_b = max(sup_b, limit[0])
    us = sup_b if u_sup is None else float(u_sup)
    root_n = math.sqrt(spec.dim)
    lip = 0.0
    for d in data:
        den = d.inf_c - 2.0 * root_n * d.lip_b
        if den <= 0:
            lip = math.inf
            break
        num = (us + h * h * d.sup_f) / (1.0 + h * h * d.inf_c) * d.lip_c + d.lip_f
        lip = max(lip, num / den)
    if limit is not None and math.isfinite(lip):
        lip = max(lip, limit[1])
    lam0 = min(d.inf_c - 2.0 * root_n * d.lip_b for d in data)
    c_r = None
    if grid is not None and spec.obstacle is not None:
        op = discretize(spec, grid, "fdm")
        c_r = float(np.max(op.scheme(op.g)))
    return AprioriBounds(sup_b, lip, sup_b + lip, c_r, lam0)


# ------------------------------------------------------------------ dependence


def _same_controls(spec: ProblemSpec, other: ProblemSpec) -> None:
    if spec.dim != other.dim or spec.n_controls != other.n_controls or spec.control_axes != other.control_axes:
        raise AnalysisError("both problems must share dimension and control sets")


def _diffs(spec: ProblemSpec, other: ProblemSpec):
    X = sample_box(spec)
    for k, (p, q) in enumerate(zip(spec.coefficients, other.coefficients)):
        db = float(np.max(np.linalg.norm(p.b_at(X) - q.b_at(X), axis=1)))
        dc = float(np.max(np.abs(p.c_at(X) - q.c_at(X))))
        df = float(np.max(np.abs(p.f_at(X, 0.0) - q.f_at(X, 0.0))))
        ic = max(sampled_inf(p.c, spec, X), sampled_inf(q.c, other, X))
        yield k, p, q, db, dc, df, ic


def continuous_dependence_bound(spec: ProblemSpec, other: ProblemSpec, L: float, M: float) -> float:
    """``|u - u_bar|_0`` bound for two problems with the same control sets.

    ``L`` and ``M`` are the larger Lipschitz constant and sup norm of the two
    solutions.  ``|sigma - sigma_bar|_0`` uses the Frobenius norm.
    """
    _same_controls(spec, other)
    if spec.f_depends_on_r or other.f_depends_on_r:
        raise AnalysisError("dependence bounds need r-independent sources")
    X = sample_box(spec)
    inner = 0.0
    for p, q in zip(spec.coefficients, other.coefficients):
        lp, lq = p.lipschitz, q.lipschitz
        inner = max(inner, 4 * L * min(lp.sigma**2, lq.sigma**2) + 2 * L * min(lp.b, lq.b)
                    + M * max(lp.c, lq.c) + min(lp.f, lq.f))
    K = math.sqrt(32.0 * L * inner)
    total = 0.0
    for k, p, q, db, dc, df, ic in _diffs(spec, other):
        if ic <= 0:
            return math.inf
        ds = float(np.max(np.linalg.norm(p.sigma_at(X) - q.sigma_at(X), axis=(1, 2))))
        total = max(total, K * ds / ic + (2 * L * db + M * dc + df) / ic)
    return total


def discrete_dependence_bound(spec: ProblemSpec, other: ProblemSpec, L: float, M: float) -> float:
    """Maximum-principle bound ``sup_k (2 sqrt(N) L |b - b_bar|_0 + M |c - c_bar|_0 + |f - f_bar|_0) / (inf c v inf c_bar)``.

    ``L`` is ``max([u_h]_1, [u_bar_h]_1)``; the ``sqrt(N)`` factor is applied
    here.  Both problems must share the diffusion matrix.
    """
    _same_controls(spec, other)
    if spec.f_depends_on_r or other.f_depends_on_r:
        raise AnalysisError("dependence bounds need r-independent sources")
    X = sample_box(spec)
    for p, q in zip(spec.coefficients, other.coefficients):
        if not np.array_equal(p.a_at(X), q.a_at(X)):
            raise AnalysisError("discrete dependence bound requires the same diffusion matrix")
    Ln = math.sqrt(spec.dim) * L
    total = 0.0
    for k, p, q, db, dc, df, ic in _diffs(spec, other):
        if ic <= 0:
            return math.inf
        total = max(total, (2 * Ln * db + M * dc + df) / ic)
    return total


def dependence_inputs(u: GridFunction, v: GridFunction) -> tuple[float, float]:
    """``(L, M)`` from two computed solutions: larger Lipschitz estimate and sup norm."""
    return max(lipschitz_estimate(u), lipschitz_estimate(v)), max(sup_norm(u), sup_norm(v))


# ------------------------------------------------------------------ references and rates


def zero_diffusion_closed_form(spec: ProblemSpec, grid: Grid) -> Optional[GridFunction]:
    """``max(g, opt_k f_k/c_k)`` when every control has ``a = 0`` and ``b = 0``; else ``None``.

    Without transport or diffusion the equation decouples node by node, so
    the pointwise formula is exact for the continuous and discrete problems.
    """
    X = np.stack([c.ravel() for c in grid.coords()])
    for coef in spec.coefficients:
        if coef.f_depends_on_r:
            return None
        if np.any(coef.a_at(X) != 0.0) or np.any(coef.b_at(X) != 0.0):
            return None
        if np.any(coef.c_at(X) <= 0.0):
            return None
    na, nb = spec.control_axes
    q = np.stack([np.broadcast_to(coef.f_at(X, 0.0) / coef.c_at(X), (X.shape[1],)) for coef in spec.coefficients])
    u = q.reshape(na, nb, -1).min(axis=1).max(axis=0)
    if spec.obstacle is not None:
        u = np.maximum(u, spec.obstacle.at(X))
    return GridFunction(grid, u.reshape(grid.nodes))


def reference_solution(spec: ProblemSpec, grid: Grid, scheme: str = "fdm", k: int = 8,
                       config: SolverConfig | None = None, h_scheme: Optional[float] = None,
                       grid_factor: Optional[int] = None) -> tuple[GridFunction, SolveReport]:
    """Solve on a refined grid and inject back onto ``grid``.

    The grid is refined by ``grid_factor`` (default ``k``); for the control
    scheme the scheme step is divided by ``k``.  ``k = 1`` reproduces the
    direct solve.
    """
    if int(k) != k or k < 1:
        raise AnalysisError("refinement factor must be a positive integer")
    gf = int(k if grid_factor is None else grid_factor)
    fine = grid.refine(gf)
    hs = None
    if scheme == "control":
        hs = (h_scheme if h_scheme is not None else math.sqrt(grid.h)) / k
    op = discretize(spec, fine, scheme, hs)
    cfg = config or SolverConfig()
    u, rep = solve_operator(op, cfg)
    U = op.to_grid_function(u).values
    sl = tuple(slice(None, None, gf) for _ in range(grid.dim))
    return GridFunction(grid, U[sl]), rep


@dataclass(frozen=True)
class RateFit:
    samples: tuple[tuple[float, float], ...]
    slope: float
    intercept: float
    r2: float

    def to_dict(self) -> dict:
        return {"samples": [list(s) for s in self.samples], "slope": self.slope,
                "intercept": self.intercept, "r2": self.r2}


def fit_rate(samples: Sequence[tuple[float, float]]) -> RateFit:
    """Least-squares slope of ``log(error)`` against ``log(parameter)``."""
    pts = [(float(p), float(e)) for p, e in samples]
    if len(pts) < 3:
        raise AnalysisError("a rate fit needs at least 3 samples")
    if any(not (p > 0 and e > 0) or not (math.isfinite(p) and math.isfinite(e)) for p, e in pts):
        raise AnalysisError("rate samples must be finite and strictly positive")
    x = np.log([p for p, _ in pts])
    y = np.log([e for _, e in pts])
    if np.ptp(x) == 0:
        raise AnalysisError("rate samples need distinct parameters")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    return RateFit(tuple(pts), float(slope), float(intercept), r2)


def local_rates(params: Sequence[float], errors: Sequence[float]) -> list[Optional[float]]:
    """Pairwise rates ``log(e_{i-1}/e_i)/log(p_{i-1}/p_i)``; ``None`` for the first row."""
    out: list[Optional[float]] = [None]
    for i in range(1, len(params)):
        a, b = errors[i - 1], errors[i]
        if a > 0 and b > 0 and params[i - 1] != params[i]:
            out.append(math.log(a / b) / math.log(params[i - 1] / params[i]))
        else:
            out.append(None)
    return out


@dataclass
class RateRow:
    h: float
    eps: Optional[float]
    sup_error: float
    local_rate: Optional[float]
    report: SolveReport
    extra: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.report.converged


def _grid_for(spec: ProblemSpec, h: float) -> Grid:
    return Grid.uniform(spec.lo, spec.hi, h, spec.policy)


def _map(fn, items, threads: int):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def h_rate_study(spec: ProblemSpec, h_list: Sequence[float], scheme: str = "fdm", k: int = 8,
                 config: SolverConfig | None = None, coupling: str = "square",
                 threads: int = 1) -> tuple[list[RateRow], Optional[RateFit], SolveReport]:
    """Errors against a refined self-reference for a decreasing list of steps.

    For the finite-difference scheme ``h`` is the grid step.  For the control
    scheme ``h`` is the scheme step and the grid step is ``h^2``
    (``coupling='square'``) or ``h`` (``'equal'``).  The reference uses the
    smallest step divided by ``k``.  Non-converged rows are excluded from the fit.
    """
    h_list = [float(h) for h in h_list]
    if not h_list or any(b >= a for a, b in zip(h_list, h_list[1:])) or min(h_list) <= 0:
        raise AnalysisError("h values must be positive and strictly decreasing")
    cfg = config or SolverConfig()

    def grid_step(h):
        if scheme == "control" and coupling == "square":
            return h * h
        return h

    h_ref = h_list[-1] / k
    ref_grid = _grid_for(spec, grid_step(h_ref))
    op_ref = discretize(spec, ref_grid, scheme, h_ref if scheme == "control" else None)
    uref, ref_rep = solve_operator(op_ref, cfg)
    Uref = op_ref.to_grid_function(uref)

    def run(h):
        grid = _grid_for(spec, grid_step(h))
        op = discretize(spec, grid, scheme, h if scheme == "control" else None)
        u, rep = solve_operator(op, cfg)
        factor = int(round(grid.h / ref_grid.h))
        if abs(factor * ref_grid.h - grid.h) > 1e-12 * grid.h:
            raise AnalysisError("reference grid does not nest the coarse grid")
        sl = tuple(slice(None, None, factor) for _ in range(spec.dim))
        err = sup_diff(op.to_grid_function(u), GridFunction(grid, Uref.values[sl]))
        return err, rep

    results = _map(run, h_list, threads)
    errs = [e for e, _ in results]
    rates = local_rates(h_list, errs)
    rows = [RateRow(h, cfg.eps if cfg.mode == "penalized" else None, e, r, rep)
            for h, (e, rep), r in zip(h_list, results, rates)]
    good = [(r.h, r.sup_error) for r in rows if r.converged and r.sup_error > 0]
    fit = fit_rate(good) if len(good) >= 3 and ref_rep.converged else None
    return rows, fit, ref_rep


def eps_rate_study(spec: ProblemSpec, h: float, eps_list: Sequence[float], scheme: str = "fdm",
                   config: SolverConfig | None = None, h_scheme: Optional[float] = None,
                   threads: int = 1) -> tuple[list[RateRow], Optional[RateFit], SolveReport]:
    """``sup (u_h - v_{h,eps})`` at fixed ``h`` for each penalty parameter.

    Each row's ``extra`` holds the smallest pointwise gap and the Lipschitz
    estimate of ``v_{h,eps}``.
    """
    eps_list = [float(e) for e in eps_list]
    if not eps_list or min(eps_list) <= 0:
        raise AnalysisError("eps values must be positive")
    if spec.obstacle is None:
        raise AnalysisError("an eps study needs an obstacle")
    cfg = config or SolverConfig()
    grid = _grid_for(spec, h)
    op = discretize(spec, grid, scheme, h_scheme)
    u, ref_rep = solve_operator(op, cfg.with_(mode="obstacle", eps=None))

    def run(eps):
        v, rep = solve_operator(op, cfg.with_(mode="penalized", eps=eps))
        gap = u - v
        vf = op.to_grid_function(v)
        return float(np.max(gap)), rep, {"min_gap": float(np.min(gap)), "lipschitz": lipschitz_estimate(vf)}

    results = _map(run, eps_list, threads)
    errs = [e for e, _, _ in results]
    rates = local_rates(eps_list, errs)
    rows = [RateRow(h, eps, e, r, rep, extra) for eps, (e, rep, extra), r in zip(eps_list, results, rates)]
    good = [(r.eps, r.sup_error) for r in rows if r.converged and r.sup_error > 0]
    fit = fit_rate(good) if len(good) >= 3 and ref_rep.converged else None
    return rows, fit, ref_rep

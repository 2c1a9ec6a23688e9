"""Solving the discrete schemes: plain, penalized and obstacle forms.

The basic method is the fixed-point iteration of the node update (Jacobi or
Gauss-Seidel), projected onto ``u >= g`` in obstacle mode.  A semismooth
Newton variant (``sweep="newton"``) freezes the active control, obstacle and
penalty pieces, solves the resulting sparse linear system, and repeats; it
falls back to the fixed-point iteration if it stalls.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .discrete import DiscreteOperator, Mode, bisect_increasing, build_operator
from .grid import Grid, GridFunction, lipschitz_estimate, sup_norm
from .model import ProblemSpec

__all__ = [
    "ScalarRootConfig",
    "SolverConfig",
    "SolveReport",
    "ComparisonReport",
    "SolverError",
    "discretize",
    "apply_T",
    "solve_operator",
    "fixed_point_solve",
    "solve_obstacle",
    "solve_penalized",
    "epsilon_continuation",
    "check_discrete_comparison",
]

_SWEEPS = {"jacobi": "jacobi", "gaussseidel": "gauss-seidel", "gauss-seidel": "gauss-seidel",
           "gauss_seidel": "gauss-seidel", "gs": "gauss-seidel", "newton": "newton"}


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScalarRootConfig:
    """Safeguarded bisection for r-dependent sources: initial bracket width and inner tolerance factor."""

    bracket_width: float = 1e-3
    inner_factor: float = 0.01


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-10
    max_iterations: int = 2_000_000
    sweep: str = "jacobi"
    mode: str = "plain"
    eps: Optional[float] = None
    scalar_root: ScalarRootConfig = field(default_factory=ScalarRootConfig)
    backend: Optional[str] = None
    newton_max_steps: Optional[int] = None  # default: 100 + 2 * unknowns
    history_limit: int = 200_000

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        sweep = _SWEEPS.get(str(self.sweep).lower().replace(" ", ""))
        if sweep is None:
            raise ValueError(f"unknown sweep {self.sweep!r}")
        object.__setattr__(self, "sweep", sweep)
        mode = Mode.parse(self.mode)
        object.__setattr__(self, "mode", {0: "plain", 1: "penalized", 2: "obstacle"}[mode])
        if mode == Mode.PENALIZED and not (self.eps is not None and self.eps > 0):
            raise ValueError("penalized mode needs eps > 0")
        if isinstance(self.scalar_root, dict):
            object.__setattr__(self, "scalar_root", ScalarRootConfig(**self.scalar_root))

    def with_(self, **kw) -> "SolverConfig":
        return replace(self, **kw)


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    residual: float
    residuals: list
    contraction_ratio: Optional[float]
    sup_norm: float
    lipschitz: float
    wall_time: float
    tolerance: float
    effective_tolerance: float
    sweep: str
    mode: str
    eps: Optional[float] = None
    backend: str = ""
    method: str = ""
    note: str = ""

    def to_dict(self, include_history: bool = False) -> dict:
        d = asdict(self)
        if not include_history:
            d["residuals"] = d["residuals"][-5:]
        return d


# ------------------------------------------------------------------ operators

_op_cache: dict = {}
_op_lock = threading.Lock()


def discretize(spec: ProblemSpec, grid: Grid, scheme: str = "fdm", h_scheme: Optional[float] = None) -> DiscreteOperator:
    """Assemble (and memoise) the discrete operator for a problem on a grid."""
    key = (id(spec), grid, scheme, h_scheme)
    hit = _op_cache.get(key)
    if hit is not None and hit[0] is spec:
        return hit[1]
    op = build_operator(spec, grid, scheme, h_scheme)
    with _op_lock:
        if len(_op_cache) > 32:
            _op_cache.clear()
        _op_cache[key] = (spec, op)
    return op


def apply_T(op: DiscreteOperator, u: np.ndarray, mode="plain", eps: Optional[float] = None) -> np.ndarray:
    """One application of the fixed-point map to a vector of unknowns."""
    return op.apply(np.asarray(u, dtype=float), Mode.parse(mode), eps)


def _apriori_magnitude(op: DiscreteOperator, u0: np.ndarray) -> float:
    mag = max(1.0, float(np.max(np.abs(u0))))
    if op.g is not None:
        mag = max(mag, float(np.max(np.abs(op.g))))
    if op.src is not None and op.lam > 0:
        mag = max(mag, float(np.max(np.abs(op.src))) / op.lam)
    return mag


def _floor(op: DiscreteOperator, mag: float, eps: Optional[float]) -> float:
    """Residual level reachable in double precision: a few ulps of ``kappa |u|`` per stencil term."""
    scale = float(np.max(op.kappa)) + (1.0 / eps if eps else 0.0)
    terms = int(np.max(np.diff(op.Q.indptr))) + 4
    return terms * np.finfo(float).eps * scale * mag


def _ratio(history: np.ndarray, floor: float) -> Optional[float]:
    h = history[history > 100.0 * floor]
    if len(h) < 3:
        return None
    # drop the transient first step
    r = h[2:] / h[1:-1]
    r = r[(r > 0) & np.isfinite(r)]
    if not len(r):
        return None
    return float(np.exp(np.mean(np.log(r))))


def solve_operator(op: DiscreteOperator, config: SolverConfig, u0: Optional[np.ndarray] = None,
                   mode=None, eps: Optional[float] = None) -> tuple[np.ndarray, SolveReport]:
    """Solve ``op`` in the requested mode; returns the unknown vector and a report."""
    t0 = time.perf_counter()
    mode = Mode.parse(config.mode if mode is None else mode)
    eps = config.eps if eps is None else eps
    if mode != Mode.PLAIN and op.g is None:
        raise SolverError("this mode needs an obstacle")
    if mode == Mode.PENALIZED and not (eps and eps > 0):
        raise SolverError("penalized mode needs eps > 0")
    u = np.zeros(op.n) if u0 is None else np.array(u0, dtype=float).ravel()
    if u.shape[0] != op.n:
        raise SolverError(f"initial guess has {u.shape[0]} values, expected {op.n}")
    mag = _apriori_magnitude(op, u)
    tol_eff = max(config.tolerance, _floor(op, mag, eps if mode == Mode.PENALIZED else None))
    eps_used = eps if mode == Mode.PENALIZED else None

    method = config.sweep
    note = ""
    if config.sweep == "newton":
        if op.r_dependent:
            note = "newton needs an r-independent source; used jacobi"
            method = "jacobi"
        else:
            out = _newton(op, mode, eps_used, u, tol_eff,
                          config.newton_max_steps or 100 + 2 * op.n)
            if out is not None:
                u_new, hist = out
                return u_new, _report(op, u_new, True, len(hist), hist, None, t0, config, tol_eff, mode,
                                      eps_used, "newton", "")
            note = "newton stalled; fell back to gauss-seidel"
            method = "gauss-seidel"
    gs = method == "gauss-seidel"
    if op.r_dependent:
        u, hist, converged = _python_iterate(op, u, mode, eps_used, gs, config, tol_eff)
        backend = "python"
    else:
        u, hist, converged, backend = _kernel_iterate(op, u, mode, eps_used, gs, config, tol_eff)
    ratio = _ratio(np.asarray(hist), tol_eff) if method == "jacobi" else None
    iterations = len(hist) - 1 if method == "jacobi" else len(hist)
    rep = _report(op, u, converged, max(iterations, 0), hist, ratio, t0, config, tol_eff, mode, eps_used, method, note)
    rep.backend = backend
    return u, rep


def _report(op, u, converged, iterations, hist, ratio, t0, config, tol_eff, mode, eps, method, note):
    res = float(np.max(np.abs(op.residual(u, mode, eps))))
    gf = op.to_grid_function(u)
    return SolveReport(
        converged=bool(converged and res <= tol_eff),
        iterations=int(iterations),
        residual=res,
        residuals=[float(v) for v in hist],
        contraction_ratio=ratio,
        sup_norm=sup_norm(gf),
        lipschitz=lipschitz_estimate(gf),
        wall_time=time.perf_counter() - t0,
        tolerance=config.tolerance,
        effective_tolerance=tol_eff,
        sweep=config.sweep,
        mode={0: "plain", 1: "penalized", 2: "obstacle"}[mode],
        eps=eps,
        backend="scipy" if method == "newton" else kernels.BACKEND,
        method=method,
        note=note,
    )


def _kernel_iterate(op, u, mode, eps, gs, config, tol_eff):
    impl = kernels.get_backend(config.backend)
    backend = "compiled" if impl is not kernels._sweep_py else "python"
    g = op.g if op.g is not None else np.zeros(op.n)
    inv_eps = 1.0 / eps if eps else 0.0
    Q = op.Q
    budget = config.max_iterations
    hist_all: list = []
    u = np.ascontiguousarray(u, dtype=float)
    chunk = 50_000
    prev_res = math.inf
    while budget > 0:
        n_it = min(budget, chunk)
        history = np.zeros(min(n_it + 1, config.history_limit))
        it = int(impl.iterate(Q.indptr, Q.indices, Q.data, op.kappa, op.src, g, inv_eps, mode,
                              op.n_alpha, op.n_beta, u, gs, n_it, tol_eff, history))
        if len(hist_all) < config.history_limit:
            hist_all.extend(history[: min(it + (0 if gs else 1), len(history))].tolist())
        res = float(np.max(np.abs(op.residual(u, mode, eps))))
        if res <= tol_eff:
            return u, hist_all, True, backend
        budget -= max(it, 1)
        if res > 0.999 * prev_res and it >= n_it:
            # a whole chunk without progress: the iteration has stalled
            break
        prev_res = res
        if it < n_it and not gs:
            # kernel and exact residual disagree at rounding level; one more pass
            n_extra = impl.iterate(Q.indptr, Q.indices, Q.data, op.kappa, op.src, g, inv_eps, mode,
                                   op.n_alpha, op.n_beta, u, gs, 1, 0.0, np.zeros(2))
            budget -= int(n_extra)
            hist_all.append(float(np.max(np.abs(op.residual(u, mode, eps)))))
            if hist_all[-1] <= tol_eff:
                return u, hist_all, True, backend
    return u, hist_all, False, backend


def _python_iterate(op, u, mode, eps, gs, config, tol_eff):
    slope = float(np.max(op.kappa)) + (1.0 / eps if eps else 0.0) + 1.0
    inner = config.scalar_root.inner_factor * tol_eff / slope
    hist = []
    for it in range(config.max_iterations + 1):
        res = float(np.max(np.abs(op.residual(u, mode, eps))))
        hist.append(res)
        if res <= tol_eff:
            return u, hist, True
        if it == config.max_iterations:
            break
        if gs:
            u = _gs_pass_r_dependent(op, u, mode, eps, inner)
        else:
            u = op.apply(u, mode, eps, inner_tol=inner)
    return u, hist, False


def _gs_pass_r_dependent(op, u, mode, eps, inner):
    u = u.copy()
    n, K = op.n, op.K
    kap = op.kappa.reshape(K, n)
    Q = op.Q
    for i in range(n):
        roots = np.empty((K, 1))
        for k in range(K):
            row = k * n + i
            lo, hi = Q.indptr[row], Q.indptr[row + 1]
            q = float(Q.data[lo:hi] @ u[Q.indices[lo:hi]])

            def fn(r, k=k, q=q):
                val = kap[k, i] * r - q - op.f_node(k, i, r)
                if mode == Mode.PENALIZED:
                    val = val + np.minimum(r - op.g[i], 0.0) / eps
                return val

            roots[k] = bisect_increasing(fn, np.array([u[i]]), max(inner, 1e-300))
        new = op.combine_roots(roots)[0]
        if mode == Mode.OBSTACLE:
            new = max(new, op.g[i])
        u[i] = new
    return u


def _newton(op: DiscreteOperator, mode: int, eps: Optional[float], u0: np.ndarray, tol: float, max_steps: int):
    """Nested policy iteration.

    The minimising choices (outer control ``alpha`` and, with an obstacle,
    stop/continue or penalty on/off) are frozen in the outer loop; the inner
    loop is Howard's algorithm for the maximising control ``beta``, which
    converges monotonically.  Plain Howard on the mixed min/max system can
    cycle, which is why the two players are separated.
    """
    n = op.n
    nb = op.n_beta
    arange = np.arange(n)
    u = u0.copy()
    if mode != Mode.PLAIN:
        u = np.maximum(u, op.g)
    hist: list = []
    last_outer = None
    steps = 0
    while steps < max_steps:
        Sk = op.per_control(u)
        V = Sk.reshape(op.n_alpha, nb, n).max(axis=1)
        alpha = np.argmin(V, axis=0)
        S = V[alpha, arange]
        side = np.zeros(n, dtype=bool)
        if mode == Mode.OBSTACLE:
            side = (u - op.g) < S
        elif mode == Mode.PENALIZED:
            side = u < op.g
        outer = np.concatenate([alpha, side.astype(np.int64)])
        if last_outer is not None and np.array_equal(outer, last_outer):
            break
        last_outer = outer
        # inner Howard over beta with alpha and side frozen
        last_beta = None
        while steps < max_steps:
            steps += 1
            Sa = Sk.reshape(op.n_alpha, nb, n)[alpha, :, arange]  # (n, nb)
            beta = np.argmax(Sa, axis=1)
            if last_beta is not None and np.array_equal(beta, last_beta):
                break
            last_beta = beta
            rows = (alpha * nb + beta) * n + arange
            A = sp.diags(op.kappa[rows]) - op.Q[rows]
            rhs = op.src[rows].copy()
            if mode == Mode.OBSTACLE:
                A = sp.diags((~side).astype(float)) @ A + sp.diags(side.astype(float))
                rhs = np.where(side, op.g, rhs)
            elif mode == Mode.PENALIZED:
                A = A + sp.diags(side / eps)
                rhs = rhs + np.where(side, op.g / eps, 0.0)
            try:
                u_new = spla.spsolve(A.tocsc(), rhs)
            except RuntimeError:
                return None
            if not np.all(np.isfinite(u_new)):
                return None
            u = u_new
            res = float(np.max(np.abs(op.residual(u, mode, eps))))
            hist.append(res)
            if res <= tol:
                return u, hist
            Sk = op.per_control(u)
    return None


# ------------------------------------------------------------------ front ends


def _to_vector(op: DiscreteOperator, u0) -> Optional[np.ndarray]:
    if u0 is None:
        return None
    if isinstance(u0, GridFunction):
        return u0.unknowns()
    return np.asarray(u0, dtype=float).ravel()


def fixed_point_solve(spec: ProblemSpec, grid: Grid, scheme: str = "fdm", config: SolverConfig | None = None,
                      h_scheme: Optional[float] = None, u0=None) -> tuple[GridFunction, SolveReport]:
    """Solve the scheme in the mode named by ``config`` (plain by default)."""
    config = config or SolverConfig()
    op = discretize(spec, grid, scheme, h_scheme)
    u, rep = solve_operator(op, config, _to_vector(op, u0))
    return op.to_grid_function(u), rep


def solve_obstacle(spec: ProblemSpec, grid: Grid, scheme: str = "fdm", config: SolverConfig | None = None,
                   h_scheme: Optional[float] = None, u0=None) -> tuple[GridFunction, SolveReport]:
    """Solve ``min{S(h, x, u(x), [u]_x), u(x) - g(x)} = 0`` by projected iteration."""
    if spec.obstacle is None:
        raise SolverError("problem has no obstacle")
    config = (config or SolverConfig()).with_(mode="obstacle", eps=None)
    op = discretize(spec, grid, scheme, h_scheme)
    u, rep = solve_operator(op, config, _to_vector(op, u0))
    return op.to_grid_function(u), rep


def solve_penalized(spec: ProblemSpec, grid: Grid, scheme: str = "fdm", eps: float = 1.0,
                    config: SolverConfig | None = None, h_scheme: Optional[float] = None,
                    u0=None) -> tuple[GridFunction, SolveReport]:
    """Solve ``S(h, x, v(x), [v]_x) = (1/eps)(v - g)^-`` with the penalty folded into the source."""
    if spec.obstacle is None:
        raise SolverError("problem has no obstacle")
    if not eps > 0:
        raise SolverError("eps must be positive")
    config = (config or SolverConfig()).with_(mode="penalized", eps=float(eps))
    op = discretize(spec, grid, scheme, h_scheme)
    u, rep = solve_operator(op, config, _to_vector(op, u0))
    return op.to_grid_function(u), rep


def epsilon_continuation(spec: ProblemSpec, grid: Grid, scheme: str, schedule: Sequence[float],
                         config: SolverConfig | None = None, h_scheme: Optional[float] = None,
                         u0=None) -> list[tuple[float, GridFunction, SolveReport]]:
    """Penalized solves along a strictly decreasing schedule, each warm-started from the previous one."""
    schedule = [float(e) for e in schedule]
    if not schedule:
        raise SolverError("empty eps schedule")
    if any(e <= 0 for e in schedule):
        raise SolverError("eps values must be positive")
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise SolverError("eps schedule must be strictly decreasing")
    out = []
    prev = u0
    for eps in schedule:
        v, rep = solve_penalized(spec, grid, scheme, eps, config, h_scheme, prev)
        out.append((eps, v, rep))
        prev = v
    return out


@dataclass
class ComparisonReport:
    sub_residual_max: float
    super_residual_min: float
    preconditions_hold: bool
    violations: list
    max_violation: float

    @property
    def holds(self) -> bool:
        return not self.violations


def check_discrete_comparison(spec: ProblemSpec, grid: Grid, scheme: str, u_sub, u_super, mode="plain",
                              eps: Optional[float] = None, tol: float = 1e-10,
                              h_scheme: Optional[float] = None) -> ComparisonReport:
    """Check ``u_sub <= u_super`` given their residual signs (sub: <= 0, super: >= 0)."""
    op = discretize(spec, grid, scheme, h_scheme)
    mode = Mode.parse(mode)
    a = _to_vector(op, u_sub)
    b = _to_vector(op, u_super)
    ra = op.residual(a, mode, eps)
    rb = op.residual(b, mode, eps)
    pre = bool(np.max(ra) <= tol and np.min(rb) >= -tol)
    diff = a - b
    bad = np.nonzero(diff > tol)[0]
    shape = grid.unknown_shape
    violations = [tuple(int(v) for v in np.unravel_index(int(i), shape)) for i in bad[:100]]
    return ComparisonReport(
        sub_residual_max=float(np.max(ra)),
        super_residual_min=float(np.min(rb)),
        preconditions_hold=pre,
        violations=violations,
        max_violation=float(max(np.max(diff), 0.0)),
    )

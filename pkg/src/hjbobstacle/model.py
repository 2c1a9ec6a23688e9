"""Continuous problem description: controls, coefficients, obstacle, and structural checks.

Conventions used throughout the package:

* ``a`` is the diffusion matrix that enters the finite-difference transition
  weights verbatim; the differential operator is
  ``-1/2 tr[a D^2 u] - b.Du + c u - f(x, u)`` so that ``a = sigma sigma^T``.
* The zero-order part is ``z(x, r) = c(x) r - f(x, r)``; the monotonicity
  assumption is checked on the slope of ``z`` in ``r``.
* ``sense = sup`` means the operator is the supremum over controls of the
  per-control operators; ``infsup`` means inf over the first control axis of
  sup over the second.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .expression import Expression, Num, as_expression
from .grid import BoundaryPolicy

__all__ = [
    "ControlGrid",
    "LipschitzConstants",
    "ControlCoefficients",
    "CoefficientSet",
    "Regularity",
    "Obstacle",
    "Sense",
    "ProblemSpec",
    "SamplingPlan",
    "AssumptionResult",
    "ValidationReport",
    "ModelError",
    "derive_lambda0",
    "validate_assumptions",
    "sample_box",
    "sampled_inf",
    "sampled_sup_abs",
]


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ControlGrid:
    """A finite control set, optionally paired with a second (inner) axis."""

    count: int
    labels: Optional[tuple[str, ...]] = None
    second_axis: Optional["ControlGrid"] = None

    def __post_init__(self):
        if int(self.count) < 1:
            raise ModelError(f"control count must be >= 1, got {self.count}")
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(str(s) for s in self.labels))
            if len(self.labels) != self.count:
                raise ModelError("labels must match control count")
        if self.second_axis is not None and self.second_axis.second_axis is not None:
            raise ModelError("at most two control axes are supported")

    @property
    def inner(self) -> int:
        return self.second_axis.count if self.second_axis is not None else 1

    @property
    def total(self) -> int:
        """Number of flattened controls; index ``k = alpha * inner + beta``."""
        return self.count * self.inner


@dataclass(frozen=True)
class LipschitzConstants:
    """Declared Lipschitz seminorms ``[sigma]_1, [b]_1, [c]_1, [f(., r)]_1`` of one control."""

    sigma: float = 0.0
    b: float = 0.0
    c: float = 0.0
    f: float = 0.0


def _expr_matrix(rows, dim) -> tuple[tuple[Expression, ...], ...]:
    return tuple(tuple(as_expression(e, dim) for e in row) for row in rows)


@dataclass(frozen=True)
class ControlCoefficients:
    """Coefficients of one (flattened) control.

    ``sigma`` is an ``N x P`` matrix of expressions in x.  ``a`` optionally
    pins the constant diffusion matrix exactly (when given, ``sigma`` is its
    symmetric square root and is only used by the control scheme).
    """

    sigma: tuple[tuple[Expression, ...], ...]
    b: tuple[Expression, ...]
    c: Expression
    f: Expression
    lipschitz: LipschitzConstants = field(default_factory=LipschitzConstants)
    a: Optional[tuple[tuple[float, ...], ...]] = None
    label: Optional[str] = None

    @classmethod
    def build(cls, dim: int, *, sigma=None, a=None, b=None, c=0.0, f=0.0,
              lipschitz: LipschitzConstants | dict | None = None, label=None) -> "ControlCoefficients":
        if sigma is None and a is None:
            a = [[0.0] * dim for _ in range(dim)]
        a_tuple = None
        if a is not None:
            arr = np.array(a, dtype=float).reshape(dim, dim)
            if not np.allclose(arr, arr.T, atol=0.0, rtol=0.0):
                raise ModelError("diffusion matrix must be symmetric")
            a_tuple = tuple(tuple(float(v) for v in row) for row in arr)
            if sigma is None:
                w, v = np.linalg.eigh(arr)
                if w.min() < -1e-12 * max(1.0, abs(w).max()):
                    raise ModelError("diffusion matrix is not positive semidefinite")
                root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
                sigma = [[float(x) for x in row] for row in root]
        sigma_t = _expr_matrix(sigma, dim)
        if len(sigma_t) != dim or any(len(row) != len(sigma_t[0]) for row in sigma_t):
            raise ModelError(f"sigma must be an {dim} x P matrix")
        if b is None:
            b = [0.0] * dim
        b_t = tuple(as_expression(e, dim) for e in b)
        if len(b_t) != dim:
            raise ModelError(f"drift must have {dim} components")
        for name, e in (("sigma", sigma_t), ("b", b_t)):
            flat = itertools.chain.from_iterable(e) if name == "sigma" else e
            for item in flat:
                if item.depends_on("r"):
                    raise ModelError(f"{name} may not depend on r")
        c_e = as_expression(c, dim)
        if c_e.depends_on("r"):
            raise ModelError("c may not depend on r; put r-dependence into f")
        if isinstance(lipschitz, dict):
            lipschitz = LipschitzConstants(**lipschitz)
        return cls(sigma_t, b_t, c_e, as_expression(f, dim), lipschitz or LipschitzConstants(), a_tuple, label)

    @property
    def dim(self) -> int:
        return len(self.b)

    @property
    def n_columns(self) -> int:
        return len(self.sigma[0])

    @property
    def sigma_constant(self) -> bool:
        return all(e.is_constant for row in self.sigma for e in row)

    @property
    def a_constant(self) -> bool:
        return self.a is not None or self.sigma_constant

    @property
    def f_depends_on_r(self) -> bool:
        return self.f.depends_on("r")

    def sigma_at(self, X: np.ndarray) -> np.ndarray:
        """sigma at points ``X`` of shape (N, M); returns (M, N, P)."""
        env = _env(X)
        M = X.shape[1]
        out = np.empty((M, self.dim, self.n_columns))
        for i, row in enumerate(self.sigma):
            for j, e in enumerate(row):
                out[:, i, j] = np.broadcast_to(e.evaluate(env), (M,))
        return out

    def a_at(self, X: np.ndarray) -> np.ndarray:
        """Diffusion matrix at points; returns (M, N, N)."""
        M = X.shape[1]
        if self.a is not None:
            return np.broadcast_to(np.array(self.a), (M, self.dim, self.dim))
        s = self.sigma_at(X)
        return np.einsum("mip,mjp->mij", s, s)

    def a_matrix(self) -> np.ndarray:
        """Constant diffusion matrix; raises if sigma depends on x."""
        if not self.a_constant:
            raise ModelError("diffusion depends on x")
        return np.array(self.a_at(np.zeros((self.dim, 1)))[0])

    def b_at(self, X: np.ndarray) -> np.ndarray:
        env = _env(X)
        M = X.shape[1]
        return np.stack([np.broadcast_to(e.evaluate(env), (M,)) for e in self.b], axis=1).astype(float)

    def c_at(self, X: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.c.evaluate(_env(X)), dtype=float), (X.shape[1],)).copy()

    def f_at(self, X: np.ndarray, r) -> np.ndarray:
        env = _env(X)
        env["r"] = r
        M = X.shape[1]
        return np.broadcast_to(np.asarray(self.f.evaluate(env), dtype=float), np.broadcast(np.empty(M), np.asarray(r)).shape).copy()

    def z_at(self, X: np.ndarray, r) -> np.ndarray:
        """Zero-order map ``c r - f(x, r)``."""
        return self.c_at(X) * r - self.f_at(X, r)


def _env(X: np.ndarray) -> dict:
    return {f"x{d + 1}": X[d] for d in range(X.shape[0])}


@dataclass(frozen=True)
class CoefficientSet:
    controls: tuple[ControlCoefficients, ...]
    lambda_lo: float
    Lambda_hi: float

    def __post_init__(self):
        if not self.controls:
            raise ModelError("need at least one control")
        if not self.lambda_lo > 0:
            raise ModelError("lambda must be positive")
        if self.Lambda_hi < self.lambda_lo:
            raise ModelError("Lambda must be >= lambda")
        dims = {c.dim for c in self.controls}
        if len(dims) != 1:
            raise ModelError("all controls must share one dimension")

    def __len__(self) -> int:
        return len(self.controls)

    def __getitem__(self, k: int) -> ControlCoefficients:
        return self.controls[k]

    def __iter__(self):
        return iter(self.controls)


class Regularity(str, Enum):
    SEMICONVEX_LIPSCHITZ = "semiconvex-lipschitz"
    LIPSCHITZ = "lipschitz"
    HOELDER = "hoelder"


@dataclass(frozen=True)
class Obstacle:
    g: Expression
    regularity: Regularity = Regularity.LIPSCHITZ
    seminorm: float = 0.0
    mu: float = 1.0
    d2_minus_bound: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "regularity", Regularity(self.regularity))
        if self.g.depends_on("r"):
            raise ModelError("obstacle may not depend on r")
        if self.regularity is Regularity.HOELDER:
            if not 0 < self.mu < 1:
                raise ModelError("Hoelder exponent must lie in (0, 1)")
        else:
            object.__setattr__(self, "mu", 1.0)
        if self.seminorm < 0:
            raise ModelError("seminorm must be nonnegative")

    def at(self, X: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.g.evaluate(_env(X)), dtype=float), (X.shape[1],)).copy()


class Sense(str, Enum):
    SUP = "sup"
    INFSUP = "infsup"


@dataclass(frozen=True)
class ProblemSpec:
    dim: int
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    controls: ControlGrid
    coefficients: CoefficientSet
    obstacle: Optional[Obstacle] = None
    sense: Sense = Sense.SUP
    policy: BoundaryPolicy = BoundaryPolicy.PERIODIC
    name: str = "inline"

    def __post_init__(self):
        object.__setattr__(self, "sense", Sense(self.sense))
        object.__setattr__(self, "policy", BoundaryPolicy.parse(self.policy))
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if self.dim < 1 or len(self.lo) != self.dim or len(self.hi) != self.dim:
            raise ModelError("box must have one interval per dimension")
        if any(not b > a for a, b in zip(self.lo, self.hi)):
            raise ModelError("box must be nonempty")
        if self.coefficients.controls[0].dim != self.dim:
            raise ModelError("coefficient dimension does not match problem dimension")
        if self.controls.total != len(self.coefficients):
            raise ModelError(
                f"control grid has {self.controls.total} controls but {len(self.coefficients)} coefficient sets"
            )
        if self.sense is Sense.INFSUP and self.controls.second_axis is None:
            raise ModelError("inf-sup sense needs a second control axis")

    @property
    def n_controls(self) -> int:
        return self.controls.total

    @property
    def control_axes(self) -> tuple[int, int]:
        """``(n_alpha, n_beta)``: inf over the first, sup over the second.

        In the sup sense every flattened control sits on the sup axis.
        """
        if self.sense is Sense.INFSUP:
            return self.controls.count, self.controls.inner
        return 1, self.controls.total

    @property
    def lambda0(self) -> float:
        return derive_lambda0(self, "fdm")

    @property
    def f_depends_on_r(self) -> bool:
        return any(c.f_depends_on_r for c in self.coefficients)

    def with_obstacle(self, obstacle: Optional[Obstacle]) -> "ProblemSpec":
        return replace(self, obstacle=obstacle)

    def with_coefficients(self, coefficients: CoefficientSet) -> "ProblemSpec":
        return replace(self, coefficients=coefficients)


# ---------------------------------------------------------------- sampling


def sample_box(spec: ProblemSpec, per_axis: Optional[int] = None) -> np.ndarray:
    """Dense tensor sample of the box (including both ends), shape (N, M)."""
    if per_axis is None:
        per_axis = {1: 4097, 2: 257, 3: 33}.get(spec.dim, 9)
    axes = [np.linspace(a, b, per_axis) for a, b in zip(spec.lo, spec.hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh])


def sampled_inf(expr: Expression, spec: ProblemSpec, X: Optional[np.ndarray] = None) -> float:
    if expr.is_constant:
        return float(expr.evaluate({}))
    X = sample_box(spec) if X is None else X
    return float(np.min(expr.evaluate(_env(X))))


def sampled_sup_abs(expr: Expression, spec: ProblemSpec, X: Optional[np.ndarray] = None, r: float = 0.0) -> float:
    env_extra = {"r": r}
    if expr.is_constant:
        return abs(float(expr.evaluate(env_extra)))
    X = sample_box(spec) if X is None else X
    env = _env(X)
    env.update(env_extra)
    return float(np.max(np.abs(expr.evaluate(env))))


def derive_lambda0(spec: ProblemSpec, family: str = "fdm") -> float:
    """``min_k {inf_x c_k - 2 sqrt(N) [b_k]_1}`` (fdm) or ``min_k {inf_x c_k - [sigma_k]_1^2 - [b_k]_1}``.

    The minimum over controls is what the contraction factor
    ``1/(1 + lambda0 h^2)`` of the fixed-point map needs: the map picks
    whichever control is optimal, so the weakest discount governs.
    Nonpositive values are returned as-is; callers treat them as a flag.
    """
    X = sample_box(spec)
    worst = math.inf
    for coef in spec.coefficients:
        inf_c = sampled_inf(coef.c, spec, X)
        lip = coef.lipschitz
        if family == "fdm":
            val = inf_c - 2.0 * math.sqrt(spec.dim) * lip.b
        elif family in ("continuous", "control"):
            val = inf_c - lip.sigma**2 - lip.b
        else:
            raise ValueError(f"unknown scheme family {family!r}")
        worst = min(worst, val)
    return worst


# -------------------------------------------------------------- validation


@dataclass(frozen=True)
class SamplingPlan:
    """Where assumptions are spot-checked.

    Grid nodes of spacing ``grid_h`` plus their midpoints, and ``n_random``
    uniformly drawn points/pairs from a generator seeded with ``seed``.
    """

    n_random: int = 1000
    seed: int = 0
    grid_h: Optional[float] = None
    r_range: tuple[float, float] = (-1.0, 1.0)
    tolerance: float = 1e-9
    weight_h: float = 1.0
    pair_distance: float = 1e-3


@dataclass(frozen=True)
class AssumptionResult:
    status: str  # "holds" | "violated" | "not-checked"
    witness: Optional[dict] = None
    detail: str = ""

    @property
    def holds(self) -> bool:
        return self.status == "holds"

    def to_dict(self) -> dict:
        out = {"status": self.status}
        if self.witness is not None:
            out["witness"] = self.witness
        if self.detail:
            out["detail"] = self.detail
        return out


@dataclass
class ValidationReport:
    entries: dict[str, AssumptionResult]

    def __getitem__(self, key: str) -> AssumptionResult:
        return self.entries[key]

    def holds(self, *names: str) -> bool:
        names = names or tuple(self.entries)
        return all(self.entries[n].holds for n in names)

    def violated(self) -> list[str]:
        return [k for k, v in self.entries.items() if v.status == "violated"]

    def to_dict(self) -> dict:
        return {k: v.to_dict() for k, v in self.entries.items()}


def _plan_points(spec: ProblemSpec, plan: SamplingPlan, rng: np.random.Generator) -> np.ndarray:
    lo = np.array(spec.lo)
    hi = np.array(spec.hi)
    h = plan.grid_h or float(np.min(hi - lo)) / 16.0
    axes = []
    for a, b in zip(spec.lo, spec.hi):
        n = max(int(round((b - a) / h)), 1)
        nodes = np.linspace(a, b, n + 1)
        mids = 0.5 * (nodes[1:] + nodes[:-1])
        axes.append(np.sort(np.concatenate([nodes, mids])))
    mesh = np.meshgrid(*axes, indexing="ij")
    structured = np.stack([m.ravel() for m in mesh])
    if structured.shape[1] > 4 * plan.n_random:
        keep = rng.choice(structured.shape[1], 4 * plan.n_random, replace=False)
        structured = structured[:, np.sort(keep)]
    rand = lo[:, None] + (hi - lo)[:, None] * rng.random((spec.dim, plan.n_random))
    return np.concatenate([structured, rand], axis=1)


def _point(X: np.ndarray, m: int) -> list[float]:
    return [float(v) for v in X[:, m]]


def _pair_quotients(values_x, values_y, dist, mu=1.0):
    return np.abs(values_x - values_y) / dist**mu


def validate_assumptions(spec: ProblemSpec, plan: SamplingPlan | None = None) -> ValidationReport:
    """Spot-check the structural assumptions; violations become report entries."""
    plan = plan or SamplingPlan()
    rng = np.random.default_rng(plan.seed)
    X = _plan_points(spec, plan, rng)
    M = X.shape[1]
    tol = plan.tolerance
    lo = np.array(spec.lo)
    hi = np.array(spec.hi)
    entries: dict[str, AssumptionResult] = {}

    # random pairs at short distance for Lipschitz quotients
    Xa = lo[:, None] + (hi - lo)[:, None] * rng.random((spec.dim, plan.n_random))
    dirs = rng.normal(size=(spec.dim, plan.n_random))
    dirs /= np.linalg.norm(dirs, axis=0, keepdims=True)
    scale = plan.pair_distance * float(np.min(hi - lo))
    dist = scale * (0.1 + 0.9 * rng.random(plan.n_random))
    Xb = Xa + dirs * dist
    Xb = np.clip(Xb, lo[:, None], hi[:, None])
    dist = np.linalg.norm(Xb - Xa, axis=0)
    ok = dist > 0
    Xa, Xb, dist = Xa[:, ok], Xb[:, ok], dist[ok]
    r_pair = rng.uniform(*plan.r_range, size=dist.shape)

    # a = sigma sigma^T PSD, Lipschitz quotients within declared constants
    a1 = None
    for k, coef in enumerate(spec.coefficients):
        A = coef.a_at(X)
        w = np.linalg.eigvalsh(A)
        bad = np.argmin(w.min(axis=1))
        if w[bad].min() < -tol * max(1.0, np.abs(w).max()):
            a1 = AssumptionResult("violated", {"control": k, "x": _point(X, bad)}, "diffusion matrix not PSD")
            break
        checks = [
            ("sigma", lambda P, c=coef: c.sigma_at(P).reshape(P.shape[1], -1), coef.lipschitz.sigma),
            ("b", lambda P, c=coef: c.b_at(P), coef.lipschitz.b),
            ("c", lambda P, c=coef: c.c_at(P)[:, None], coef.lipschitz.c),
            ("f", lambda P, c=coef: c.f_at(P, r_pair)[:, None], coef.lipschitz.f),
        ]
        for name, fn, declared in checks:
            va, vb = fn(Xa), fn(Xb)
            q = np.linalg.norm(np.atleast_2d(va - vb), axis=1) / dist
            m = int(np.argmax(q))
            if q[m] > declared * (1 + 1e-6) + tol:
                a1 = AssumptionResult(
                    "violated",
                    {"control": k, "x": _point(Xa, m), "y": _point(Xb, m), "quotient": float(q[m])},
                    f"[{name}]_1 exceeds declared {declared}",
                )
                break
        if a1 is not None:
            break
    entries["coefficient-regularity"] = a1 or AssumptionResult("holds")

    # lambda <= (z(x,r) - z(x,s)) / (r - s) <= Lambda with z = c r - f
    lam, Lam = spec.coefficients.lambda_lo, spec.coefficients.Lambda_hi
    n2 = plan.n_random
    Xr = lo[:, None] + (hi - lo)[:, None] * rng.random((spec.dim, n2))
    rs = rng.uniform(*plan.r_range, size=(2, n2))
    r, s = rs.max(axis=0), rs.min(axis=0)
    keep = r - s > 1e-12
    Xr, r, s = Xr[:, keep], r[keep], s[keep]
    a2 = None
    for k, coef in enumerate(spec.coefficients):
        q = (coef.z_at(Xr, r) - coef.z_at(Xr, s)) / (r - s)
        lo_i, hi_i = int(np.argmin(q)), int(np.argmax(q))
        if q[lo_i] < lam - tol:
            m = lo_i
        elif q[hi_i] > Lam + tol:
            m = hi_i
        else:
            continue
        a2 = AssumptionResult(
            "violated",
            {"control": k, "x": _point(Xr, m), "r": float(r[m]), "s": float(s[m]), "quotient": float(q[m])},
            f"monotonicity quotient outside [{lam}, {Lam}]",
        )
        break
    entries["source-monotonicity"] = a2 or AssumptionResult("holds")

    entries["proof-constants"] = AssumptionResult("not-checked", detail="proof-level constant")

    # constant diffusion (needed by the finite-difference scheme)
    a4 = None
    for k, coef in enumerate(spec.coefficients):
        if not coef.a_constant:
            A = coef.a_at(X)
            spread = np.abs(A - A[:1]).reshape(M, -1).max(axis=1)
            m = int(np.argmax(spread))
            a4 = AssumptionResult("violated", {"control": k, "x": _point(X, m)}, "diffusion depends on x")
            break
    entries["constant-diffusion"] = a4 or AssumptionResult("holds")

    # diagonal dominance, normalization, weight nonnegativity
    a5 = a6 = wt = None
    for k, coef in enumerate(spec.coefficients):
        A = coef.a_at(X)
        diag = np.diagonal(A, axis1=1, axis2=2)
        off = np.abs(A).sum(axis=2) - np.abs(diag)
        dom = diag - off
        if a5 is None and dom.min() < -tol:
            m, i = np.unravel_index(int(np.argmin(dom)), dom.shape)
            a5 = AssumptionResult("violated", {"control": k, "x": _point(X, m), "axis": int(i), "value": float(dom[m, i])})
        B = np.abs(coef.b_at(X))
        total = (dom + B).sum(axis=1)
        if a6 is None and total.max() > 1 + tol:
            m = int(np.argmax(total))
            a6 = AssumptionResult("violated", {"control": k, "x": _point(X, m), "value": float(total[m])})
        # centre weight with half cross terms, worst case h = weight_h
        p0 = 1.0 - (diag - 0.5 * off + plan.weight_h * B).sum(axis=1)
        p_axis = 0.5 * diag - 0.5 * off
        if wt is None and (p0.min() < -tol or p_axis.min() < -tol):
            if p0.min() < -tol:
                m = int(np.argmin(p0))
                wt = AssumptionResult("violated", {"control": k, "x": _point(X, m), "offset": [0] * spec.dim, "value": float(p0[m])})
            else:
                m, i = np.unravel_index(int(np.argmin(p_axis)), p_axis.shape)
                off_v = [0] * spec.dim
                off_v[i] = 1
                wt = AssumptionResult("violated", {"control": k, "x": _point(X, m), "offset": off_v, "value": float(p_axis[m, i])})
    entries["diagonal-dominance"] = a5 or AssumptionResult("holds")
    entries["normalization"] = a6 or AssumptionResult("holds")

    lam0 = derive_lambda0(spec, "fdm")
    entries["positive-discount"] = (
        AssumptionResult("holds", detail=f"lambda0 = {lam0!r}")
        if lam0 > 0
        else AssumptionResult("violated", {"lambda0": lam0}, "lambda0 is not positive")
    )
    entries["obstacle-regularity"] = _check_obstacle(spec, plan, rng)
    entries["weights"] = wt or AssumptionResult("holds")
    return ValidationReport(entries)


def _check_obstacle(spec: ProblemSpec, plan: SamplingPlan, rng) -> AssumptionResult:
    obs = spec.obstacle
    if obs is None:
        return AssumptionResult("not-checked", detail="no obstacle")
    lo = np.array(spec.lo)
    hi = np.array(spec.hi)
    n = plan.n_random
    X = lo[:, None] + (hi - lo)[:, None] * rng.random((spec.dim, n))
    Y = lo[:, None] + (hi - lo)[:, None] * rng.random((spec.dim, n))
    # mix long and short pairs
    short = rng.random(n) < 0.5
    step = rng.normal(size=(spec.dim, n)) * (10 ** rng.uniform(-6, -1, size=n))
    Y[:, short] = np.clip(X[:, short] + step[:, short], lo[:, None], hi[:, None])
    dist = np.linalg.norm(X - Y, axis=0)
    keep = dist > 1e-14
    X, Y, dist = X[:, keep], Y[:, keep], dist[keep]
    q = np.abs(obs.at(X) - obs.at(Y)) / dist**obs.mu
    m = int(np.argmax(q))
    if q[m] > obs.seminorm * (1 + 1e-6) + plan.tolerance:
        return AssumptionResult(
            "violated", {"x": _point(X, m), "y": _point(Y, m), "quotient": float(q[m])},
            f"sampled seminorm exceeds declared {obs.seminorm}",
        )
    if obs.regularity is Regularity.SEMICONVEX_LIPSCHITZ:
        if obs.d2_minus_bound is None:
            return AssumptionResult("violated", detail="semiconvex case needs d2_minus_bound")
        d = 1e-3 * float(np.min(hi - lo))
        Xc = lo[:, None] + d + (hi - lo - 2 * d)[:, None] * rng.random((spec.dim, n))
        worst, where = 0.0, None
        g0 = obs.at(Xc)
        for i in range(spec.dim):
            e = np.zeros((spec.dim, 1))
            e[i] = d
            second = (obs.at(Xc + e) - 2 * g0 + obs.at(Xc - e)) / d**2
            neg = np.maximum(-second, 0.0)
            j = int(np.argmax(neg))
            if neg[j] > worst:
                worst, where = float(neg[j]), _point(Xc, j)
        if worst > obs.d2_minus_bound * (1 + 1e-2) + 1e-6:
            return AssumptionResult("violated", {"x": where, "value": worst}, "negative second differences too large")
    return AssumptionResult("holds")

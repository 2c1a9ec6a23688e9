"""Control (semi-Lagrangian) scheme with monotone multilinear interpolation.

For control ``k`` the averaging operator is

    Pi u(x) = 1/(2P) sum_m [u(x + h b + sqrt(h) s_m) + u(x + h b - sqrt(h) s_m)]

with ``s_m`` the columns of sigma (``P`` of them), evaluated by multilinear
interpolation on the grid.  The fixed point reads
``u = opt_k {(1 - h c) Pi u + h f}``; in residual form
``S = opt_k {(r - (1 - h c) Pi u)/h - f(x, r)}``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .discrete import DiscreteOperator, unknown_coords
from .fdm import ConsistencyModel
from .grid import Grid, GridFunction
from .model import ModelError, ProblemSpec, sample_box

__all__ = [
    "InterpolationRule",
    "interpolation_weights",
    "pi_points",
    "pi_h",
    "control_scheme_apply",
    "control_consistency_error",
    "control_consistency_bound",
    "CONTROL_CONSISTENCY",
    "build_control_operator",
]


@dataclass(frozen=True)
class InterpolationRule:
    """Multilinear interpolation on a grid (the only kind offered: weights are convex)."""

    grid: Grid
    kind: str = "multilinear"

    def __post_init__(self):
        if self.kind != "multilinear":
            raise ValueError("only multilinear interpolation is monotone")

    def weights(self, Y: np.ndarray):
        return interpolation_weights(self.grid, Y)

    def __call__(self, u: GridFunction, Y: np.ndarray) -> np.ndarray:
        idx, w = interpolation_weights(self.grid, Y)
        return np.sum(w * u.unknowns()[idx], axis=1)


def interpolation_weights(grid: Grid, Y: np.ndarray):
    """Corner unknown indices and weights for points ``Y`` of shape (N, M).

    Returns ``(idx, w)`` of shape (M, 2^N).  Periodic grids wrap points into
    the box; clamped grids project them onto it.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    N, M = Y.shape
    shape = grid.unknown_shape
    base, frac = [], []
    for d in range(N):
        t = (Y[d] - grid.lo[d]) / grid.h
        if grid.periodic:
            period = grid.nodes[d] - 1
            t = np.mod(t, period)
            i0 = np.floor(t)
            f = t - i0
            i0 = i0.astype(np.int64) % period
        else:
            t = np.clip(t, 0.0, grid.nodes[d] - 1)
            i0 = np.minimum(np.floor(t), grid.nodes[d] - 2)
            f = t - i0
            i0 = i0.astype(np.int64)
        base.append(i0)
        frac.append(np.clip(f, 0.0, 1.0))
    idx = np.empty((M, 2**N), dtype=np.int64)
    w = np.empty((M, 2**N))
    for c, corner in enumerate(itertools.product((0, 1), repeat=N)):
        ii = []
        wc = np.ones(M)
        for d, bit in enumerate(corner):
            j = base[d] + bit
            if grid.periodic:
                j = j % shape[d]
            ii.append(j)
            wc = wc * (frac[d] if bit else 1.0 - frac[d])
        idx[:, c] = np.ravel_multi_index(ii, shape)
        w[:, c] = wc
    return idx, w


def pi_points(coef, X: np.ndarray, h_scheme: float):
    """Evaluation points of Pi for every column and sign: list of (N, M) arrays."""
    B = coef.b_at(X)  # (M, N)
    S = coef.sigma_at(X)  # (M, N, P)
    sq = math.sqrt(h_scheme)
    out = []
    for m in range(S.shape[2]):
        for s in (1.0, -1.0):
            out.append((X.T + h_scheme * B + s * sq * S[:, :, m]).T)
    return out


def _node_point(grid: Grid, node) -> np.ndarray:
    return np.array([[grid.lo[d] + grid.h * int(node[d])] for d in range(grid.dim)])


def pi_h(u: GridFunction, node, control: int, h_scheme: float, spec: ProblemSpec) -> float:
    """Average of the 2P interpolated evaluations of ``u`` around ``node``."""
    if not h_scheme > 0:
        raise ValueError("scheme step must be positive")
    coef = spec.coefficients[control]
    X = _node_point(u.grid, node)
    pts = pi_points(coef, X, h_scheme)
    vals = u.unknowns()
    acc = 0.0
    for Y in pts:
        idx, w = interpolation_weights(u.grid, Y)
        acc += float(np.sum(w[0] * vals[idx[0]]))
    return acc / len(pts)


def _check_step(spec: ProblemSpec, h_scheme: float, X=None) -> None:
    X = sample_box(spec) if X is None else X
    for k, coef in enumerate(spec.coefficients):
        cmax = float(np.max(np.abs(coef.c_at(X))))
        if h_scheme * cmax >= 1.0:
            raise ModelError(f"control {k}: h*|c| = {h_scheme * cmax} >= 1 breaks monotonicity")


def control_scheme_apply(spec: ProblemSpec, grid: Grid, u: GridFunction, node, r: float, h_scheme: float) -> float:
    """Residual ``opt_k {(r - (1 - h c) Pi u)/h - f(x, r)}`` at one node."""
    X = _node_point(grid, node)
    _check_step(spec, h_scheme, X)
    vals = []
    for k, coef in enumerate(spec.coefficients):
        c = float(coef.c_at(X)[0])
        pi = pi_h(u, node, k, h_scheme, spec)
        f = float(np.asarray(coef.f_at(X, np.array([r])))[0])
        vals.append((r - (1.0 - h_scheme * c) * pi) / h_scheme - f)
    na, nb = spec.control_axes
    return min(max(vals[a * nb + b] for b in range(nb)) for a in range(na))


def build_control_operator(spec: ProblemSpec, grid: Grid, h_scheme: float) -> DiscreteOperator:
    if grid.dim != spec.dim:
        raise ModelError("grid and problem dimensions differ")
    if not h_scheme > 0:
        raise ModelError("scheme step must be positive")
    X = unknown_coords(grid)
    _check_step(spec, h_scheme)
    n = X.shape[1]
    rows, cols, vals = [], [], []
    cmin, src = [], []
    r_dep = spec.f_depends_on_r
    base = np.arange(n)
    for k, coef in enumerate(spec.coefficients):
        c = coef.c_at(X)
        pts = pi_points(coef, X, h_scheme)
        scale = (1.0 - h_scheme * c) / (h_scheme * len(pts))
        for Y in pts:
            idx, w = interpolation_weights(grid, Y)
            for corner in range(idx.shape[1]):
                nz = w[:, corner] != 0.0
                rows.append(k * n + base[nz])
                cols.append(idx[nz, corner])
                vals.append(w[nz, corner] * scale[nz])
        cmin.append(float(np.min(c)))
        if not r_dep:
            src.append(coef.f_at(X, 0.0))
    K = spec.n_controls
    Q = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(K * n, n))
    coefs = spec.coefficients.controls

    def f_eval(k, r, X=X, coefs=coefs):
        return coefs[k].f_at(X, r)

    return DiscreteOperator(
        grid=grid,
        family="control",
        h=h_scheme,
        n_alpha=spec.control_axes[0],
        n_beta=spec.control_axes[1],
        kappa=np.full(K * n, 1.0 / h_scheme),
        Q=Q,
        src=None if r_dep else np.concatenate(src),
        f_eval=f_eval,
        X=X,
        c_min=np.array(cmin),
        lam=min(cmin) if not r_dep else spec.coefficients.lambda_lo,
        meta={"h_grid": grid.h, "coefs": coefs},
    )


# ------------------------------------------------------------------ consistency


CONTROL_CONSISTENCY = ConsistencyModel(orders={2: 1, 3: 1, 4: 1}, constants={2: 1.0, 3: 1.0, 4: 1.0})


def control_continuous_operator(spec: ProblemSpec, X: np.ndarray, phi, grad, hess) -> np.ndarray:
    """The operator the control scheme is consistent with: ``-(1/(2P)) tr[sigma sigma^T D^2] - b.D + c - f``."""
    P = np.asarray(phi(*X), dtype=float)
    G = np.stack(grad(*X), axis=-1) if spec.dim > 1 else np.asarray(grad(*X)).reshape(-1, 1)
    H = np.asarray(hess(*X), dtype=float)
    if spec.dim == 1:
        H = H.reshape(-1, 1, 1)
    vals = []
    for coef in spec.coefficients:
        S = coef.sigma_at(X)
        A = np.einsum("mip,mjp->mij", S, S) / S.shape[2]
        tr = np.einsum("mij,mij->m", A, H)
        vals.append(-0.5 * tr - np.sum(coef.b_at(X) * G, axis=1) + coef.c_at(X) * P - coef.f_at(X, P))
    V = np.stack(vals)
    na, nb = spec.control_axes
    return V.reshape(na, nb, -1).max(axis=1).min(axis=0)


def control_consistency_bound(spec: ProblemSpec, h_scheme: float, h_grid: float, derivative_norms: dict) -> float:
    """Taylor bound for the semi-discrete residual plus the interpolation term.

    With ``E`` the remainder of ``Pi phi - phi - h b.D phi - (h/2P) tr[...]``:
    ``|E| <= h^2|b|^2/2 D2 + (h^3|b|^3 + 3h^2|b| s^2)/6 D3 + (h|b| + sqrt(h) s)^4/24 D4``
    where ``|b|`` is the l1 norm of the drift and ``s`` the largest l1 norm of a
    sigma column; the residual error is ``|E|/h + c(h|b|D1 + h s^2 D2/2 + |E|)``
    plus ``N h_grid^2 D2 / (8 h)`` for interpolation.
    """
    d1 = derivative_norms.get(1, 0.0)
    d2 = derivative_norms.get(2, 0.0)
    d3 = derivative_norms.get(3, 0.0)
    d4 = derivative_norms.get(4, 0.0)
    h = h_scheme
    X = sample_box(spec)
    worst = 0.0
    for coef in spec.coefficients:
        b1 = float(np.max(np.abs(coef.b_at(X)).sum(axis=1)))
        S = coef.sigma_at(X)
        s = float(np.max(np.abs(S).sum(axis=1)))
        cmax = float(np.max(np.abs(coef.c_at(X))))
        E = 0.5 * h**2 * b1**2 * d2 + (h**3 * b1**3 + 3 * h**2 * b1 * s**2) * d3 / 6.0 + (h * b1 + math.sqrt(h) * s) ** 4 * d4 / 24.0
        val = E / h + cmax * (h * b1 * d1 + 0.5 * h * s**2 * d2 + E)
        worst = max(worst, val)
    interp = spec.dim * h_grid**2 * d2 / (8.0 * h)
    return worst + interp


def control_consistency_error(spec: ProblemSpec, grid: Grid, h_scheme: float, phi, grad, hess,
                              derivative_norms: dict) -> tuple[float, float]:
    """Measured ``sup |F(phi) - S(phi)|`` on the grid and the explicit bound."""
    op = build_control_operator(spec, grid, h_scheme)
    u = np.asarray(phi(*op.X), dtype=float)
    S = op.scheme(u)
    F = control_continuous_operator(spec, op.X, phi, grad, hess)
    err = np.abs(S - F)
    if not grid.periodic:
        # points whose stencil leaves the box are polluted by clamping
        reach = grid.h
        for coef in spec.coefficients:
            b = float(np.max(np.abs(coef.b_at(op.X))))
            sg = float(np.max(np.abs(coef.sigma_at(op.X))))
            reach = max(reach, h_scheme * b + math.sqrt(h_scheme) * sg * spec.dim + grid.h)
        inside = np.all((op.X >= np.array(grid.lo)[:, None] + reach) & (op.X <= np.array(grid.hi)[:, None] - reach), axis=0)
        err = err[inside] if inside.any() else err[:0]
    measured = float(np.max(err)) if err.size else 0.0
    return measured, control_consistency_bound(spec, h_scheme, grid.h, derivative_norms)

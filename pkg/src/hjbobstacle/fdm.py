"""Kushner finite-difference scheme: difference operators, transition weights, evaluators."""

from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .discrete import DiscreteOperator, neighbour_index, unknown_coords
from .grid import Grid, GridFunction, lookup
from .model import ModelError, ProblemSpec

__all__ = [
    "delta2_i",
    "delta_pm_i",
    "delta_cross_pm",
    "WeightError",
    "WeightEntry",
    "SchemeWeights",
    "stencil_offsets",
    "weight_arrays",
    "assemble_weights",
    "scheme_apply",
    "stencil_apply",
    "ConsistencyModel",
    "FDM_CONSISTENCY",
    "consistency_error",
    "consistency_bound",
    "build_fdm_operator",
]


# ------------------------------------------------------------------ differences


def _shift(node, axis, step):
    out = list(node)
    out[axis] += step
    return tuple(out)


def _at(u: GridFunction, node, *moves) -> float:
    idx = list(node)
    for axis, step in moves:
        idx[axis] += step
    return lookup(u, tuple(idx))


def delta2_i(u: GridFunction, node, axis: int) -> float:
    h = u.grid.h
    return (_at(u, node, (axis, 1)) - 2.0 * _at(u, node) + _at(u, node, (axis, -1))) / h**2


def delta_pm_i(u: GridFunction, node, axis: int, sign: int) -> float:
    s = 1 if sign > 0 else -1
    return s * (_at(u, node, (axis, s)) - _at(u, node)) / u.grid.h


def delta_cross_pm(u: GridFunction, node, axis_i: int, axis_j: int, sign: int) -> float:
    """Seven-point mixed differences; ``sign=+1`` uses the (++, --) diagonal, ``-1`` the (+-, -+) one."""
    h2 = u.grid.h**2
    i, j = axis_i, axis_j
    axis_sum = _at(u, node, (i, 1)) + _at(u, node, (i, -1)) + _at(u, node, (j, 1)) + _at(u, node, (j, -1))
    centre = _at(u, node)
    if sign > 0:
        diag = _at(u, node, (i, 1), (j, 1)) + _at(u, node, (i, -1), (j, -1))
        return (2.0 * centre + diag - axis_sum) / (2.0 * h2)
    diag = _at(u, node, (i, 1), (j, -1)) + _at(u, node, (i, -1), (j, 1))
    return (axis_sum - 2.0 * centre - diag) / (2.0 * h2)


# ---------------------------------------------------------------------- weights


class WeightError(ValueError):
    def __init__(self, node, control, offset, value):
        self.node, self.control, self.offset, self.value = node, control, offset, value
        super().__init__(f"negative transition weight {value!r} at node {node}, control {control}, offset {offset}")


def stencil_offsets(dim: int) -> list[tuple[int, ...]]:
    """Centre, axis neighbours, then the four diagonals of every axis pair."""
    out = [(0,) * dim]
    for i in range(dim):
        for s in (1, -1):
            e = [0] * dim
            e[i] = s
            out.append(tuple(e))
    for i, j in itertools.combinations(range(dim), 2):
        for si, sj in ((1, 1), (-1, -1), (1, -1), (-1, 1)):
            e = [0] * dim
            e[i], e[j] = si, sj
            out.append(tuple(e))
    return out


def weight_arrays(a: np.ndarray, B: np.ndarray, h: float) -> np.ndarray:
    """Transition weights for constant ``a`` and drift samples ``B`` of shape (M, N).

    Returns (M, n_offsets) in the order of :func:`stencil_offsets`.
    """
    a = np.asarray(a, dtype=float)
    N = a.shape[0]
    M = B.shape[0]
    diag = np.diag(a)
    offabs = np.abs(a).sum(axis=1) - np.abs(diag)
    bp = np.maximum(B, 0.0)
    bm = np.maximum(-B, 0.0)
    cols = [1.0 - np.sum(diag - 0.5 * offabs + h * np.abs(B), axis=1)]
    for i in range(N):
        base = 0.5 * diag[i] - 0.5 * offabs[i]
        cols.append(base + h * bp[:, i])
        cols.append(base + h * bm[:, i])
    for i, j in itertools.combinations(range(N), 2):
        plus = max(a[i, j], 0.0) / 2.0
        minus = max(-a[i, j], 0.0) / 2.0
        cols.extend([np.full(M, plus), np.full(M, plus), np.full(M, minus), np.full(M, minus)])
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class WeightEntry:
    """Transition weights of one node and control, with the zero-order hooks."""

    node: tuple[int, ...]
    control: int
    weights: dict
    c: float
    f: Callable[[float], float]

    def row_sum(self) -> float:
        return math.fsum(self.weights.values())


def _node_x(grid: Grid, node) -> np.ndarray:
    return np.array([[grid.lo[d] + grid.h * node[d]] for d in range(grid.dim)])


class SchemeWeights:
    """Lazily assembled weight tables for one problem on one grid.

    Entries are memoised per (node, control); the diffusion part is shared
    across nodes because ``a`` is constant.  Insertion is guarded so the
    table may be filled from several threads.
    """

    def __init__(self, spec: ProblemSpec, grid: Grid):
        if grid.h > 1:
            raise ModelError(f"weights need h <= 1, got h={grid.h}")
        self.spec = spec
        self.grid = grid
        self.offsets = stencil_offsets(spec.dim)
        self._a = []
        for k, coef in enumerate(spec.coefficients):
            if not coef.a_constant:
                raise ModelError(f"control {k}: the finite-difference scheme needs x-independent diffusion")
            self._a.append(coef.a_matrix())
        self._memo: dict = {}
        self._lock = threading.Lock()

    def entry(self, node, control: int) -> WeightEntry:
        key = (tuple(int(i) for i in node), int(control))
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        coef = self.spec.coefficients[control]
        X = _node_x(self.grid, key[0])
        w = weight_arrays(self._a[control], coef.b_at(X), self.grid.h)[0]
        for off, val in zip(self.offsets, w):
            if val < -1e-14:
                raise WeightError(key[0], control, off, float(val))
        weights = {off: float(val) for off, val in zip(self.offsets, w) if val != 0.0 or off == self.offsets[0]}
        c = float(coef.c_at(X)[0])

        def f_hook(r, X=X, coef=coef):
            return float(np.asarray(coef.f_at(X, np.array([r], dtype=float)))[0])

        entry = WeightEntry(key[0], control, weights, c, f_hook)
        with self._lock:
            return self._memo.setdefault(key, entry)

    def table(self, control: int) -> np.ndarray:
        """Weights at every distinct unknown, shape (n_unknowns, n_offsets)."""
        X = unknown_coords(self.grid)
        coef = self.spec.coefficients[control]
        return weight_arrays(self._a[control], coef.b_at(X), self.grid.h)


_weights_cache: dict = {}
_weights_lock = threading.Lock()


def _weights_for(spec: ProblemSpec, grid: Grid) -> SchemeWeights:
    key = (id(spec), grid)
    hit = _weights_cache.get(key)
    if hit is not None and hit.spec is spec:
        return hit
    table = SchemeWeights(spec, grid)
    with _weights_lock:
        if len(_weights_cache) > 64:
            _weights_cache.clear()
        _weights_cache[key] = table
    return table


def assemble_weights(spec: ProblemSpec, grid: Grid, node, control: int) -> WeightEntry:
    return _weights_for(spec, grid).entry(node, control)


# -------------------------------------------------------------------- evaluators


def _combine(spec: ProblemSpec, values: Sequence[float]) -> float:
    na, nb = spec.control_axes
    return min(max(values[a * nb + b] for b in range(nb)) for a in range(na))


def scheme_apply(spec: ProblemSpec, grid: Grid, u: GridFunction, node, r: float) -> float:
    """Weight form ``opt_k { -(1/h^2)[sum_z p(x,x+z) u(x+z) - r] + c r - f(x, r) }``.

    Terms are summed in the fixed offset order, so the value is independent
    of where the node sits in the grid.
    """
    table = _weights_for(spec, grid)
    h2 = grid.h**2
    node = tuple(int(i) for i in node)
    vals = []
    for k in range(spec.n_controls):
        e = table.entry(node, k)
        acc = 0.0
        for off, p in e.weights.items():
            acc += p * lookup(u, tuple(n + o for n, o in zip(node, off)))
        vals.append(-(acc - r) / h2 + e.c * r - e.f(r))
    return _combine(spec, vals)


def stencil_apply(spec: ProblemSpec, grid: Grid, u: GridFunction, node, r: float) -> float:
    """Difference-operator form, evaluated independently of the weight tables."""
    node = tuple(int(i) for i in node)
    X = _node_x(grid, node)
    N = spec.dim
    vals = []
    for coef in spec.coefficients:
        a = coef.a_matrix()
        B = coef.b_at(X)[0]
        total = 0.0
        for i in range(N):
            total += -0.5 * a[i, i] * delta2_i(u, node, i)
            for j in range(N):
                if j == i:
                    continue
                total += -0.5 * max(a[i, j], 0.0) * delta_cross_pm(u, node, i, j, +1)
                total += 0.5 * max(-a[i, j], 0.0) * delta_cross_pm(u, node, i, j, -1)
            total += -max(B[i], 0.0) * delta_pm_i(u, node, i, +1) + max(-B[i], 0.0) * delta_pm_i(u, node, i, -1)
        c = float(coef.c_at(X)[0])
        f = float(np.asarray(coef.f_at(X, np.array([r])))[0])
        vals.append(total + c * r - f)
    return _combine(spec, vals)


# ------------------------------------------------------------------ consistency


@dataclass(frozen=True)
class ConsistencyModel:
    """Consistency bound ``sum_i K_i |D^i phi|_0 h^{k_i}``; ``gamma = min k_i / i`` over active terms."""

    orders: dict
    constants: dict

    def __post_init__(self):
        for i, k in self.orders.items():
            if int(k) != k or k <= 0:
                raise ValueError(f"order k_{i} must be a positive integer")
        for i, K in self.constants.items():
            if K < 0:
                raise ValueError(f"constant K_{i} must be nonnegative")
        if not any(self.constants.get(i, 0.0) > 0 for i in self.orders):
            raise ValueError("at least one constant must be positive")

    @property
    def gamma(self) -> float:
        return min(k / i for i, k in self.orders.items() if self.constants.get(i, 0.0) > 0)

    def bound(self, h: float, derivative_norms: dict) -> float:
        return sum(self.constants.get(i, 0.0) * derivative_norms.get(i, 0.0) * h**k for i, k in self.orders.items())


FDM_CONSISTENCY = ConsistencyModel(orders={2: 1, 4: 2}, constants={2: 1.0, 4: 1.0})


def consistency_bound(spec: ProblemSpec, h: float, derivative_norms: dict) -> float:
    """Explicit Taylor bound on ``|F(phi) - S(phi)|`` for the weight form.

    ``derivative_norms[k]`` is the largest absolute k-th order partial
    derivative of phi.  The drift contributes ``h/2 sum|b_i| |D^2|`` and the
    diffusion ``h^2 (sum a_ii / 24 + 3/4 sum_{i<j} |a_ij|) |D^4|``.
    """
    d2 = derivative_norms.get(2, 0.0)
    d4 = derivative_norms.get(4, 0.0)
    worst = 0.0
    from .model import sample_box

    X = sample_box(spec)
    for coef in spec.coefficients:
        a = coef.a_matrix()
        bsum = float(np.max(np.abs(coef.b_at(X)).sum(axis=1)))
        cross = sum(abs(a[i, j]) for i, j in itertools.combinations(range(spec.dim), 2))
        val = h * 0.5 * bsum * d2 + h**2 * (np.trace(a) / 24.0 + 0.75 * cross) * d4
        worst = max(worst, val)
    return worst


def continuous_operator(spec: ProblemSpec, X: np.ndarray, phi, grad, hess, r=None) -> np.ndarray:
    """``opt_k {-1/2 tr[a D^2 phi] - b.D phi + c r - f(x, r)}`` at points X (N, M)."""
    P = phi(*X)
    r = P if r is None else r
    G = np.stack(grad(*X), axis=-1) if spec.dim > 1 else np.asarray(grad(*X)).reshape(-1, 1)
    H = np.asarray(hess(*X), dtype=float)
    if spec.dim == 1:
        H = H.reshape(-1, 1, 1)
    vals = []
    for coef in spec.coefficients:
        A = coef.a_at(X)
        B = coef.b_at(X)
        tr = np.einsum("mij,mij->m", A, H)
        vals.append(-0.5 * tr - np.sum(B * G, axis=1) + coef.c_at(X) * r - coef.f_at(X, r))
    V = np.stack(vals)
    na, nb = spec.control_axes
    return V.reshape(na, nb, -1).max(axis=1).min(axis=0)


def consistency_error(spec: ProblemSpec, grid: Grid, phi, grad, hess, derivative_norms: dict,
                      interior_only: bool = True) -> tuple[float, float]:
    """Measured ``sup |F(phi) - S(phi)|`` over nodes and the explicit bound.

    ``phi``, ``grad`` and ``hess`` take N coordinate arrays; ``grad`` returns
    N arrays and ``hess`` an (M, N, N) array (or (M,) in 1D).
    """
    op = build_fdm_operator(spec, grid)
    X = op.X
    u = np.asarray(phi(*X), dtype=float)
    S = op.scheme(u)
    F = continuous_operator(spec, X, phi, grad, hess)
    err = np.abs(S - F)
    if interior_only and not grid.periodic:
        idx = np.indices(grid.unknown_shape).reshape(grid.dim, -1)
        inner = np.all((idx >= 1) & (idx <= np.array(grid.unknown_shape)[:, None] - 2), axis=0)
        err = err[inner]
    return float(np.max(err)), consistency_bound(spec, grid.h, derivative_norms)


# ------------------------------------------------------------------- assembly


def build_fdm_operator(spec: ProblemSpec, grid: Grid) -> DiscreteOperator:
    if grid.dim != spec.dim:
        raise ModelError("grid and problem dimensions differ")
    if grid.h > 1:
        raise ModelError(f"weights need h <= 1, got h={grid.h}")
    X = unknown_coords(grid)
    n = X.shape[1]
    offsets = stencil_offsets(spec.dim)
    nbr = [neighbour_index(grid, off) for off in offsets]
    h2 = grid.h**2
    rows, cols, vals = [], [], []
    kappa, src, cmin = [], [], []
    r_dep = spec.f_depends_on_r
    base = np.arange(n)
    for k, coef in enumerate(spec.coefficients):
        if not coef.a_constant:
            raise ModelError(f"control {k}: the finite-difference scheme needs x-independent diffusion")
        W = weight_arrays(coef.a_matrix(), coef.b_at(X), grid.h)
        bad = np.argwhere(W < -1e-14)
        if len(bad):
            m, o = bad[0]
            node = tuple(int(v) for v in np.unravel_index(int(m), grid.unknown_shape))
            raise WeightError(node, k, offsets[o], float(W[m, o]))
        for o, idx in enumerate(nbr):
            nz = W[:, o] != 0.0
            rows.append(k * n + base[nz])
            cols.append(idx[nz])
            vals.append(W[nz, o] / h2)
        c = coef.c_at(X)
        kappa.append(1.0 / h2 + c)
        cmin.append(float(np.min(c)))
        if not r_dep:
            src.append(coef.f_at(X, 0.0))
    K = spec.n_controls
    Q = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(K * n, n)
    )
    Q.sum_duplicates()
    coefs = spec.coefficients.controls

    def f_eval(k, r, X=X, coefs=coefs):
        return coefs[k].f_at(X, r)

    lam = min(cmin) if not r_dep else spec.coefficients.lambda_lo
    return DiscreteOperator(
        grid=grid,
        family="fdm",
        h=grid.h,
        n_alpha=spec.control_axes[0],
        n_beta=spec.control_axes[1],
        kappa=np.concatenate(kappa),
        Q=Q,
        src=None if r_dep else np.concatenate(src),
        f_eval=f_eval,
        X=X,
        c_min=np.array(cmin),
        lam=lam,
        meta={"coefs": coefs},
    )

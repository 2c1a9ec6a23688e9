"""Assembled discrete operators shared by both schemes.

For every flattened control ``k`` and distinct unknown ``i`` a scheme is

    S_k(i, r, u) = kappa_k(i) * r - (Q_k u)(i) - f_k(x_i, r)

with ``Q_k`` a nonnegative matrix.  The finite-difference scheme has
``kappa = 1/h^2 + c`` and ``Q = P/h^2`` (``P`` the transition weights, centre
weight included); the control scheme has ``kappa = 1/h`` and
``Q = (1 - h c)/h * Pi`` with ``Pi`` the interpolated averaging operator.
Controls are combined by ``sup`` (or ``inf`` over the first axis of ``sup``
over the second).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .grid import Grid, GridFunction
from .model import ProblemSpec

__all__ = ["DiscreteOperator", "build_operator", "Mode", "unknown_coords", "neighbour_index"]

_EPS = np.finfo(float).eps


class Mode:
    PLAIN = 0
    PENALIZED = 1
    OBSTACLE = 2

    _names = {"plain": 0, "penalized": 1, "obstacle": 2, "obstacleprojected": 2, "obstacle-projected": 2}

    @classmethod
    def parse(cls, value) -> int:
        if isinstance(value, int):
            if value not in (0, 1, 2):
                raise ValueError(f"unknown mode {value}")
            return value
        try:
            return cls._names[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown solver mode {value!r}") from None


def unknown_coords(grid: Grid) -> np.ndarray:
    """Coordinates of the distinct unknowns, shape (N, n), row-major."""
    return np.stack([c.ravel() for c in grid.coords(unknowns_only=True)])


def neighbour_index(grid: Grid, offset) -> np.ndarray:
    """Flat unknown index of ``node + offset`` for every unknown (boundary policy applied)."""
    shape = grid.unknown_shape
    idx = np.indices(shape)
    moved = []
    for d, o in enumerate(offset):
        j = idx[d] + int(o)
        if grid.periodic:
            j = np.mod(j, shape[d])
        else:
            j = np.clip(j, 0, shape[d] - 1)
        moved.append(j)
    return np.ravel_multi_index(moved, shape).ravel()


@dataclass
class DiscreteOperator:
    grid: Grid
    family: str
    h: float
    n_alpha: int
    n_beta: int
    kappa: np.ndarray
    Q: sp.csr_matrix
    src: Optional[np.ndarray]
    f_eval: Callable[[int, np.ndarray], np.ndarray]
    X: np.ndarray
    c_min: np.ndarray
    lam: float
    g: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.Q = sp.csr_matrix(self.Q)
        self.Q.indptr = self.Q.indptr.astype(np.int32)
        self.Q.indices = self.Q.indices.astype(np.int32)
        self.kappa = np.ascontiguousarray(self.kappa, dtype=float)
        if self.src is not None:
            self.src = np.ascontiguousarray(self.src, dtype=float)

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def K(self) -> int:
        return self.n_alpha * self.n_beta

    @property
    def r_dependent(self) -> bool:
        return self.src is None

    def with_obstacle(self, g: Optional[np.ndarray]) -> "DiscreteOperator":
        out = DiscreteOperator(**{**self.__dict__, "g": None if g is None else np.ascontiguousarray(g, float)})
        return out

    # ---- per-control pieces

    def q(self, u: np.ndarray) -> np.ndarray:
        """``(Q_k u)`` for all controls, shape (K, n)."""
        return (self.Q @ u).reshape(self.K, self.n)

    def f_node(self, k: int, i: int, r) -> np.ndarray:
        """Source of control ``k`` at unknown ``i`` for candidate values ``r``."""
        return self.meta["coefs"][k].f_at(self.X[:, i:i + 1], r)

    def f_values(self, r: np.ndarray) -> np.ndarray:
        if self.src is not None:
            return self.src.reshape(self.K, self.n)
        return np.stack([self.f_eval(k, r) for k in range(self.K)])

    def per_control(self, u: np.ndarray, r: Optional[np.ndarray] = None) -> np.ndarray:
        """``S_k(i, r_i, u)`` for all controls; ``r`` defaults to ``u``."""
        r = u if r is None else r
        return self.kappa.reshape(self.K, self.n) * r - self.q(u) - self.f_values(r)

    def combine(self, values: np.ndarray) -> np.ndarray:
        """Apply the optimisation over controls to per-control residuals (K, m)."""
        m = values.shape[-1]
        return values.reshape(self.n_alpha, self.n_beta, m).max(axis=1).min(axis=0)

    def combine_roots(self, roots: np.ndarray) -> np.ndarray:
        m = roots.shape[-1]
        return roots.reshape(self.n_alpha, self.n_beta, m).min(axis=1).max(axis=0)

    def active_controls(self, values: np.ndarray) -> np.ndarray:
        """Index of the control attaining ``combine`` at each node."""
        m = values.shape[-1]
        v = values.reshape(self.n_alpha, self.n_beta, m)
        beta = np.argmax(v, axis=1)
        inner = np.take_along_axis(v, beta[None], axis=1)[0]
        alpha = np.argmin(inner, axis=0)
        return alpha * self.n_beta + beta[alpha, np.arange(m)]

    # ---- full scheme

    def scheme(self, u: np.ndarray, r: Optional[np.ndarray] = None) -> np.ndarray:
        """The combined operator ``S(h, x, r, [u]_x)`` without obstacle or penalty."""
        return self.combine(self.per_control(u, r))

    def residual(self, u: np.ndarray, mode: int = Mode.PLAIN, eps: Optional[float] = None) -> np.ndarray:
        mode = Mode.parse(mode)
        s = self.scheme(u)
        if mode == Mode.PENALIZED:
            s = s + np.minimum(u - self.g, 0.0) / eps
        elif mode == Mode.OBSTACLE:
            s = np.minimum(s, u - self.g)
        return s

    def roots(self, u: np.ndarray, mode: int = Mode.PLAIN, eps: Optional[float] = None,
              guess: Optional[np.ndarray] = None, inner_tol: float = 1e-13) -> np.ndarray:
        """Per-control roots ``r`` of ``S_k(i, r, u) (+ penalty) = 0`` with neighbours frozen at ``u``."""
        mode = Mode.parse(mode)
        kap = self.kappa.reshape(self.K, self.n)
        q = self.q(u)
        if self.src is not None:
            q = q + self.src.reshape(self.K, self.n)
            root = q / kap
            if mode == Mode.PENALIZED:
                inv = 1.0 / eps
                root = np.where(root < self.g, (q + self.g * inv) / (kap + inv), root)
            return root
        guess = u if guess is None else guess
        out = np.empty((self.K, self.n))
        for k in range(self.K):
            def fn(r, k=k):
                val = kap[k] * r - q[k] - self.f_eval(k, r)
                if mode == Mode.PENALIZED:
                    val = val + np.minimum(r - self.g, 0.0) / eps
                return val
            out[k] = bisect_increasing(fn, guess, max(inner_tol, 1e-300))
        return out

    def apply(self, u: np.ndarray, mode: int = Mode.PLAIN, eps: Optional[float] = None, inner_tol: float = 1e-13) -> np.ndarray:
        """One application of the fixed-point map (Jacobi)."""
        mode = Mode.parse(mode)
        new = self.combine_roots(self.roots(u, mode, eps, inner_tol=inner_tol))
        if mode == Mode.OBSTACLE:
            new = np.maximum(new, self.g)
        return new

    def rounding_floor(self, u: np.ndarray, eps: Optional[float] = None) -> float:
        """Residual level below which double-precision rounding dominates."""
        scale = float(np.max(self.kappa)) + (1.0 / eps if eps else 0.0)
        mag = max(1.0, float(np.max(np.abs(u))))
        if self.g is not None:
            mag = max(mag, float(np.max(np.abs(self.g))))
        if self.src is not None:
            mag = max(mag, float(np.max(np.abs(self.src))) / scale)
        terms = int(np.max(np.diff(self.Q.indptr))) + 4
        return terms * _EPS * scale * mag

    def contraction_bound(self) -> float:
        """Sup-norm Lipschitz constant of the fixed-point map implied by the weights."""
        if self.family == "fdm":
            return float(np.max(1.0 / (1.0 + self.h**2 * self.c_min)))
        return float(np.max(1.0 - self.h * self.c_min))

    def to_grid_function(self, u: np.ndarray) -> GridFunction:
        return GridFunction.from_unknowns(self.grid, u)


def bisect_increasing(fn, guess: np.ndarray, tol: float, max_steps: int = 200) -> np.ndarray:
    """Vectorised safeguarded bisection for strictly increasing scalar maps.

    The bracket is grown geometrically from ``guess`` until it straddles the
    root, then halved until its width is below ``tol`` (relative to the
    magnitude of the root).
    """
    guess = np.asarray(guess, dtype=float)
    lo = guess.copy()
    hi = guess.copy()
    f0 = fn(guess)
    step = np.maximum(1e-3, 1e-3 * np.abs(guess))
    need_lo = f0 > 0
    need_hi = f0 < 0
    for _ in range(max_steps):
        if not (need_lo.any() or need_hi.any()):
            break
        lo = np.where(need_lo, lo - step, lo)
        hi = np.where(need_hi, hi + step, hi)
        step = step * 2.0
        need_lo = need_lo & (fn(lo) > 0)
        need_hi = need_hi & (fn(hi) < 0)
    else:
        raise RuntimeError("scalar root bracketing failed")
    exact = f0 == 0
    for _ in range(max_steps):
        width = hi - lo
        if np.all(width <= tol * np.maximum(1.0, np.abs(lo))):
            break
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        lo = np.where(fm <= 0, mid, lo)
        hi = np.where(fm > 0, mid, hi)
    out = 0.5 * (lo + hi)
    return np.where(exact, guess, out)


def build_operator(spec: ProblemSpec, grid: Grid, scheme: str = "fdm", h_scheme: Optional[float] = None) -> DiscreteOperator:
    """Assemble the operator of ``scheme`` ('fdm' or 'control') on ``grid``."""
    scheme = scheme.lower()
    if scheme == "fdm":
        from .fdm import build_fdm_operator

        op = build_fdm_operator(spec, grid)
    elif scheme == "control":
        from .control import build_control_operator

        op = build_control_operator(spec, grid, h_scheme if h_scheme is not None else float(np.sqrt(grid.h)))
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    if spec.obstacle is not None:
        op.g = np.ascontiguousarray(spec.obstacle.at(op.X), dtype=float)
    return op

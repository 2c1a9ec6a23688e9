"""Uniform tensor grids on truncated boxes and the fields that live on them."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .expression import Expression

__all__ = [
    "BoundaryPolicy",
    "Grid",
    "GridFunction",
    "GridError",
    "eval_on_grid",
    "lookup",
    "sup_norm",
    "sup_diff",
    "lipschitz_estimate",
    "hoelder_estimate",
    "mollify",
    "bump_kernel",
    "write_field",
    "read_field",
]

_SNAP_TOL = 1e-12


class GridError(ValueError):
    pass


class BoundaryPolicy(str, Enum):
    PERIODIC = "periodic"
    CLAMP = "clamp"

    @classmethod
    def parse(cls, value: "BoundaryPolicy | str") -> "BoundaryPolicy":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise GridError(f"unknown boundary policy {value!r}") from None


@dataclass(frozen=True)
class Grid:
    """Uniform grid with one spacing ``h`` on every axis.

    Node ``i`` on axis ``d`` sits at ``lo[d] + i*h``; the box is snapped so
    that ``hi - lo == h*(nodes - 1)`` exactly (up to rounding).  Under the
    periodic policy the last node on each axis aliases the first one, so the
    distinct unknowns are the nodes with all indices ``< nodes - 1``.
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    h: float
    nodes: tuple[int, ...]
    policy: BoundaryPolicy = BoundaryPolicy.PERIODIC

    def __post_init__(self):
        if not (len(self.lo) == len(self.hi) == len(self.nodes)) or not self.lo:
            raise GridError("lo, hi and nodes must have the same positive length")
        if not self.h > 0:
            raise GridError(f"spacing must be positive, got {self.h}")
        for d, (a, b, n) in enumerate(zip(self.lo, self.hi, self.nodes)):
            if n < 3:
                raise GridError(f"axis {d}: need at least 3 nodes, got {n}")
            if not b > a:
                raise GridError(f"axis {d}: empty box [{a}, {b}]")
            if abs(a + self.h * (n - 1) - b) > _SNAP_TOL * max(1.0, abs(b), abs(a)):
                raise GridError(f"axis {d}: box [{a}, {b}] is not a multiple of h={self.h}")
        object.__setattr__(self, "policy", BoundaryPolicy.parse(self.policy))

    @classmethod
    def uniform(
        cls,
        lo: Sequence[float],
        hi: Sequence[float],
        h: float,
        policy: BoundaryPolicy | str = BoundaryPolicy.PERIODIC,
    ) -> "Grid":
        lo = tuple(float(v) for v in lo)
        hi = tuple(float(v) for v in hi)
        nodes = []
        for a, b in zip(lo, hi):
            steps = (b - a) / h
            n = int(round(steps))
            if abs(steps - n) > 1e-9 * max(1.0, steps):
                raise GridError(f"box [{a}, {b}] is not a multiple of h={h}")
            nodes.append(n + 1)
        return cls(lo, hi, float(h), tuple(nodes), BoundaryPolicy.parse(policy))

    @classmethod
    def from_nodes(cls, lo, hi, nodes, policy=BoundaryPolicy.PERIODIC) -> "Grid":
        lo = tuple(float(v) for v in lo)
        hi = tuple(float(v) for v in hi)
        nodes = tuple(int(n) for n in nodes)
        spacings = {(b - a) / (n - 1) for a, b, n in zip(lo, hi, nodes)}
        h = next(iter(spacings))
        if any(abs(s - h) > _SNAP_TOL * h for s in spacings):
            raise GridError("axes must share one spacing")
        return cls(lo, hi, h, nodes, BoundaryPolicy.parse(policy))

    @property
    def dim(self) -> int:
        return len(self.nodes)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.nodes

    @property
    def size(self) -> int:
        return int(np.prod(self.nodes))

    @property
    def periodic(self) -> bool:
        return self.policy is BoundaryPolicy.PERIODIC

    @property
    def unknown_shape(self) -> tuple[int, ...]:
        """Shape of the array of distinct unknowns."""
        if self.periodic:
            return tuple(n - 1 for n in self.nodes)
        return self.nodes

    @property
    def n_unknowns(self) -> int:
        return int(np.prod(self.unknown_shape))

    def axis_coords(self, d: int) -> np.ndarray:
        return self.lo[d] + self.h * np.arange(self.nodes[d])

    def coords(self, unknowns_only: bool = False) -> list[np.ndarray]:
        """Node coordinates as a list of N broadcast arrays (``ij`` indexing)."""
        axes = [self.axis_coords(d) for d in range(self.dim)]
        if unknowns_only and self.periodic:
            axes = [a[:-1] for a in axes]
        return list(np.meshgrid(*axes, indexing="ij"))

    def env(self, unknowns_only: bool = False) -> dict[str, np.ndarray]:
        return {f"x{d + 1}": c for d, c in enumerate(self.coords(unknowns_only))}

    def wrap_index(self, index: Sequence[int]) -> tuple[int, ...]:
        """Map a possibly out-of-range multi-index into the stored node range."""
        out = []
        for i, n in zip(index, self.nodes):
            i = int(i)
            if self.periodic:
                out.append(i % (n - 1))
            else:
                out.append(min(max(i, 0), n - 1))
        return tuple(out)

    def refine(self, k: int) -> "Grid":
        if k < 1:
            raise GridError("refinement factor must be >= 1")
        return Grid(self.lo, self.hi, self.h / k, tuple((n - 1) * k + 1 for n in self.nodes), self.policy)

    def with_spacing(self, h: float) -> "Grid":
        return Grid.uniform(self.lo, self.hi, h, self.policy)

    def box_length(self, d: int) -> float:
        return self.hi[d] - self.lo[d]

    def header(self) -> dict:
        return {
            "dim": self.dim,
            "nodes": list(self.nodes),
            "lo": list(self.lo),
            "hi": list(self.hi),
            "h": self.h,
            "policy": self.policy.value,
        }


class GridFunction:
    """Immutable snapshot of one real value per grid node."""

    __slots__ = ("grid", "_values")

    def __init__(self, grid: Grid, values):
        values = np.array(values, dtype=float)
        if values.size != grid.size:
            raise GridError(f"expected {grid.size} values, got {values.size}")
        values = values.reshape(grid.shape)
        bad = np.argwhere(~np.isfinite(values))
        if len(bad):
            raise GridError(f"non-finite value at node {tuple(int(i) for i in bad[0])}")
        values.setflags(write=False)
        self.grid = grid
        self._values = values

    @classmethod
    def from_unknowns(cls, grid: Grid, u: np.ndarray) -> "GridFunction":
        """Expand a vector of distinct unknowns to all nodes (periodic duplicates copied)."""
        u = np.asarray(u, dtype=float).reshape(grid.unknown_shape)
        if grid.periodic:
            u = np.pad(u, [(0, 1)] * grid.dim, mode="wrap")
        return cls(grid, u)

    @property
    def values(self) -> np.ndarray:
        return self._values

    def unknowns(self) -> np.ndarray:
        """Flat copy of the distinct unknowns in row-major order."""
        v = self._values
        if self.grid.periodic:
            v = v[tuple(slice(0, n - 1) for n in self.grid.nodes)]
        return np.array(v, dtype=float).ravel()

    def __getitem__(self, index) -> float:
        return lookup(self, index)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self._values, dtype=dtype)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        return GridFunction(self.grid, fn(self._values))

    def __add__(self, other):
        return GridFunction(self.grid, self._values + _values_of(other, self.grid))

    def __sub__(self, other):
        return GridFunction(self.grid, self._values - _values_of(other, self.grid))

    def __neg__(self):
        return GridFunction(self.grid, -self._values)

    def __repr__(self) -> str:
        return f"GridFunction(dim={self.grid.dim}, nodes={self.grid.nodes}, sup={sup_norm(self):.6g})"


def _values_of(other, grid: Grid):
    if isinstance(other, GridFunction):
        if other.grid != grid:
            raise GridError("grid mismatch")
        return other.values
    return other


def eval_on_grid(fn: Expression | Callable | float, grid: Grid) -> GridFunction:
    """Evaluate a scalar function of x at every node."""
    env = grid.env()
    if isinstance(fn, Expression):
        vals = fn.evaluate(env)
    elif callable(fn):
        vals = fn(*[env[f"x{d + 1}"] for d in range(grid.dim)])
    else:
        vals = fn
    vals = np.broadcast_to(np.asarray(vals, dtype=float), grid.shape).copy()
    bad = np.argwhere(~np.isfinite(vals))
    if len(bad):
        raise GridError(f"non-finite value at node {tuple(int(i) for i in bad[0])}")
    return GridFunction(grid, vals)


def lookup(u: GridFunction, index) -> float:
    if np.isscalar(index):
        index = (index,)
    return float(u.values[u.grid.wrap_index(index)])


def sup_norm(u: GridFunction) -> float:
    return float(np.max(np.abs(u.values)))


def sup_diff(u: GridFunction, v: GridFunction) -> float:
    if u.grid != v.grid:
        raise GridError("grid mismatch")
    return float(np.max(np.abs(u.values - v.values)))


def lipschitz_estimate(u: GridFunction) -> float:
    """Largest axis-neighbour difference quotient ``|u(x+e_i h) - u(x)|/h``."""
    best = 0.0
    for d in range(u.grid.dim):
        diffs = np.diff(u.values, axis=d)
        if diffs.size:
            best = max(best, float(np.max(np.abs(diffs))))
    return best / u.grid.h


def hoelder_estimate(u: GridFunction, mu: float, radius: int = 8) -> float:
    """Largest ``|u(x)-u(y)|/|x-y|^mu`` over node pairs at most ``radius`` nodes apart."""
    if not 0 < mu <= 1:
        raise ValueError("mu must lie in (0, 1]")
    grid = u.grid
    vals = u.values
    best = 0.0
    rng = range(-radius, radius + 1)
    for offset in itertools.product(rng, repeat=grid.dim):
        # each unordered pair once: first non-zero component positive
        nz = [o for o in offset if o != 0]
        if not nz or nz[0] < 0:
            continue
        dist = grid.h * math.sqrt(sum(o * o for o in offset))
        if dist > radius * grid.h + 1e-15:
            continue
        if grid.periodic:
            core = vals[tuple(slice(0, n - 1) for n in grid.nodes)]
            shifted = np.roll(core, [-o for o in offset], axis=tuple(range(grid.dim)))
            a, b = core, shifted
        else:
            src = []
            dst = []
            for o, n in zip(offset, grid.nodes):
                if abs(o) >= n:
                    break
                src.append(slice(max(0, -o), n - max(0, o)))
                dst.append(slice(max(0, o), n - max(0, -o)))
            else:
                a, b = vals[tuple(src)], vals[tuple(dst)]
                if a.size:
                    best = max(best, float(np.max(np.abs(a - b))) / dist**mu)
                continue
            continue
        best = max(best, float(np.max(np.abs(a - b))) / dist**mu)
    return best


def bump_kernel(r2: np.ndarray) -> np.ndarray:
    """Unnormalised standard bump ``exp(-1/(1-|x|^2))`` on the unit ball."""
    out = np.zeros_like(r2, dtype=float)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


def mollify(g: Expression | Callable, delta: float, nodes_per_axis: int = 21, dim: int = 1) -> Callable:
    """Return ``x -> sum_e w_e g(x - e)`` with discrete bump weights on ``|e| <= delta``.

    The weights are renormalised to unit mass, so constants are reproduced
    exactly.  ``g`` is either an Expression in x1..xN or a callable taking N
    coordinate arrays.
    """
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if nodes_per_axis < 1:
        raise ValueError("need at least one quadrature node per axis")
    # midpoint nodes on [-1, 1], symmetric so odd moments vanish
    t = (np.arange(nodes_per_axis) + 0.5) / nodes_per_axis * 2.0 - 1.0
    pts = np.array(list(itertools.product(t, repeat=dim)))
    w = bump_kernel(np.sum(pts**2, axis=1))
    keep = w > 0
    pts, w = pts[keep] * delta, w[keep]
    if not len(w):
        # one node per axis lands on the centre
        pts, w = np.zeros((1, dim)), np.ones(1)
    w = w / w.sum()

    if isinstance(g, Expression):
        def base(*xs):
            return g.evaluate({f"x{d + 1}": x for d, x in enumerate(xs)})
    else:
        base = g

    def smoothed(*xs):
        xs = [np.asarray(x, dtype=float) for x in xs]
        centre = np.broadcast_to(np.asarray(base(*xs), dtype=float), np.broadcast(*xs).shape)
        # sum of weighted increments: constants come back bit-for-bit
        acc = np.zeros(centre.shape)
        for e, we in zip(pts, w):
            acc = acc + we * (np.asarray(base(*[x - e[d] for d, x in enumerate(xs)]), dtype=float) - centre)
        return centre + acc

    smoothed.weights = w
    smoothed.offsets = pts
    return smoothed


_FIELD_MAGIC = "# hjbobstacle-field v1"


def write_field(path, u: GridFunction, meta: dict | None = None) -> None:
    """Write a field as a two-line header followed by one value per line (row-major)."""
    header = u.grid.header()
    if meta:
        header["meta"] = meta
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_FIELD_MAGIC + "\n")
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        for v in u.values.ravel():
            fh.write(repr(float(v)) + "\n")


def read_field(path) -> GridFunction:
    with open(path, encoding="utf-8") as fh:
        magic = fh.readline().rstrip("\n")
        if magic != _FIELD_MAGIC:
            raise GridError(f"{path}: not a field dump")
        header = json.loads(fh.readline()[2:])
        values = np.array([float(line) for line in fh if line.strip()])
    grid = Grid(
        tuple(header["lo"]), tuple(header["hi"]), header["h"], tuple(header["nodes"]),
        BoundaryPolicy.parse(header["policy"]),
    )
    return GridFunction(grid, values)

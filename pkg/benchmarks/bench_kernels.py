"""Compare the compiled sweep kernel with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--preset NAME] [--h H] [--repeat N]

Reports the time per Jacobi and Gauss-Seidel pass of each backend and the
wall time of a full obstacle solve on a coarse grid, and checks that both
backends agree.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from hjbobstacle.grid import Grid
from hjbobstacle.kernels import get_backend
from hjbobstacle.presets import get_preset, preset_names
from hjbobstacle.solver import SolverConfig, discretize, solve_operator


def time_passes(impl, op, gs: bool, repeat: int) -> tuple[float, np.ndarray]:
    Q = op.Q
    u = np.zeros(op.n)
    hist = np.zeros(repeat + 1)
    t0 = time.perf_counter()
    impl.iterate(Q.indptr, Q.indices, Q.data, op.kappa, op.src, op.g, 0.0, 2,
                 op.n_alpha, op.n_beta, u, gs, repeat, 0.0, hist)
    return (time.perf_counter() - t0) / repeat, u


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--preset", default="smooth-obstacle-1d", choices=preset_names())
    p.add_argument("--h", type=float, default=None, help="grid step (default 2^-8 in 1D, 2^-5 in 2D)")
    p.add_argument("--repeat", type=int, default=200, help="passes timed per backend")
    args = p.parse_args(argv)

    spec = get_preset(args.preset)
    h = args.h or (2.0**-8 if spec.dim == 1 else 2.0**-5)
    op = discretize(spec, Grid.uniform(spec.lo, spec.hi, h, spec.policy), "fdm")
    try:
        backends = {"compiled": get_backend("compiled"), "python": get_backend("python")}
    except ImportError:
        backends = {"python": get_backend("python")}
        print("compiled extension not built; timing the fallback only")

    print(f"{args.preset}: {op.n} unknowns, {op.K} controls, {op.Q.nnz} stencil entries")
    per_pass = {}
    fields = {}
    for name, impl in backends.items():
        for gs in (False, True):
            t, u = time_passes(impl, op, gs, args.repeat)
            per_pass[name, gs] = t
            fields[name, gs] = u
            print(f"  {name:9s} {'gauss-seidel' if gs else 'jacobi':12s} {t * 1e6:10.1f} us/pass")
    if len(backends) == 2:
        for gs in (False, True):
            diff = float(np.max(np.abs(fields["compiled", gs] - fields["python", gs])))
            speed = per_pass["python", gs] / per_pass["compiled", gs]
            print(f"  speed-up ({'gauss-seidel' if gs else 'jacobi'}): {speed:.1f}x, max difference {diff:.2e}")

    # the fallback needs ~1/(h^2 c) passes, so the full solve uses a coarse grid
    h_solve = 2.0**-5 if spec.dim == 1 else 2.0**-3
    op_s = discretize(spec, Grid.uniform(spec.lo, spec.hi, h_solve, spec.policy), "fdm")
    for name in backends:
        cfg = SolverConfig(tolerance=1e-10, sweep="gauss-seidel", mode="obstacle", backend=name)
        t0 = time.perf_counter()
        _, rep = solve_operator(op_s, cfg)
        print(f"  full solve h={h_solve} [{name}]: {time.perf_counter() - t0:.3f} s, {rep.iterations} passes, "
              f"residual {rep.residual:.1e}")


if __name__ == "__main__":
    main()

import numpy as np
import pytest

from hjbobstacle.analysis import zero_diffusion_closed_form
from hjbobstacle.expression import as_expression
from hjbobstacle.grid import Grid, sup_diff
from hjbobstacle.kernels import get_backend
from hjbobstacle.model import Obstacle, Regularity
from hjbobstacle.presets import get_preset
from hjbobstacle.solver import (
    SolverConfig,
    SolverError,
    check_discrete_comparison,
    discretize,
    epsilon_continuation,
    fixed_point_solve,
    solve_obstacle,
    solve_operator,
    solve_penalized,
)

from helpers import make_spec


def grid_of(spec, h):
    return Grid.uniform(spec.lo, spec.hi, h, spec.policy)


def flat_obstacle(value):
    return Obstacle(as_expression(str(value), 1), Regularity.LIPSCHITZ, 0.0)


def test_zero_diffusion_constant_source():
    spec = make_spec(1, [dict(a=[[0.0]], b=[0.0], c=1.0, f="2")])
    u, rep = fixed_point_solve(spec, grid_of(spec, 1 / 32))
    assert rep.converged
    assert np.allclose(u.unknowns(), 2.0, atol=1e-10)


@pytest.mark.parametrize("name", ["zero-diffusion-1d", "zero-diffusion-2d"])
def test_obstacle_closed_form(name):
    spec = get_preset(name)
    g = grid_of(spec, 1 / 32)
    u, rep = solve_obstacle(spec, g)
    assert rep.converged
    assert sup_diff(u, zero_diffusion_closed_form(spec, g)) <= 1e-9


def test_inactive_obstacle_equals_plain():
    base = get_preset("smooth-obstacle-1d")
    spec = make_spec(1, [dict(a=[[0.1]], b=[0.2], c=1.0, f="sin(2*pi*x1)")], obstacle=flat_obstacle(-1e6))
    g = grid_of(base, 1 / 64)
    u, _ = fixed_point_solve(spec, g)
    w, _ = solve_obstacle(spec, g)
    assert sup_diff(u, w) <= 1e-9


@pytest.mark.parametrize("eps", [1.0, 0.25, 1e-3])
def test_penalized_closed_form(eps):
    # v + (v - 1)/eps = 0
    spec = make_spec(1, [dict(a=[[0.0]], b=[0.0], c=1.0, f="0")], obstacle=flat_obstacle(1.0))
    v, rep = solve_penalized(spec, grid_of(spec, 1 / 16), eps=eps)
    assert np.allclose(v.unknowns(), 1 / (1 + eps), atol=1e-9)


def test_large_eps_recovers_plain():
    spec = make_spec(1, [dict(a=[[0.1]], b=[0.2], c=1.0, f="sin(2*pi*x1)")], obstacle=flat_obstacle(0.5))
    g = grid_of(spec, 1 / 32)
    u, _ = fixed_point_solve(spec, g, config=SolverConfig(sweep="newton"))
    v, _ = solve_penalized(spec, g, eps=1e8, config=SolverConfig(sweep="newton"))
    assert sup_diff(u, v) <= 1e-6


class TestOrdering:
    spec = get_preset("smooth-obstacle-1d")
    cfg = SolverConfig(sweep="newton", tolerance=1e-12)

    def test_sandwich_and_eps_monotonicity(self):
        g = grid_of(self.spec, 1 / 64)
        u, _ = fixed_point_solve(self.spec, g, config=self.cfg)
        w, _ = solve_obstacle(self.spec, g, config=self.cfg)
        prev = None
        for eps in (1.0, 0.1, 0.01, 0.001):
            v, _ = solve_penalized(self.spec, g, eps=eps, config=self.cfg)
            assert np.all(u.unknowns() <= v.unknowns() + 1e-10)
            assert np.all(v.unknowns() <= w.unknowns() + 1e-10)
            if prev is not None:
                assert np.all(prev <= v.unknowns() + 1e-10)
            prev = v.unknowns()

    def test_comparison(self):
        g = grid_of(self.spec, 1 / 32)
        w, _ = solve_obstacle(self.spec, g, config=self.cfg)
        lo = w.unknowns() - 0.1
        hi = w.unknowns() + 0.1
        rep = check_discrete_comparison(self.spec, g, "fdm", lo, hi, mode="obstacle")
        assert rep.preconditions_hold and rep.holds
        bad = check_discrete_comparison(self.spec, g, "fdm", hi, lo, mode="obstacle")
        assert not bad.preconditions_hold
        assert not bad.holds
        assert bad.max_violation == pytest.approx(0.2)


class TestContinuation:
    spec = get_preset("smooth-obstacle-1d")

    def test_single_step_equals_direct(self):
        g = grid_of(self.spec, 1 / 32)
        [(eps, v, _)] = epsilon_continuation(self.spec, g, "fdm", [1.0])
        d, _ = solve_penalized(self.spec, g, eps=1.0)
        assert eps == 1.0
        assert sup_diff(v, d) == 0.0

    def test_warm_start_saves_iterations(self):
        g = grid_of(self.spec, 1 / 32)
        steps = epsilon_continuation(self.spec, g, "fdm", [1.0, 0.5])
        _, cold = solve_penalized(self.spec, g, eps=0.5)
        assert steps[1][2].iterations <= cold.iterations
        assert sup_diff(steps[1][1], solve_penalized(self.spec, g, eps=0.5)[0]) <= 1e-8

    @pytest.mark.parametrize("schedule", [[], [1.0, 1.0], [0.5, 1.0], [1.0, -0.5]])
    def test_bad_schedules(self, schedule):
        with pytest.raises(SolverError):
            epsilon_continuation(self.spec, grid_of(self.spec, 1 / 8), "fdm", schedule)


@pytest.mark.parametrize("name", ["smooth-obstacle-1d", "isaacs-1d", "cross-derivative-2d"])
def test_sweeps_agree(name):
    spec = get_preset(name)
    g = grid_of(spec, 1 / 16)
    tol = 1e-10
    sols = {}
    for sweep in ("jacobi", "gauss-seidel", "newton"):
        u, rep = solve_obstacle(spec, g, config=SolverConfig(sweep=sweep, tolerance=tol))
        assert rep.converged
        sols[sweep] = u.unknowns()
    for sweep in ("gauss-seidel", "newton"):
        assert np.max(np.abs(sols[sweep] - sols["jacobi"])) <= 10 * tol


def test_apriori_sup_bound():
    spec = make_spec(1, [dict(a=[[0.1]], b=[0.3], c=0.5, f="2*sin(2*pi*x1)")])
    u, _ = fixed_point_solve(spec, grid_of(spec, 1 / 64), config=SolverConfig(sweep="newton"))
    assert np.max(np.abs(u.unknowns())) <= 4.0


def test_contraction_ratio_within_bound():
    spec = get_preset("smooth-obstacle-1d")
    op = discretize(spec, grid_of(spec, 1 / 16))
    _, rep = solve_operator(op, SolverConfig(mode="obstacle"))
    assert rep.contraction_ratio is not None
    assert rep.contraction_ratio <= op.contraction_bound() + 1e-6


def test_r_dependent_source():
    # r - (1 - r^3) = 0
    spec = make_spec(1, [dict(a=[[0.0]], b=[0.0], c=1.0, f="1 - r^3")], lam=1.0)
    u, rep = fixed_point_solve(spec, grid_of(spec, 1 / 8), config=SolverConfig(tolerance=1e-12))
    root = np.roots([1, 0, 1, -1]).real[np.abs(np.roots([1, 0, 1, -1]).imag) < 1e-12][0]
    assert rep.converged
    assert np.allclose(u.unknowns(), root, atol=1e-9)


def test_newton_falls_back_for_r_dependent_source():
    spec = make_spec(1, [dict(a=[[0.1]], b=[0.0], c=1.0, f="1 - r^3")], lam=1.0)
    _, rep = fixed_point_solve(spec, grid_of(spec, 1 / 8), config=SolverConfig(sweep="newton"))
    assert rep.method == "jacobi" and rep.note


def test_backends_agree():
    try:
        get_backend("compiled")
    except ImportError:
        pytest.skip("compiled kernel not built")
    spec = get_preset("isaacs-1d")
    g = grid_of(spec, 1 / 32)
    out = {}
    for backend in ("compiled", "python"):
        u, rep = solve_obstacle(spec, g, config=SolverConfig(sweep="gauss-seidel", backend=backend))
        assert rep.backend == backend
        out[backend] = u.unknowns()
    assert np.max(np.abs(out["compiled"] - out["python"])) <= 1e-12


def test_iteration_cap_reported():
    spec = get_preset("smooth-obstacle-1d")
    _, rep = solve_obstacle(spec, grid_of(spec, 1 / 32), config=SolverConfig(max_iterations=5))
    assert not rep.converged
    assert rep.iterations <= 5


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tolerance=0)
    with pytest.raises(ValueError):
        SolverConfig(sweep="sor")
    with pytest.raises(ValueError):
        SolverConfig(mode="penalized")
    spec = make_spec(1, [dict(a=[[0.0]], b=[0.0], c=1.0)])
    with pytest.raises(SolverError):
        solve_obstacle(spec, grid_of(spec, 0.25))


@pytest.mark.parametrize("sweep", ["jacobi", "gauss-seidel", "newton"])
def test_postconditions(sweep):
    spec = get_preset("degenerate-obstacle-1d")
    g = grid_of(spec, 1 / 32)
    tol = 1e-10
    op = discretize(spec, g)
    u, rep = solve_operator(op, SolverConfig(sweep=sweep, mode="obstacle", tolerance=tol))
    assert rep.converged
    assert rep.residual <= tol
    assert np.max(np.abs(op.residual(u, 2))) <= tol
    assert np.all(u >= op.g - tol)

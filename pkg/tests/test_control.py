import numpy as np
import pytest

from hjbobstacle.control import (
    InterpolationRule,
    build_control_operator,
    control_consistency_error,
    control_scheme_apply,
    interpolation_weights,
    pi_h,
)
from hjbobstacle.expression import parse_expression
from hjbobstacle.grid import Grid, GridFunction, eval_on_grid
from hjbobstacle.model import ModelError
from hjbobstacle.presets import get_preset, preset_names

from helpers import make_spec

TWO_PI = 2 * np.pi


def clamp1(h):
    return Grid.uniform((0.0,), (1.0,), h, "clamp")


class TestInterpolation:
    def test_weights_are_convex(self):
        g = Grid.uniform((0.0, 0.0), (1.0, 1.0), 0.125)
        Y = np.random.default_rng(0).uniform(-0.5, 1.5, size=(2, 50))
        idx, w = interpolation_weights(g, Y)
        assert idx.shape == (50, 4)
        assert np.all(w >= 0)
        assert np.allclose(w.sum(axis=1), 1.0)

    def test_nodes_reproduced(self):
        g = clamp1(0.125)
        u = eval_on_grid(parse_expression("x1^3"), g)
        X = np.array([[0.25, 0.5, 0.875]])
        assert np.allclose(InterpolationRule(g)(u, X), X[0] ** 3)

    def test_only_multilinear(self):
        with pytest.raises(ValueError):
            InterpolationRule(clamp1(0.5), kind="cubic")


class TestPi:
    def test_constants_exact(self):
        spec = make_spec(1, [dict(a=[[0.3]], b=[0.2], c=1.0)])
        g = Grid.uniform((0.0,), (1.0,), 1 / 32)
        u = eval_on_grid(3.0, g)
        for i in (0, 7, 31):
            assert pi_h(u, (i,), 0, 0.05, spec) == 3.0

    def test_linear_data(self):
        b, h = 0.2, 0.01
        spec = make_spec(1, [dict(a=[[0.3]], b=[b], c=1.0)], policy="clamp")
        g = clamp1(1 / 32)
        u = eval_on_grid(parse_expression("2*x1 + 1"), g)
        for i in (8, 16, 20):
            x = i / 32
            assert pi_h(u, (i,), 0, h, spec) == pytest.approx(2 * (x + h * b) + 1, abs=1e-12)

    def test_quadratic(self):
        s2, h, hg = 0.3, 0.01, 1 / 64
        spec = make_spec(1, [dict(a=[[s2]], b=[0.0], c=1.0)], policy="clamp")
        g = clamp1(hg)
        u = eval_on_grid(parse_expression("x1^2/2"), g)
        for i in (16, 32, 40):
            x = i * hg
            got = pi_h(u, (i,), 0, h, spec)
            exact = x * x / 2 + h * s2 / 2
            # multilinear interpolation of a convex quadratic overshoots by at most hg^2/8
            assert exact - 1e-14 <= got <= exact + hg**2 / 8 + 1e-14

    def test_monotone(self):
        spec = get_preset("smooth-obstacle-1d")
        g = Grid.uniform(spec.lo, spec.hi, 1 / 64)
        rng = np.random.default_rng(1)
        for _ in range(20):
            u = rng.normal(size=g.unknown_shape)
            v = u + rng.uniform(0, 1, size=u.shape)
            U, V = GridFunction.from_unknowns(g, u), GridFunction.from_unknowns(g, v)
            for k in range(2):
                for i in (0, 13, 50):
                    assert pi_h(U, (i,), k, 0.02, spec) <= pi_h(V, (i,), k, 0.02, spec)

    def test_step_must_be_positive(self):
        spec = make_spec(1, [dict(a=[[0.3]], b=[0.0], c=1.0)])
        u = eval_on_grid(1.0, Grid.uniform((0.0,), (1.0,), 0.25))
        with pytest.raises(ValueError):
            pi_h(u, (0,), 0, 0.0, spec)


class TestResidual:
    def test_fixed_point_of_constant_source(self):
        spec = make_spec(1, [dict(a=[[0.2]], b=[0.1], c=1.0, f="2")])
        g = Grid.uniform((0.0,), (1.0,), 1 / 16)
        u = eval_on_grid(2.0, g)
        for i in (0, 5):
            assert control_scheme_apply(spec, g, u, (i,), 2.0, 0.1) == pytest.approx(0.0, abs=1e-12)

    def test_constant_k_with_f_equal_cK(self):
        K, c = 1.7, 0.8
        spec = make_spec(1, [dict(a=[[0.2]], b=[0.0], c=c, f=str(c * K))])
        g = Grid.uniform((0.0,), (1.0,), 1 / 16)
        op = build_control_operator(spec, g, 0.05)
        assert np.max(np.abs(op.scheme(np.full(op.n, K)))) <= 1e-12

    def test_increasing_in_candidate(self):
        spec = get_preset("isaacs-1d")
        g = Grid.uniform(spec.lo, spec.hi, 1 / 32)
        u = eval_on_grid(parse_expression("sin(2*pi*x1)"), g)
        h = 0.05
        rs = np.linspace(-1, 1, 9)
        vals = [control_scheme_apply(spec, g, u, (3,), r, h) for r in rs]
        slopes = np.diff(vals) / np.diff(rs)
        assert np.all(slopes >= 1 / h - 1e-6)

    def test_large_step_rejected(self):
        spec = make_spec(1, [dict(a=[[0.2]], b=[0.0], c=2.0)])
        g = Grid.uniform((0.0,), (1.0,), 1 / 16)
        with pytest.raises(ModelError):
            build_control_operator(spec, g, 0.5)
        with pytest.raises(ModelError):
            control_scheme_apply(spec, g, eval_on_grid(0.0, g), (0,), 0.0, 0.6)

    def test_operator_matches_pointwise(self):
        spec = get_preset("smooth-obstacle-1d")
        g = Grid.uniform(spec.lo, spec.hi, 1 / 32)
        u = eval_on_grid(parse_expression("cos(2*pi*x1)"), g)
        op = build_control_operator(spec, g, 0.04)
        r = u.unknowns() + 0.3
        S = op.scheme(u.unknowns(), r)
        for i in (0, 9, 20):
            assert S[i] == pytest.approx(control_scheme_apply(spec, g, u, (i,), r[i], 0.04), abs=1e-10)

    @pytest.mark.parametrize("name", preset_names())
    def test_contraction_factor(self, name):
        spec = get_preset(name)
        g = Grid.uniform(spec.lo, spec.hi, 1 / 16)
        h = 0.1
        op = build_control_operator(spec, g, h)
        assert op.contraction_bound() <= 1 - h * min(op.c_min) + 1e-12


def _sine():
    w = TWO_PI
    return (lambda x: np.sin(w * x), lambda x: w * np.cos(w * x), lambda x: -w * w * np.sin(w * x),
            {1: w, 2: w**2, 3: w**3, 4: w**4})


class TestConsistency:
    def test_linear_leaves_only_discount_cross_term(self):
        spec = make_spec(1, [dict(a=[[0.3]], b=[0.2], c=1.0)], policy="clamp")
        phi = lambda x: 2 * x + 1
        grad = lambda x: 2 + 0 * x
        hess = lambda x: 0 * x
        h = 0.01
        err, bound = control_consistency_error(spec, clamp1(1 / 64), h, phi, grad, hess, {1: 2.0})
        # (phi - (1 - h c)(phi + h b phi'))/h = c phi - b phi' + h c b phi'
        assert err == pytest.approx(h * 1.0 * 0.2 * 2.0, rel=1e-8)
        # the bound is sharp here; allow round-off only
        assert err <= bound * (1 + 1e-9)

    def test_quadratic_only_interpolation(self):
        spec = make_spec(1, [dict(a=[[0.3]], b=[0.0], c=1.0)], policy="clamp")
        h, hg = 0.01, 1 / 64
        phi = lambda x: x * x / 2
        grad = lambda x: x
        hess = lambda x: 1 + 0 * x
        err, bound = control_consistency_error(spec, clamp1(hg), h, phi, grad, hess, {1: 1.0, 2: 1.0})
        # (1 - h c)/h times interpolation overshoot plus c h s^2/2
        assert err <= hg**2 / (8 * h) + h * 0.3 / 2 + 1e-10
        assert err <= bound

    def test_sine_first_order(self):
        spec = get_preset("smooth-obstacle-1d")
        phi, grad, hess, norms = _sine()
        hs = [1 / 16, 1 / 32, 1 / 64, 1 / 128]
        errs = []
        for h in hs:
            n = round(1 / h**2)
            e, bound = control_consistency_error(spec, Grid.from_nodes(spec.lo, spec.hi, (n + 1,)), h,
                                                 phi, grad, hess, norms)
            assert e <= bound
            errs.append(e)
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert slope >= 0.9

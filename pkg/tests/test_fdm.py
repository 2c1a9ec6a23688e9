import numpy as np
import pytest

from hjbobstacle.expression import parse_expression
from hjbobstacle.fdm import (
    FDM_CONSISTENCY,
    ConsistencyModel,
    WeightError,
    assemble_weights,
    build_fdm_operator,
    consistency_bound,
    consistency_error,
    delta2_i,
    delta_cross_pm,
    delta_pm_i,
    scheme_apply,
    stencil_apply,
    stencil_offsets,
)
from hjbobstacle.grid import Grid, GridFunction, eval_on_grid
from hjbobstacle.model import ModelError
from hjbobstacle.presets import get_preset, preset_names

from helpers import make_spec

TWO_PI = 2 * np.pi


def grid1(h=0.1, policy="clamp", lo=0.0, hi=1.0):
    return Grid.uniform((lo,), (hi,), h, policy)


class TestDifferences:
    def test_second_difference_exact_on_quadratics(self):
        g = grid1(0.125)
        u = eval_on_grid(parse_expression("x1^2"), g)
        for i in range(1, 8):
            assert delta2_i(u, (i,), 0) == pytest.approx(2.0, abs=1e-12)

    def test_one_sided(self):
        g = grid1(0.125)
        const = eval_on_grid(4.0, g)
        lin = eval_on_grid(parse_expression("x1"), g)
        for i in range(1, 8):
            assert delta_pm_i(const, (i,), 0, +1) == 0.0
            assert delta_pm_i(lin, (i,), 0, +1) == pytest.approx(1.0, abs=1e-12)
            assert delta_pm_i(lin, (i,), 0, -1) == pytest.approx(1.0, abs=1e-12)

    def test_mixed_differences_on_bilinear(self):
        g = Grid.uniform((0.0, 0.0), (1.0, 1.0), 0.125, "clamp")
        u = eval_on_grid(parse_expression("x1*x2"), g)
        # both diagonal splits recover the mixed derivative +1 (hand-evaluated stencils)
        for node in [(3, 4), (1, 1), (6, 2)]:
            assert delta_cross_pm(u, node, 0, 1, +1) == pytest.approx(1.0, abs=1e-12)
            assert delta_cross_pm(u, node, 0, 1, -1) == pytest.approx(1.0, abs=1e-12)


class TestWeights:
    def test_offsets(self):
        assert len(stencil_offsets(1)) == 3
        assert len(stencil_offsets(2)) == 9
        assert len(stencil_offsets(3)) == 1 + 6 + 12

    def test_unit_diffusion_1d(self):
        spec = make_spec(1, [dict(a=[[1.0]], b=[0.0], c=1.0)])
        e = assemble_weights(spec, grid1(0.1, "periodic"), (3,), 0)
        assert e.weights[(0,)] == 0.0
        assert e.weights[(1,)] == 0.5 and e.weights[(-1,)] == 0.5

    def test_upwind_drift_1d(self):
        spec = make_spec(1, [dict(a=[[0.5]], b=[1.0], c=1.0)])
        e = assemble_weights(spec, grid1(0.1, "periodic"), (2,), 0)
        assert e.weights[(0,)] == pytest.approx(0.4, abs=1e-15)
        assert e.weights[(1,)] == pytest.approx(0.35, abs=1e-15)
        assert e.weights[(-1,)] == pytest.approx(0.25, abs=1e-15)
        assert e.row_sum() == pytest.approx(1.0, abs=1e-15)

    def test_cross_diffusion_2d(self):
        spec = make_spec(2, [dict(a=[[0.5, 0.25], [0.25, 0.5]], c=1.0)])
        g = Grid.uniform((0.0, 0.0), (1.0, 1.0), 0.125)
        w = assemble_weights(spec, g, (2, 3), 0).weights
        assert w[(0, 0)] == pytest.approx(0.25)
        for off in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1)]:
            assert w[off] == pytest.approx(0.125)
        assert (1, -1) not in w and (-1, 1) not in w
        assert sum(w.values()) == pytest.approx(1.0, abs=1e-15)

    def test_negative_centre_weight_reported(self):
        spec = make_spec(2, [dict(a=[[1.0, 0.9], [0.9, 1.0]], c=1.0)])
        g = Grid.uniform((0.0, 0.0), (1.0, 1.0), 0.25)
        with pytest.raises(WeightError) as exc:
            assemble_weights(spec, g, (1, 1), 0)
        assert exc.value.offset == (0, 0) and exc.value.value < 0

    def test_h_at_most_one(self):
        spec = make_spec(1, [dict(c=1.0)], box=(0.0, 4.0))
        with pytest.raises(ModelError):
            assemble_weights(spec, Grid.uniform((0.0,), (4.0,), 2.0), (0,), 0)

    def test_x_dependent_diffusion_rejected(self):
        spec = make_spec(1, [dict(sigma=[["0.5*x1"]], c=1.0)])
        with pytest.raises(ModelError):
            assemble_weights(spec, grid1(0.25, "periodic"), (0,), 0)

    def test_memoised(self):
        spec = get_preset("smooth-obstacle-1d")
        g = grid1(1 / 16, "periodic")
        assert assemble_weights(spec, g, (3,), 1) is assemble_weights(spec, g, (3,), 1)

    @pytest.mark.parametrize("name", preset_names())
    def test_assembled_matrix_matches_entries(self, name):
        spec = get_preset(name)
        h = 1 / 16 if spec.dim == 1 else 1 / 8
        g = Grid.uniform(spec.lo, spec.hi, h, spec.policy)
        op = build_fdm_operator(spec, g)
        P = (op.Q * h * h).tocsr()
        n = op.n
        node = tuple(s // 2 for s in g.unknown_shape)
        flat = int(np.ravel_multi_index(node, g.unknown_shape))
        for k in range(op.K):
            e = assemble_weights(spec, g, node, k)
            row = P.getrow(k * n + flat).toarray().ravel()
            assert row.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(row >= 0) and np.all(row <= 1)
            expected = np.zeros(n)
            for off, p in e.weights.items():
                j = np.ravel_multi_index(g.wrap_index([a + b for a, b in zip(node, off)]), g.unknown_shape)
                expected[j] += p
            np.testing.assert_allclose(row, expected, atol=1e-14)


class TestSchemeApply:
    def test_zero_diffusion_fixed_point(self):
        spec = make_spec(1, [dict(c=1.0, f=2.0)])
        g = grid1(0.25, "periodic")
        vals = np.random.default_rng(0).normal(size=4)
        vals[1] = 2.0
        u = GridFunction.from_unknowns(g, vals)
        assert scheme_apply(spec, g, u, (1,), 2.0) == 0.0

    def test_candidate_value_enters_through_centre(self):
        # the bracket holds p(x,x) u(x) and subtracts r: off the diagonal r = u(x)
        # the weight form exceeds the stencil form by (r - u(x)) / h^2
        spec = get_preset("smooth-obstacle-1d")
        g = grid1(1 / 16, "periodic")
        u = eval_on_grid(lambda x: np.cos(TWO_PI * x), g)
        node = (5,)
        ux = u.values[5]
        for r in (-1.0, 0.3, 2.5):
            # S is affine in r for r-independent f, so the identity is exact
            lhs = scheme_apply(spec, g, u, node, r) - stencil_apply(spec, g, u, node, ux)
            rhs = scheme_apply(spec, g, u, node, r) - scheme_apply(spec, g, u, node, ux)
            assert lhs == pytest.approx(rhs, abs=1e-9)

    def test_constants_are_harmonic(self):
        spec = get_preset("isaacs-1d")
        g = grid1(1 / 16, "periodic")
        u = eval_on_grid(0.7, g)
        x = g.axis_coords(0)[5]
        expected_k = [c.c_at(np.array([[x]]))[0] * 0.7 - c.f_at(np.array([[x]]), 0.7)[0] for c in spec.coefficients]
        na, nb = spec.control_axes
        expected = min(max(expected_k[a * nb + b] for b in range(nb)) for a in range(na))
        assert scheme_apply(spec, g, u, (5,), 0.7) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("name", ["smooth-obstacle-1d", "degenerate-obstacle-1d", "cross-derivative-2d", "isaacs-1d"])
    def test_weight_form_equals_stencil_form(self, name):
        spec = get_preset(name)
        h = 1 / 32 if spec.dim == 1 else 1 / 8
        g = Grid.uniform(spec.lo, spec.hi, h, spec.policy)
        rng = np.random.default_rng(5)
        u = eval_on_grid(lambda *x: np.sin(TWO_PI * x[0]) * np.cos(TWO_PI * x[-1]) + 0.3 * x[0], g)
        nodes = [tuple(int(v) for v in rng.integers(0, s - 1, spec.dim)) for s in [g.nodes[0]] * 6]
        for node in nodes:
            r = u[node]
            assert abs(scheme_apply(spec, g, u, node, r) - stencil_apply(spec, g, u, node, r)) <= 1e-12

    def test_operator_matches_pointwise_evaluator(self):
        spec = get_preset("cross-derivative-2d")
        g = Grid.uniform(spec.lo, spec.hi, 1 / 8, spec.policy)
        op = build_fdm_operator(spec, g)
        u = np.random.default_rng(2).normal(size=op.n)
        U = op.to_grid_function(u)
        S = op.scheme(u)
        for flat in (0, 9, 37, 63):
            node = np.unravel_index(flat, g.unknown_shape)
            assert S[flat] == pytest.approx(scheme_apply(spec, g, U, node, u[flat]), abs=1e-9)


def _quadratic(b):
    spec = make_spec(1, [dict(a=[[0.5]], b=[b], c=1.0, f="x1")], policy="clamp")
    phi = lambda x: x**2
    grad = lambda x: 2 * x
    hess = lambda x: np.full_like(x, 2.0)
    return spec, phi, grad, hess


class TestConsistency:
    def test_gamma(self):
        assert FDM_CONSISTENCY.gamma == 0.5
        assert ConsistencyModel({2: 1}, {2: 1.0}).gamma == 0.5
        assert ConsistencyModel({2: 1, 3: 3}, {2: 0.0, 3: 1.0}).gamma == 1.0
        with pytest.raises(ValueError):
            ConsistencyModel({2: 0}, {2: 1.0})

    def test_quadratic_without_drift_exact(self):
        spec, phi, grad, hess = _quadratic(0.0)
        err, bound = consistency_error(spec, grid1(1 / 16), phi, grad, hess, {2: 2.0, 4: 0.0})
        assert err <= 1e-10

    @pytest.mark.parametrize("h", [1 / 8, 1 / 16, 1 / 32])
    def test_quadratic_with_drift_first_order(self, h):
        b = 0.4
        spec, phi, grad, hess = _quadratic(b)
        err, bound = consistency_error(spec, grid1(h), phi, grad, hess, {2: 2.0, 4: 0.0})
        # one-sided difference of a quadratic: error h |b| |phi''| / 2
        assert err == pytest.approx(h * b * 2.0 / 2, rel=1e-8)
        assert err <= b * 2.0 * h
        assert err <= bound + 1e-12

    def test_sine_halving(self):
        spec = get_preset("smooth-obstacle-1d")
        w = TWO_PI
        phi = lambda x: np.sin(w * x)
        grad = lambda x: w * np.cos(w * x)
        hess = lambda x: -w * w * np.sin(w * x)
        norms = {2: w**2, 4: w**4}
        errs = []
        for h in (1 / 64, 1 / 128, 1 / 256):
            e, bound = consistency_error(spec, Grid.uniform(spec.lo, spec.hi, h), phi, grad, hess, norms)
            assert e <= bound
            errs.append(e)
        for a, b in zip(errs, errs[1:]):
            assert 2 * 0.8 <= a / b <= 2 * 1.2

    def test_bound_formula(self):
        spec = make_spec(2, [dict(a=[[0.5, 0.25], [0.25, 0.5]], b=[0.1, -0.2], c=1.0)])
        got = consistency_bound(spec, 0.1, {2: 3.0, 4: 5.0})
        assert got == pytest.approx(0.1 * 0.5 * 0.3 * 3.0 + 0.01 * (1.0 / 24 + 0.75 * 0.25) * 5.0)

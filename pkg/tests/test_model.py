import math

import numpy as np
import pytest

from hjbobstacle.model import (
    CoefficientSet,
    ControlCoefficients,
    ControlGrid,
    LipschitzConstants,
    ModelError,
    Obstacle,
    ProblemSpec,
    Regularity,
    SamplingPlan,
    Sense,
    derive_lambda0,
    validate_assumptions,
)
from hjbobstacle.expression import parse_expression
from hjbobstacle.presets import get_preset, preset_names

from helpers import make_spec


class TestControlGrid:
    def test_counts(self):
        g = ControlGrid(2, second_axis=ControlGrid(3))
        assert g.total == 6 and g.inner == 3

    def test_rejects_empty(self):
        with pytest.raises(ModelError):
            ControlGrid(0)


class TestCoefficients:
    def test_sigma_from_a(self):
        c = ControlCoefficients.build(2, a=[[0.5, 0.25], [0.25, 0.5]])
        S = c.sigma_at(np.zeros((2, 1)))[0]
        np.testing.assert_allclose(S @ S.T, [[0.5, 0.25], [0.25, 0.5]], atol=1e-15)

    def test_a_from_sigma(self):
        c = ControlCoefficients.build(1, sigma=[["sin(x1)"]])
        x = np.array([[0.3]])
        assert c.a_at(x)[0, 0, 0] == pytest.approx(math.sin(0.3) ** 2)

    def test_rejects_indefinite_a(self):
        with pytest.raises(ModelError):
            ControlCoefficients.build(1, a=[[-1.0]])

    def test_rejects_r_in_c(self):
        with pytest.raises(ModelError):
            ControlCoefficients.build(1, c="r")

    def test_lambda_must_be_positive(self):
        with pytest.raises(ModelError):
            CoefficientSet((ControlCoefficients.build(1, c=1.0),), 0.0, 1.0)

    def test_infsup_needs_second_axis(self):
        with pytest.raises(ModelError):
            make_spec(1, [dict(c=1.0)] * 2, sense=Sense.INFSUP)

    def test_control_axes(self):
        sup = make_spec(1, [dict(c=1.0)] * 2)
        assert sup.control_axes == (1, 2)
        isaacs = make_spec(1, [dict(c=1.0)] * 6, sense=Sense.INFSUP,
                           cgrid=ControlGrid(2, second_axis=ControlGrid(3)))
        assert isaacs.control_axes == (2, 3)


class TestValidate:
    def test_one_dimensional_unit_diffusion(self):
        rep = validate_assumptions(make_spec(1, [dict(a=[[1.0]], b=[0.0], c=1.0)]))
        assert rep["diagonal-dominance"].holds and rep["normalization"].holds
        assert rep["weights"].holds

    def test_strong_cross_term(self):
        # a11 - |a12| = 0.1 per row: sum 0.2 <= 1, yet the centre weight is 1 - 2*(1 - 0.45) < 0
        rep = validate_assumptions(make_spec(2, [dict(a=[[1.0, 0.9], [0.9, 1.0]], c=1.0)]))
        assert rep["diagonal-dominance"].holds and rep["normalization"].holds
        assert rep["weights"].status == "violated"
        assert rep["weights"].witness["value"] == pytest.approx(-0.1)

    def test_a6_violation_witness(self):
        rep = validate_assumptions(make_spec(1, [dict(a=[[1.0]], b=["0.5*x1"], c=1.0,
                                                      lipschitz=LipschitzConstants(b=0.5))]))
        assert rep["normalization"].status == "violated"
        assert rep["normalization"].witness["value"] > 1.0

    def test_cubic_source_breaks_monotonicity_near_origin(self):
        # z(x, r) = c r - f(x, r) = r^3 has slope 3 r^2 -> 0 at the origin
        rep = validate_assumptions(make_spec(1, [dict(c=0.0, f="-r^3")], lam=0.1))
        a2 = rep["source-monotonicity"]
        assert a2.status == "violated"
        assert abs(a2.witness["r"]) < 0.35 and abs(a2.witness["s"]) < 0.35
        assert a2.witness["quotient"] < 0.1

    def test_declared_lipschitz_checked(self):
        rep = validate_assumptions(make_spec(1, [dict(c=1.0, f="sin(10*x1)", lipschitz=LipschitzConstants(f=1.0))]))
        assert rep["coefficient-regularity"].status == "violated"
        assert rep["coefficient-regularity"].witness["quotient"] > 1.0

    def test_nonpositive_lambda0_flagged(self):
        spec = make_spec(1, [dict(c=0.1, b=["sin(x1)"], lipschitz=LipschitzConstants(b=1.0))], lam=0.1)
        assert validate_assumptions(spec)["positive-discount"].status == "violated"

    def test_x_dependent_a_flags_a4(self):
        spec = make_spec(1, [dict(sigma=[["0.5*x1"]], c=1.0, lipschitz=LipschitzConstants(sigma=0.5))])
        assert validate_assumptions(spec)["constant-diffusion"].status == "violated"

    def test_obstacle_seminorm_checked(self):
        ob = Obstacle(parse_expression("sin(2*pi*x1)"), Regularity.LIPSCHITZ, 1.0)
        rep = validate_assumptions(make_spec(1, [dict(c=1.0)], obstacle=ob))
        assert rep["obstacle-regularity"].status == "violated"

    def test_semiconvex_curvature_checked(self):
        ob = Obstacle(parse_expression("-x1^2"), Regularity.SEMICONVEX_LIPSCHITZ, 2.0, d2_minus_bound=1.0)
        rep = validate_assumptions(make_spec(1, [dict(c=1.0)], obstacle=ob))
        assert rep["obstacle-regularity"].status == "violated"

    def test_deterministic_given_seed(self):
        spec = get_preset("isaacs-1d")
        a = validate_assumptions(spec, SamplingPlan(seed=3)).to_dict()
        b = validate_assumptions(spec, SamplingPlan(seed=3)).to_dict()
        assert a == b

    @pytest.mark.parametrize("name", preset_names())
    def test_presets_satisfy_assumptions(self, name):
        rep = validate_assumptions(get_preset(name), SamplingPlan(n_random=1000, seed=0))
        assert rep.violated() == []
        for key in ("coefficient-regularity", "source-monotonicity", "constant-diffusion", "diagonal-dominance", "normalization", "positive-discount"):
            assert rep[key].holds, key


class TestLambda0:
    def test_zero_drift(self):
        spec = make_spec(1, [dict(c=1.0)])
        assert derive_lambda0(spec) == 1.0

    def test_fdm_four_dimensions(self):
        spec = make_spec(4, [dict(c=3.0, b=[0.0] * 4, lipschitz=LipschitzConstants(b=0.5))])
        assert derive_lambda0(spec, "fdm") == pytest.approx(3 - 2 * 2 * 0.5)

    def test_continuous_constants(self):
        spec = make_spec(1, [dict(a=[[0.3]], b=[0.2], c=2.0)])
        assert derive_lambda0(spec, "continuous") == 2.0

    def test_weakest_control_governs(self):
        spec = make_spec(1, [dict(c=1.0), dict(c=3.0, lipschitz=LipschitzConstants(b=0.25))])
        assert derive_lambda0(spec) == pytest.approx(1.0)
        assert derive_lambda0(spec, "continuous") == pytest.approx(1.0)
        spec = make_spec(1, [dict(c=4.0), dict(c=3.0, lipschitz=LipschitzConstants(b=0.5))])
        assert derive_lambda0(spec) == pytest.approx(2.0)
        assert derive_lambda0(spec, "continuous") == pytest.approx(2.5)


@pytest.mark.parametrize("name", preset_names())
def test_preset_monotonicity_quotients(name):
    spec = get_preset(name)
    rng = np.random.default_rng(1)
    X = rng.random((spec.dim, 1000))
    r, s = np.sort(rng.uniform(-1, 1, (2, 1000)), axis=0)[::-1]
    lam, Lam = spec.coefficients.lambda_lo, spec.coefficients.Lambda_hi
    for coef in spec.coefficients:
        q = (coef.z_at(X, r) - coef.z_at(X, s)) / (r - s)
        assert np.all(q >= lam - 1e-9) and np.all(q <= Lam + 1e-9)


def test_unknown_preset():
    with pytest.raises(ModelError):
        get_preset("nope")

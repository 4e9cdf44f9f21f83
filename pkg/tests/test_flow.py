import numpy as np
import pytest

from slopeflow.flow import FlowConfig, flow_descent_identity, integrate_min_norm_flow
from slopeflow.func_model import eval_expr, parse_expr
from slopeflow.geometry import curve_length
from slopeflow.subdiff import limiting_slope

FIG = parse_expr("max(x1+x2, abs(x1-x2)) + x1*(x1+1) + x2*(x2+1) + 100", 2)
QUAD = parse_expr("x1^2 + x2^2", 2)
ABS1D = parse_expr("abs(x1)", 1)


class TestIntegration:
    def test_quad_gradient_flow(self):
        res = integrate_min_norm_flow(FlowConfig(QUAD, np.array([1.0, 0.0])))
        assert res.stop_reason == "slope"
        assert abs(res.curve.points[-1][0]) <= 1e-5
        # x(t) = e^{-2t}: value at t=0.5 close to the exact decay
        assert res.curve.at(0.5)[0] == pytest.approx(np.exp(-1.0), abs=1e-3)

    def test_abs_unit_speed_to_kink(self):
        res = integrate_min_norm_flow(FlowConfig(ABS1D, np.array([1.0])))
        assert res.stop_reason == "slope"
        assert curve_length(res.curve) == pytest.approx(1.0, abs=1e-6)
        assert abs(res.curve.points[-1][0]) <= 1e-8

    def test_fig_converges_to_minimizer(self):
        res = integrate_min_norm_flow(FlowConfig(FIG, np.zeros(2)))
        assert res.stop_reason == "slope"
        np.testing.assert_allclose(res.curve.points[-1], [-0.5, -0.5], atol=1e-4)

    def test_fig_diagonal_sliding(self):
        # once the trajectory reaches the abs kink it slides along x1 = x2
        res = integrate_min_norm_flow(FlowConfig(FIG, np.array([1.0, -1.5])))
        tail = res.curve.points[-10:]
        np.testing.assert_allclose(tail[:, 0], tail[:, 1], atol=1e-9)
        assert res.events >= 1

    def test_monotone_values(self):
        res = integrate_min_norm_flow(FlowConfig(FIG, np.array([1.0, 1.0])))
        vals = [eval_expr(FIG, p) for p in res.curve.points]
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))

    def test_critical_start_constant(self):
        res = integrate_min_norm_flow(FlowConfig(FIG, np.array([-0.5, -0.5])))
        assert np.all(res.curve.points == res.curve.points[0])
        assert res.stop_reason == "slope"

    def test_time_budget_stop(self):
        f = parse_expr("-x1 + min(x2, 0)", 2)
        res = integrate_min_norm_flow(FlowConfig(f, np.zeros(2), T=1.0))
        assert res.stop_reason == "time"
        assert res.curve.knots[-1] == pytest.approx(1.0)

    def test_determinism(self):
        a = integrate_min_norm_flow(FlowConfig(FIG, np.array([1.0, 1.0])))
        b = integrate_min_norm_flow(FlowConfig(FIG, np.array([1.0, 1.0])))
        np.testing.assert_array_equal(a.curve.points, b.curve.points)
        np.testing.assert_array_equal(a.curve.knots, b.curve.knots)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FlowConfig(QUAD, np.zeros(2), h=0.0)


class TestDescentIdentity:
    def test_flow_satisfies_identity(self):
        res = integrate_min_norm_flow(FlowConfig(FIG, np.array([1.0, -1.5]), h=5e-3))
        rep = flow_descent_identity(FIG, res.curve, tol=1e-2)
        assert rep.verdict == "pass"
        assert rep.excluded_fraction <= 0.05

    def test_endpoint_slope_small(self):
        res = integrate_min_norm_flow(FlowConfig(FIG, np.zeros(2)))
        assert limiting_slope(FIG, res.curve.points[-1]).value <= 1e-4

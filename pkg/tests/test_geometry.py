import numpy as np
import pytest

from slopeflow.func_model import parse_expr
from slopeflow.geometry import (
    SampledCurve,
    SlopeFloorError,
    arclength_reparam,
    curve_length,
    metric_derivative,
    read_curve_csv,
    slope_time_inverse,
    slope_time_reparam,
    write_curve_csv,
)

QUAD = parse_expr("x1^2 + x2^2", 2)


def _vcurve():
    knots = np.array([0.0, 1.0, 2.0])
    points = np.array([[2.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    return SampledCurve(knots, points, "value")


class TestValidation:
    def test_rejects_decreasing_knots(self):
        with pytest.raises(ValueError):
            SampledCurve(np.array([0.0, 0.0]), np.zeros((2, 1)), "value")

    def test_rejects_unknown_tag(self):
        with pytest.raises(ValueError):
            SampledCurve(np.array([0.0, 1.0]), np.zeros((2, 1)), "banana")

    def test_rejects_non_lipschitz_arclength(self):
        with pytest.raises(ValueError):
            SampledCurve(
                np.array([0.0, 1.0]), np.array([[0.0], [2.0]]), "arclength"
            )

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            SampledCurve(np.array([0.0, 1.0]), np.array([[0.0], [np.inf]]), "value")

    def test_interpolation(self):
        c = _vcurve()
        np.testing.assert_allclose(c.at(0.5), [1.5, 0.0])
        np.testing.assert_allclose(c.at(1.5), [1.0, 0.5])


class TestMetric:
    def test_metric_derivative_per_segment(self):
        c = _vcurve()
        assert metric_derivative(c, 0.25) == pytest.approx(1.0)
        assert metric_derivative(c, 1.75) == pytest.approx(1.0)

    def test_length(self):
        assert curve_length(_vcurve()) == pytest.approx(2.0)

    def test_arclength_unit_speed(self):
        arc = arclength_reparam(_vcurve())
        speeds = np.linalg.norm(np.diff(arc.points, axis=0), axis=1) / np.diff(arc.knots)
        np.testing.assert_allclose(speeds, 1.0, atol=1e-12)

    def test_arclength_collapses_zero_segments(self):
        c = SampledCurve(
            np.array([0.0, 1.0, 2.0]),
            np.array([[0.0], [0.0], [1.0]]),
            "value",
        )
        arc = arclength_reparam(c)
        assert len(arc.knots) == 2

    def test_arclength_rejects_constant_curve(self):
        c = SampledCurve(np.array([0.0, 1.0]), np.zeros((2, 2)), "value")
        with pytest.raises(ValueError):
            arclength_reparam(c)


class TestSlopeTime:
    def _arc(self):
        # straight descent of x1^2+x2^2 along the x1 axis from 2 to 1
        knots = np.linspace(0.0, 1.0, 11)
        points = np.column_stack([2.0 - knots, np.zeros(11)])
        return SampledCurve(knots, points, "arclength")

    def test_reparam_monotone(self):
        st = slope_time_reparam(self._arc(), QUAD)
        assert st.tag == "slope_time"
        assert np.all(np.diff(st.knots) > 0)

    def test_roundtrip_exact(self):
        arc = self._arc()
        st = slope_time_reparam(arc, QUAD)
        back = slope_time_inverse(st, QUAD)
        np.testing.assert_allclose(back.knots, arc.knots, rtol=1e-12, atol=0)
        np.testing.assert_array_equal(back.points, arc.points)

    def test_slope_time_speed_matches_slope(self):
        # condition (b): the reparametrized speed equals the slope 2|x|
        st = slope_time_reparam(self._arc(), QUAD)
        for i in range(len(st.knots) - 1):
            mid = 0.5 * (st.points[i] + st.points[i + 1])
            speed = np.linalg.norm(st.points[i + 1] - st.points[i]) / (
                st.knots[i + 1] - st.knots[i]
            )
            assert speed == pytest.approx(2.0 * np.abs(mid[0]), rel=5e-3)

    def test_slope_floor_error(self):
        knots = np.array([0.0, 1.0])
        points = np.array([[1.0, 0.0], [0.0, 0.0]])  # ends at the minimizer
        c = SampledCurve(knots, points, "arclength")
        with pytest.raises(SlopeFloorError) as ei:
            slope_time_reparam(c, QUAD, slope_floor=1e-8)
        assert ei.value.knot_index == 1

    def test_inverse_requires_slope_time(self):
        with pytest.raises(ValueError):
            slope_time_inverse(self._arc(), QUAD)


class TestCsv:
    def test_roundtrip(self, tmp_path):
        c = self_arc = SampledCurve(
            np.linspace(0.0, 1.0, 5),
            np.column_stack([np.linspace(2, 1, 5), np.zeros(5)]),
            "arclength",
        )
        path = tmp_path / "c.csv"
        write_curve_csv(path, c, QUAD)
        back = read_curve_csv(path, tag="arclength")
        np.testing.assert_array_equal(back.knots, c.knots)
        np.testing.assert_array_equal(back.points, c.points)

    def test_header(self, tmp_path):
        c = SampledCurve(
            np.array([0.0, 1.0]), np.array([[2.0, 0.0], [1.0, 0.0]]), "value"
        )
        path = tmp_path / "c.csv"
        write_curve_csv(path, c, QUAD)
        header = path.read_text().splitlines()[0]
        assert header == "t,x1,x2,f,limiting_slope,speed"

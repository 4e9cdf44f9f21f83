"""Sampled curves: metric derivative, length, and reparametrizations.

Curves are piecewise linear between knots, which makes the metric
derivative exact per segment and keeps every reparametrization a pure knot
transformation (points never move).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .func_model import FuncExpr, eval_expr
from .subdiff import limiting_slope

VALID_TAGS = ("value", "arclength", "slope_time", "flow_time")


class SlopeFloorError(ValueError):
    """Slope fell below the reciprocal-integrand floor along the curve."""

    def __init__(self, knot_index: int, value: float, floor: float):
        super().__init__(
            f"limiting slope {value:.3e} at knot {knot_index} is below the "
            f"floor {floor:.3e}"
        )
        self.knot_index = knot_index


@dataclass(frozen=True)
class SampledCurve:
    knots: np.ndarray  # (m+1,), strictly increasing
    points: np.ndarray  # (m+1, n)
    tag: str

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        points = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "points", points)
        if self.tag not in VALID_TAGS:
            raise ValueError(f"unknown parametrization tag {self.tag!r}")
        if knots.ndim != 1 or points.ndim != 2 or len(knots) != len(points):
            raise ValueError("knots and points must align")
        if len(knots) < 2:
            raise ValueError("a curve needs at least two knots")
        if not np.all(np.diff(knots) > 0):
            raise ValueError("knots must be strictly increasing")
        if not (np.all(np.isfinite(knots)) and np.all(np.isfinite(points))):
            raise ValueError("non-finite curve data")
        if self.tag == "arclength":
            chords = np.linalg.norm(np.diff(points, axis=0), axis=1)
            if np.any(chords > np.diff(knots) * (1.0 + 1e-9)):
                raise ValueError("arclength curve is not 1-Lipschitz")

    @property
    def n(self) -> int:
        return self.points.shape[1]

    def at(self, t: float) -> np.ndarray:
        """Piecewise-linear interpolation at parameter t."""
        return np.array(
            [np.interp(t, self.knots, self.points[:, j]) for j in range(self.n)]
        )

    def segment_index(self, t: float) -> int:
        if t < self.knots[0] or t > self.knots[-1]:
            raise ValueError("parameter outside curve domain")
        i = int(np.searchsorted(self.knots, t, side="right") - 1)
        return min(i, len(self.knots) - 2)


def metric_derivative(c: SampledCurve, t: float) -> float:
    """Chord speed of the segment containing t (right-sided at knots)."""
    i = c.segment_index(t)
    dt = c.knots[i + 1] - c.knots[i]
    return float(np.linalg.norm(c.points[i + 1] - c.points[i]) / dt)


def curve_length(c: SampledCurve) -> float:
    return float(np.sum(np.linalg.norm(np.diff(c.points, axis=0), axis=1)))


def arclength_reparam(c: SampledCurve) -> SampledCurve:
    """Reparametrize by cumulative chord length; zero-length segments are
    collapsed so that every surviving segment has unit speed."""
    chords = np.linalg.norm(np.diff(c.points, axis=0), axis=1)
    if chords.sum() == 0.0:
        raise ValueError("cannot arclength-parametrize a zero-length curve")
    keep = chords > 0.0
    points = np.vstack([c.points[0], c.points[1:][keep]])
    knots = np.concatenate([[0.0], np.cumsum(chords[keep])])
    return SampledCurve(knots, points, "arclength")


def _reciprocal_slope_weights(c: SampledCurve, f: FuncExpr, slope_floor: float):
    inv = np.empty(len(c.knots))
    for i, p in enumerate(c.points):
        s = limiting_slope(f, p).value
        if s <= slope_floor:
            raise SlopeFloorError(i, s, slope_floor)
        inv[i] = 1.0 / s
    return inv


def slope_time_reparam(
    c: SampledCurve, f: FuncExpr, slope_floor: float = 1e-8
) -> SampledCurve:
    """New knots = trapezoidal integral of 1/limiting-slope along the curve.

    Against f, the output approximates a curve of near-maximal slope at
    segment midpoints.  Refuses (with the offending knot index) if the
    slope drops below slope_floor anywhere on the curve.
    """
    inv = _reciprocal_slope_weights(c, f, slope_floor)
    dt = np.diff(c.knots)
    ds = dt * (inv[:-1] + inv[1:]) / 2.0
    knots = c.knots[0] + np.concatenate([[0.0], np.cumsum(ds)])
    return SampledCurve(knots, c.points, "slope_time")


def slope_time_inverse(
    c: SampledCurve,
    f: FuncExpr,
    slope_floor: float = 1e-8,
    tag: str = "arclength",
) -> SampledCurve:
    """Exact inverse of slope_time_reparam: divides each knot gap by the
    same trapezoidal reciprocal-slope weight (points are unchanged, so the
    per-knot slopes are identical)."""
    if c.tag != "slope_time":
        raise ValueError("expected a slope_time curve")
    inv = _reciprocal_slope_weights(c, f, slope_floor)
    ds = np.diff(c.knots)
    dt = ds / ((inv[:-1] + inv[1:]) / 2.0)
    knots = np.concatenate([[0.0], np.cumsum(dt)])
    return SampledCurve(knots, c.points, tag)


# ---------------------------------------------------------------------------
# curve CSV interchange: header t,x1,...,xn,f,limiting_slope,speed

def write_curve_csv(path, c: SampledCurve, f: FuncExpr) -> None:
    n = c.n
    speeds = np.linalg.norm(np.diff(c.points, axis=0), axis=1) / np.diff(c.knots)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{j + 1}" for j in range(n)] + ["f", "limiting_slope", "speed"])
        for i, (t, p) in enumerate(zip(c.knots, c.points)):
            speed = speeds[min(i, len(speeds) - 1)]
            row = [repr(float(t))]
            row += [repr(float(v)) for v in p]
            row.append(repr(float(eval_expr(f, p))))
            row.append(repr(limiting_slope(f, p).value))
            row.append(repr(float(speed)))
            w.writerow(row)


def read_curve_csv(path, tag: str = "arclength") -> SampledCurve:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    n = sum(1 for name in header if name.startswith("x") and name[1:].isdigit())
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return SampledCurve(data[:, 0], data[:, 1 : 1 + n], tag)

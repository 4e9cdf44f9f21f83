"""Explicit-Euler integration of the subgradient system x' ∈ -∂f(x) with
minimal-norm selection and event bisection at activity boundaries.

The velocity at each accepted state is the minimum-norm element of the
limiting subdifferential; when a step would activate new smooth pieces,
the crossing is bisected so the state lands on the boundary, where the
min-norm selection produces the sliding velocity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .func_model import FuncExpr, active_pieces, active_signature, eval_expr
from .geometry import SampledCurve
from .subdiff import clarke_subdiff, limiting_subdiff, min_norm_point
from .verify import VerifyReport, make_report
from .subdiff import limiting_slope


@dataclass(frozen=True)
class FlowConfig:
    f: FuncExpr
    x0: np.ndarray
    h: float = 1e-2
    T: float = 10.0
    stop_tol: float = 1e-5  # stop once the min-norm subgradient is this small
    event_depth: int = 50
    act_tol: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        if self.h <= 0 or self.T <= 0:
            raise ValueError("h and T must be positive")


@dataclass(frozen=True)
class FlowResult:
    curve: SampledCurve  # flow_time parametrized
    stop_reason: str  # slope | time | step_floor
    events: int
    clarke_discrepancies: int  # states where min-norm limiting and Clarke differ


def _is_subsig(a: frozenset, b: frozenset) -> bool:
    return a.issubset(b)


SNAP_BAND = 1e-6  # relative width of the tie-snapping band around a face


def _snap_to_ties(f: FuncExpr, x: np.ndarray, act_tol: float) -> np.ndarray:
    """Gauss-Newton projection onto a nearly-active tie set.

    Sliding along a face is stable only while the state stays within the
    subdifferential's activity tolerance of the tie; tangency error in the
    min-norm velocity drifts it out.  When extra pieces are active within
    the snap band but not within act_tol, pull the selection values back
    together to machine precision."""
    band_pieces = active_pieces(f, x, SNAP_BAND)
    if len(band_pieces) < 2:
        return x
    y = x.copy()
    for _ in range(3):
        vals = np.array([p.value(y) for p in band_pieces])
        scale = 1.0 + float(np.max(np.abs(vals)))
        if float(np.ptp(vals)) <= 1e-13 * scale:
            break
        grads = np.array([p.gradient(y) for p in band_pieces])
        r = vals - vals.mean()
        J = grads - grads.mean(axis=0)
        delta, *_ = np.linalg.lstsq(J, r, rcond=None)
        y = y - delta
    return y


def integrate_min_norm_flow(cfg: FlowConfig) -> FlowResult:
    f = cfg.f
    x = _snap_to_ties(f, cfg.x0.copy(), cfg.act_tol)
    t = 0.0
    knots = [0.0]
    points = [x.copy()]
    events = 0
    discrepancies = 0
    stop_reason = "time"
    sig = active_signature(f, x, cfg.act_tol)
    while t < cfg.T - 1e-15:
        S = limiting_subdiff(f, x, cfg.act_tol)
        v = min_norm_point(S)
        nv = float(np.linalg.norm(v))
        vc = min_norm_point(clarke_subdiff(f, x, cfg.act_tol))
        if abs(float(np.linalg.norm(vc)) - nv) > 1e-9 * (1.0 + nv):
            discrepancies += 1
        if nv <= cfg.stop_tol:
            stop_reason = "slope"
            break
        h = min(cfg.h, cfg.T - t)
        # midpoint velocity: second-order accurate, so the chord speed tracks
        # the slope at the segment midpoint; fall back to the Euler velocity
        # when the half step changes the active signature
        xm = x - 0.5 * h * v
        if active_signature(f, xm, cfg.act_tol) == sig:
            vm = min_norm_point(limiting_subdiff(f, xm, cfg.act_tol))
            if np.linalg.norm(vm) > cfg.stop_tol:
                v = vm
        fx = eval_expr(f, x)
        # monotonicity guard: reject value-increasing steps, halving to a floor
        halvings = 0
        while eval_expr(f, x - h * v) > fx and halvings < cfg.event_depth:
            h /= 2.0
            halvings += 1
        xn = x - h * v
        if eval_expr(f, xn) > fx:
            stop_reason = "step_floor"
            break
        if not np.all(np.isfinite(xn)):
            raise FloatingPointError("non-finite state during flow integration")
        sig_n = active_signature(f, xn, cfg.act_tol)
        if not _is_subsig(sig_n, sig):
            # new pieces activated mid-step: bisect the crossing time
            events += 1
            lo, hi = 0.0, 1.0
            for _ in range(cfg.event_depth):
                mid = 0.5 * (lo + hi)
                if _is_subsig(active_signature(f, x - mid * h * v, cfg.act_tol), sig):
                    lo = mid
                else:
                    hi = mid
            if hi * h > 1e-12 * cfg.h:
                h = hi * h
                xn = x - h * v
            # else the boundary sits at x itself within tolerance: keep the
            # full step so the state crosses instead of stalling
            sig_n = active_signature(f, xn, cfg.act_tol)
        if h <= 0.0 or t + h == t:
            stop_reason = "step_floor"
            break
        snapped = _snap_to_ties(f, xn, cfg.act_tol)
        if eval_expr(f, snapped) <= fx + 1e-12 * (1.0 + abs(fx)):
            xn = snapped
            sig_n = active_signature(f, xn, cfg.act_tol)
        x, t, sig = xn, t + h, sig_n
        knots.append(t)
        points.append(x.copy())
    if len(knots) < 2:
        # constant trajectory at a (near) critical start
        knots = [0.0, cfg.h]
        points = [x.copy(), x.copy()]
    curve = SampledCurve(np.array(knots), np.vstack(points), "flow_time")
    return FlowResult(curve, stop_reason, events, discrepancies)


def flow_descent_identity(f: FuncExpr, curve: SampledCurve, tol: float) -> VerifyReport:
    """Midpoint checks of the near-maximal-slope identities along a flow
    trajectory: (f∘x)' <= -slope^2 + tol and speed = slope within tol.
    Segments adjacent to an active-set change are excluded."""
    knots, pts = curve.knots, curve.points
    sigs = [active_signature(f, p, 1e-6) for p in pts]
    residuals = []
    excluded = 0
    total = len(knots) - 1
    for i in range(total):
        if sigs[i] != sigs[i + 1] or (i > 0 and sigs[i - 1] != sigs[i]) or (
            i + 2 < len(sigs) and sigs[i + 1] != sigs[i + 2]
        ):
            excluded += 1
            continue
        dt = knots[i + 1] - knots[i]
        mid = 0.5 * (pts[i] + pts[i + 1])
        slope = limiting_slope(f, mid).value
        fd = (eval_expr(f, pts[i + 1]) - eval_expr(f, pts[i])) / dt
        speed = float(np.linalg.norm(pts[i + 1] - pts[i]) / dt)
        res = max(fd + slope * slope, abs(speed - slope))
        residuals.append(res)
    return make_report("flow_descent_identity", residuals, excluded, total, tol)

"""Quantitative property checkers for descent curves and flows.

"Almost every t" statements are surrogated by midpoint sampling with
explicit exclusion of activity-boundary neighborhoods (two knot gaps wide)
and a pass-fraction threshold; exclusions are always reported.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .func_model import FuncExpr, active_signature, eval_expr
from .geometry import SampledCurve, curve_length
from .subdiff import clarke_subdiff, limiting_slope, limiting_subdiff, sampled_slope

PASS_THRESHOLD = 0.99


@dataclass(frozen=True)
class VerifyReport:
    property: str
    samples: int
    pass_fraction: float
    worst_residual: float
    excluded_fraction: float
    verdict: str  # pass | fail | vacuous

    def to_dict(self) -> dict:
        return {
            "property": self.property,
            "samples": self.samples,
            "pass_fraction": self.pass_fraction,
            "worst_residual": self.worst_residual,
            "excluded_fraction": self.excluded_fraction,
            "verdict": self.verdict,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def make_report(
    name: str,
    residuals: list[float],
    excluded: int,
    total: int,
    tol: float,
    threshold: float = PASS_THRESHOLD,
) -> VerifyReport:
    """Aggregate per-sample residuals (pass means residual <= tol)."""
    if not residuals:
        return VerifyReport(name, 0, 1.0, 0.0, excluded / max(total, 1), "vacuous")
    passed = sum(1 for r in residuals if r <= tol)
    frac = passed / len(residuals)
    return VerifyReport(
        property=name,
        samples=len(residuals),
        pass_fraction=frac,
        worst_residual=float(max(residuals)),
        excluded_fraction=excluded / max(total, 1),
        verdict="pass" if frac >= threshold else "fail",
    )


EXCLUSION_ACT_TOL = 1e-6  # loose: avoids signature flicker while sliding


def _excluded_mask(f: FuncExpr, c: SampledCurve) -> np.ndarray:
    """Segments within two knot gaps of an active-set change."""
    sigs = [active_signature(f, p, EXCLUSION_ACT_TOL) for p in c.points]
    m = len(c.knots) - 1
    changed = np.array([sigs[i] != sigs[i + 1] for i in range(m)])
    mask = changed.copy()
    for i in np.where(changed)[0]:
        for j in (i - 2, i - 1, i + 1, i + 2):
            if 0 <= j < m:
                mask[j] = True
    return mask


def _midpoint_samples(c: SampledCurve):
    for i in range(len(c.knots) - 1):
        dt = c.knots[i + 1] - c.knots[i]
        yield i, 0.5 * (c.points[i] + c.points[i + 1]), dt


def _check_descent_pre(f: FuncExpr, c: SampledCurve):
    if c.tag != "arclength":
        raise ValueError("descent checks expect an arclength-parametrized curve")
    vals = [eval_expr(f, p) for p in c.points]
    if any(b > a + 1e-9 * (1 + abs(a)) for a, b in zip(vals, vals[1:])):
        raise ValueError("f along the curve is not nonincreasing at knots")


def check_near_steepest(f: FuncExpr, c: SampledCurve, tol: float) -> VerifyReport:
    """|(f∘γ)'| >= limiting slope - tol at segment midpoints."""
    _check_descent_pre(f, c)
    mask = _excluded_mask(f, c)
    residuals = []
    for i, mid, dt in _midpoint_samples(c):
        if mask[i]:
            continue
        fd = abs(eval_expr(f, c.points[i + 1]) - eval_expr(f, c.points[i])) / dt
        residuals.append(limiting_slope(f, mid).value - fd)
    return make_report("near_steepest", residuals, int(mask.sum()), len(mask), tol)


def check_steepest(
    f: FuncExpr, c: SampledCurve, tol: float, seed: int = 0
) -> VerifyReport:
    """The strong variant: |(f∘γ)'| >= sampled slope - tol."""
    _check_descent_pre(f, c)
    mask = _excluded_mask(f, c)
    residuals = []
    for i, mid, dt in _midpoint_samples(c):
        if mask[i]:
            continue
        fd = abs(eval_expr(f, c.points[i + 1]) - eval_expr(f, c.points[i])) / dt
        residuals.append(sampled_slope(f, mid, seed=seed) - fd)
    return make_report("steepest", residuals, int(mask.sum()), len(mask), tol)


def check_near_max_slope(f: FuncExpr, c: SampledCurve, tol: float) -> VerifyReport:
    """Speed = limiting slope and (f∘γ)' <= -slope^2, at midpoints."""
    mask = _excluded_mask(f, c)
    residuals = []
    for i, mid, dt in _midpoint_samples(c):
        if mask[i]:
            continue
        slope = limiting_slope(f, mid).value
        speed = float(np.linalg.norm(c.points[i + 1] - c.points[i]) / dt)
        fd = (eval_expr(f, c.points[i + 1]) - eval_expr(f, c.points[i])) / dt
        residuals.append(max(abs(speed - slope), fd + slope * slope))
    return make_report("near_max_slope", residuals, int(mask.sum()), len(mask), tol)


def check_chain_rule(
    f: FuncExpr, c: SampledCurve, tol: float, spread_tol: float = 1e-6
) -> VerifyReport:
    """⟨g, γ'⟩ is constant over the Clarke generators and equals the
    finite-difference derivative, away from active-set changes."""
    mask = _excluded_mask(f, c)
    residuals = []
    for i, mid, dt in _midpoint_samples(c):
        if mask[i]:
            continue
        vel = (c.points[i + 1] - c.points[i]) / dt
        gens = clarke_subdiff(f, mid).all_generators()
        ips = gens @ vel
        spread = float(ips.max() - ips.min())
        fd = (eval_expr(f, c.points[i + 1]) - eval_expr(f, c.points[i])) / dt
        # both conditions normalized against their own tolerances so a single
        # residual <= 1 encodes "spread ok and finite difference matches"
        residuals.append(
            max(spread / spread_tol, abs(fd - float(ips.mean())) / tol)
        )
    return make_report("chain_rule", residuals, int(mask.sum()), len(mask), 1.0)


def check_sublevel_normal(
    f: FuncExpr, x, y, tol: float = 1e-3
) -> VerifyReport:
    """The projection residual x - y lies (within angular tolerance) in the
    conical hull of the limiting subdifferential at y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    u = x - y
    nu = float(np.linalg.norm(u))
    sl = limiting_slope(f, y).value
    if nu <= 1e-14 or sl <= tol:
        return VerifyReport("sublevel_normal", 0, 1.0, 0.0, 0.0, "vacuous")
    u_hat = u / nu
    best = np.inf
    for P in limiting_subdiff(f, y).polytopes:
        _, res = nnls(np.asarray(P, dtype=float).T, u_hat)
        best = min(best, float(res))
    verdict = "pass" if best <= tol else "fail"
    return VerifyReport("sublevel_normal", 1, 1.0 if verdict == "pass" else 0.0, best, 0.0, verdict)


@dataclass(frozen=True)
class KLRunRecord:
    start: np.ndarray
    length: float
    endpoint: np.ndarray
    endpoint_slope: float
    stop_reason: str


@dataclass(frozen=True)
class KLLengthReport:
    runs: tuple[KLRunRecord, ...]
    max_length: float  # empirical bound on curve lengths in the region
    all_terminated: bool
    all_critical: bool
    inconclusive: bool

    def to_dict(self) -> dict:
        return {
            "runs": [
                {
                    "start": list(map(float, r.start)),
                    "length": r.length,
                    "endpoint": list(map(float, r.endpoint)),
                    "endpoint_slope": r.endpoint_slope,
                    "stop_reason": r.stop_reason,
                }
                for r in self.runs
            ],
            "max_length": self.max_length,
            "all_terminated": self.all_terminated,
            "all_critical": self.all_critical,
            "inconclusive": self.inconclusive,
        }


def kl_length_report(
    f: FuncExpr, region, starts, cfg=None, critical_tol: float = 1e-4
) -> KLLengthReport:
    """Integrate min-norm flows from every start until the stop slope and
    report the empirical finite-length / convergence evidence."""
    from .flow import FlowConfig, integrate_min_norm_flow

    records = []
    for s in starts:
        c = cfg if cfg is not None else FlowConfig(f, np.asarray(s, dtype=float))
        if not np.array_equal(np.asarray(c.x0), np.asarray(s, dtype=float)):
            from dataclasses import replace

            c = replace(c, x0=np.asarray(s, dtype=float))
        res = integrate_min_norm_flow(c)
        end = res.curve.points[-1]
        records.append(
            KLRunRecord(
                start=np.asarray(s, dtype=float),
                length=curve_length(res.curve),
                endpoint=end,
                endpoint_slope=limiting_slope(f, end).value,
                stop_reason=res.stop_reason,
            )
        )
    terminated = all(r.stop_reason == "slope" for r in records)
    return KLLengthReport(
        runs=tuple(records),
        max_length=max(r.length for r in records),
        all_terminated=terminated,
        all_critical=all(r.endpoint_slope <= critical_tol for r in records),
        inconclusive=not terminated,
    )


def compare_curves(c1: SampledCurve, c2: SampledCurve) -> float:
    """Sup distance between curves aligned by normalized arclength fraction."""
    def fractions(c):
        chords = np.linalg.norm(np.diff(c.points, axis=0), axis=1)
        L = chords.sum()
        if L == 0.0:
            return np.array([0.0, 1.0]), np.vstack([c.points[0], c.points[0]])
        return np.concatenate([[0.0], np.cumsum(chords)]) / L, c.points

    u1, p1 = fractions(c1)
    u2, p2 = fractions(c2)
    grid = np.union1d(u1, u2)
    sup = 0.0
    for u in grid:
        a = np.array([np.interp(u, u1, p1[:, j]) for j in range(p1.shape[1])])
        b = np.array([np.interp(u, u2, p2[:, j]) for j in range(p2.shape[1])])
        sup = max(sup, float(np.linalg.norm(a - b)))
    return sup

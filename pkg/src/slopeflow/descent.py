"""Sublevel-set projection polylines and their refinement to a limit curve,
plus Ekeland points and error-bound certificates.

The construction discretizes the range of f: with a value budget eta split
into k equal parts, each step projects the current iterate onto the next
sublevel set [f <= f(x0) - tau_{i+1}].  The resulting polyline is
parametrized by value decrease; refining k yields a Cauchy sequence of
curves whose limit is a near-steepest descent curve after arclength
reparametrization.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .func_model import FuncExpr, eval_expr
from .geometry import SampledCurve
from .subdiff import (
    clarke_subdiff,
    is_lower_critical,
    limiting_slope,
    limiting_subdiff,
    min_norm_point,
    sampled_slope,
    wolfe_min_norm,
)


class ProjectionError(RuntimeError):
    """No feasible point found; carries the best infeasible value seen."""

    def __init__(self, message: str, best_value: float = np.nan):
        super().__init__(message)
        self.best_value = best_value


class EkelandError(RuntimeError):
    pass


@dataclass(frozen=True)
class DescentRun:
    """Configuration for one polyline construction.

    slope_floor and search_radius play the roles of the slope lower bound
    and the search ball radius in the error-bound lemma; the applicability
    condition eta < slope_floor * search_radius is checked up front.
    """

    f: FuncExpr
    x0: np.ndarray
    eta: float
    k: int = 64
    feasibility_tol: float = 1e-8
    dist_tol: float = 1e-6
    restarts: int = 3
    search_radius: float = 20.0
    slope_floor: float = 0.05
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.feasibility_tol <= 0 or self.dist_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not self.eta < self.slope_floor * self.search_radius:
            raise ValueError(
                "eta must be below slope_floor * search_radius "
                "(error-bound applicability condition)"
            )


@dataclass(frozen=True)
class StepRecord:
    tau: float
    point: np.ndarray
    value: float
    r_hat: float
    lipschitz_bound: float  # (tau gap) / max(r_hat, slope_floor)
    chord: float


@dataclass(frozen=True)
class DescentResult:
    curve: SampledCurve  # value-parametrized
    steps: tuple[StepRecord, ...]
    failed_at: int | None = None  # step index of a propagated projection failure


@dataclass(frozen=True)
class ConvergenceReport:
    k_values: tuple[int, ...]
    sup_distances: tuple[float, ...]
    converged: bool
    status: str  # converged | not_converged | diverging


@dataclass(frozen=True)
class ErrorBoundCertificate:
    x: np.ndarray
    alpha: float
    r_est: float
    d_measured: float
    bound: float
    holds: bool


# ---------------------------------------------------------------------------
# sublevel-set projection

def _penalty(f, x, alpha, mu, y):
    gap = eval_expr(f, y) - alpha
    return float(np.dot(y - x, y - x) + mu * max(gap, 0.0))


def _penalty_direction(f, x, alpha, mu, y):
    """Minimum-norm element of the penalty objective's Clarke subdifferential."""
    smooth = 2.0 * (y - x)
    if eval_expr(f, y) > alpha:
        gens = clarke_subdiff(f, y).all_generators()
        return wolfe_min_norm(smooth + mu * gens)
    return smooth


def _minimize_penalty(f, x, alpha, mu, y0, max_iter=150):
    y = y0.copy()
    val = _penalty(f, x, alpha, mu, y)
    t = 1.0 / (2.0 + mu)
    for _ in range(max_iter):
        v = _penalty_direction(f, x, alpha, mu, y)
        nv = np.linalg.norm(v)
        if nv <= 1e-12 * (1.0 + mu):
            break
        step = min(4.0 * t, 1.0)
        improved = False
        while step > 1e-16:
            cand = y - step * v
            cval = _penalty(f, x, alpha, mu, cand)
            if cval <= val - 1e-4 * step * nv * nv:
                y, val, t, improved = cand, cval, step, True
                break
            step /= 2.0
        if not improved:
            break
    return y


def _bisect_to_level(f, lo, hi, alpha, feasibility_tol):
    """Bisect on the segment [lo, hi] with f(lo) > alpha >= f(hi) toward the
    boundary point f = alpha; returns the feasible end of the bracket."""
    for _ in range(80):
        if eval_expr(f, hi) >= alpha - feasibility_tol:
            break
        mid = 0.5 * (lo + hi)
        if eval_expr(f, mid) <= alpha:
            hi = mid
        else:
            lo = mid
        if np.linalg.norm(hi - lo) <= 1e-15 * (1.0 + np.linalg.norm(hi)):
            break
    return hi


def _restore_feasibility(f, y, alpha, feasibility_tol, max_iter=30):
    """Newton steps on the value along the min-norm subgradient direction
    until f(y) <= alpha; returns None when the slope degenerates."""
    for _ in range(max_iter):
        gap = eval_expr(f, y) - alpha
        if gap <= 0.0:
            return y
        sl = limiting_slope(f, y)
        if sl.value <= 1e-12:
            return None
        y = y - (1.0 + 1e-12) * gap / sl.value**2 * sl.witness
    return y if eval_expr(f, y) <= alpha + feasibility_tol else None


def _tangential_polish(f, x, y, alpha, run, max_iter=60):
    """Reduce ||y - x|| along the level boundary: step against the component
    of y - x tangential to the active min-norm subgradient, restore
    feasibility, and keep strict distance decreases."""
    best = y
    best_d = float(np.linalg.norm(y - x))
    t = 1.0
    for _ in range(max_iter):
        sl = limiting_slope(f, best)
        if sl.value <= 1e-12:
            break
        g_hat = sl.witness / sl.value
        r = best - x
        w = r - float(r @ g_hat) * g_hat
        nw = float(np.linalg.norm(w))
        if nw <= run.dist_tol * 0.1:
            break
        improved = False
        while t > 1e-12:
            cand = _restore_feasibility(f, best - t * w, alpha, run.feasibility_tol)
            if cand is not None:
                cand = _bisect_to_level(f, x.copy(), cand, alpha, run.feasibility_tol)
                d = float(np.linalg.norm(cand - x))
                if d < best_d - 1e-16:
                    best, best_d, improved = cand, d, True
                    t = min(2.0 * t, 1.0)
                    break
            t /= 2.0
        if not improved:
            break
    return best


def project_sublevel(f: FuncExpr, x, alpha: float, run: DescentRun) -> np.ndarray:
    """Near-closest point of the sublevel set [f <= alpha] to x.

    Multi-start penalty descents on ||y - x||^2 + mu (f(y) - alpha)+ with a
    geometric mu schedule, polished by bisection along the segment back to
    x.  Feasibility (not global distance optimality) is certified; the best
    feasible candidate by (distance, restart index) wins.  Deterministic
    given run.seed.
    """
    x = np.asarray(x, dtype=float)
    fx = eval_expr(f, x)
    if fx <= alpha:
        return x.copy()
    best = None
    best_dist = np.inf
    best_infeasible = np.inf
    scale = (fx - alpha) / run.slope_floor
    for j in range(run.restarts):
        rng = np.random.default_rng([run.seed, j])
        if j == 0:
            y = x.copy()
        else:
            y = x + 0.5 * min(scale, run.search_radius) * rng.standard_normal(len(x))
        mu = 1.0
        feasible = False
        while mu <= 1e14:
            y = _minimize_penalty(f, x, alpha, mu, y)
            if eval_expr(f, y) <= alpha + run.feasibility_tol:
                feasible = True
                break
            mu *= 10.0
        if not feasible:
            best_infeasible = min(best_infeasible, eval_expr(f, y))
            continue
        if eval_expr(f, y) <= alpha:
            y = _bisect_to_level(f, x.copy(), y, alpha, run.feasibility_tol)
        d = float(np.linalg.norm(y - x))
        if d <= run.search_radius and d < best_dist:
            best, best_dist = y, d
    if best is None:
        raise ProjectionError(
            f"no feasible point for level {alpha} within search radius "
            f"(best value reached: {best_infeasible})",
            best_value=best_infeasible,
        )
    return _tangential_polish(f, x, best, alpha, run)


# ---------------------------------------------------------------------------
# polyline construction and refinement

def _slab_inf_slope(f, a, b, alpha_lo, value_hi, seed):
    """Sampled inf of the limiting slope over the step's slab
    {alpha_lo < f <= value_hi} near the segment [a, b]."""
    rng = np.random.default_rng(seed)
    candidates = [a, b, 0.5 * (a + b)]
    radius = max(np.linalg.norm(b - a), 1e-8)
    for _ in range(3):
        candidates.append(0.5 * (a + b) + 0.25 * radius * rng.standard_normal(len(a)))
    best = np.inf
    for p in candidates:
        v = eval_expr(f, p)
        if alpha_lo < v <= value_hi + 1e-12 * (1 + abs(value_hi)):
            best = min(best, limiting_slope(f, p).value)
    if not np.isfinite(best):
        best = limiting_slope(f, 0.5 * (a + b)).value
    return best


def build_descent_polyline(run: DescentRun) -> DescentResult:
    """Iterated sublevel projection: knot tau_i carries the point whose value
    is f(x0) - tau_i.  Lower-critical starts yield the constant curve."""
    f = run.f
    x0 = run.x0
    f0 = eval_expr(f, x0)
    if is_lower_critical(f, x0, tol=1e-8):
        knots = np.array([0.0, run.eta])
        points = np.vstack([x0, x0])
        return DescentResult(SampledCurve(knots, points, "value"), ())
    taus = np.linspace(0.0, run.eta, run.k + 1)
    points = [x0]
    steps = []
    failed_at = None
    for i in range(run.k):
        xi = points[-1]
        alpha = f0 - taus[i + 1]
        try:
            xn = project_sublevel(f, xi, alpha, run)
        except ProjectionError:
            failed_at = i
            break
        r_hat = _slab_inf_slope(f, xi, xn, alpha, eval_expr(f, xi), [run.seed, 7, i])
        gap = taus[i + 1] - taus[i]
        steps.append(
            StepRecord(
                tau=float(taus[i + 1]),
                point=xn,
                value=float(eval_expr(f, xn)),
                r_hat=float(r_hat),
                lipschitz_bound=float(gap / max(r_hat, run.slope_floor)),
                chord=float(np.linalg.norm(xn - xi)),
            )
        )
        points.append(xn)
    m = len(points) - 1
    if m == 0:
        knots = np.array([0.0, run.eta])
        pts = np.vstack([x0, x0])
        return DescentResult(SampledCurve(knots, pts, "value"), (), failed_at=0)
    curve = SampledCurve(taus[: m + 1], np.vstack(points), "value")
    return DescentResult(curve, tuple(steps), failed_at=failed_at)


def _sup_distance_on_knots(coarse: SampledCurve, fine: SampledCurve) -> float:
    """Sup distance evaluated at the finer knot set by linear interpolation."""
    sup = 0.0
    for t, p in zip(fine.knots, fine.points):
        t_clip = min(max(t, coarse.knots[0]), coarse.knots[-1])
        sup = max(sup, float(np.linalg.norm(coarse.at(t_clip) - p)))
    return sup


def refine_until_cauchy(
    run: DescentRun,
    k_schedule=(64, 128, 256, 512, 1024),
    sup_tol: float = 1e-2,
) -> tuple[DescentResult, ConvergenceReport]:
    """Build polylines over an increasing k schedule, reusing the seed so
    projection branch choices are stable, and report the sup distances
    between consecutive curves.  More than three consecutive increases is
    reported as diverging (multivalued-projection branch switching)."""
    if list(k_schedule) != sorted(set(k_schedule)):
        raise ValueError("k_schedule must be increasing")
    prev = None
    result = None
    dists = []
    increases = 0
    status = "not_converged"
    for k in k_schedule:
        result = build_descent_polyline(dataclasses.replace(run, k=k))
        if prev is not None:
            d = _sup_distance_on_knots(prev.curve, result.curve)
            if dists and d > dists[-1]:
                increases += 1
                if increases > 3:
                    status = "diverging"
                    dists.append(d)
                    break
            else:
                increases = 0
            dists.append(d)
        prev = result
    if status != "diverging":
        converged = bool(dists) and dists[-1] <= sup_tol
        status = "converged" if converged else "not_converged"
    report = ConvergenceReport(
        k_values=tuple(k_schedule[: len(dists) + 1]),
        sup_distances=tuple(dists),
        converged=status == "converged",
        status=status,
    )
    return result, report


# ---------------------------------------------------------------------------
# Ekeland points

def ekeland_point(
    f: FuncExpr,
    x,
    eps: float,
    rho: float,
    budget: int = 200,
    box_halfwidth: float = 5.0,
    tol: float = 1e-6,
    seed: int = 0,
) -> np.ndarray:
    """A point u with f(u) <= f(x), ||u - x|| <= eps/rho, and u a local
    minimizer of f + rho||.-u|| (certified via limiting slope <= rho + tol).

    Iterates the classical argument: while the perturbed minimality fails,
    move along the min-norm subgradient with value decrease at rate > rho.
    """
    if eps <= 0 or rho <= 0:
        raise ValueError("eps and rho must be positive")
    x = np.asarray(x, dtype=float)
    n = len(x)
    rng = np.random.default_rng(seed)
    # crude multi-start estimate of inf f over the search box
    samples = rng.uniform(-box_halfwidth, box_halfwidth, size=(512, n))
    inf_est = min(eval_expr(f, p) for p in samples)
    fx = eval_expr(f, x)
    if fx > inf_est + eps + 1e-9 * (1 + abs(inf_est)):
        raise ValueError("x is not an eps-near-minimizer over the search box")
    u = x.copy()
    for _ in range(budget):
        sl = limiting_slope(f, u)
        if sl.value <= rho + tol:
            break
        d = -sl.witness / sl.value
        # descend at rate above rho: f(u + t d) <= f(u) - rho * t
        t = eps / rho
        moved = False
        while t > 1e-15:
            cand = u + t * d
            if eval_expr(f, cand) <= eval_expr(f, u) - rho * t:
                u = cand
                moved = True
                break
            t /= 2.0
        if not moved:
            break
    else:
        raise EkelandError("budget exhausted before perturbed minimality held")
    if limiting_slope(f, u).value > rho + 10 * tol:
        raise EkelandError("could not certify perturbed minimality")
    return u


# ---------------------------------------------------------------------------
# error-bound certificates

_SLOPE_TABLE_CACHE: dict = {}


def _slab_slope_table(f: FuncExpr, region_key, grid: int):
    """Grid values and band-activity slope lower estimates, cached per f.

    At each grid point the activity band is wide enough that any crease
    inside the surrounding cell contributes its hull, so the tabulated
    min-norm lower-bounds the slope over the cell, not just at the node.
    """
    key = (f, region_key, grid)
    if key in _SLOPE_TABLE_CACHE:
        return _SLOPE_TABLE_CACHE[key]
    region = np.asarray(region_key, dtype=float)
    n = len(region)
    axes = [np.linspace(lo, hi, grid) for lo, hi in region]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    diag = float(np.linalg.norm((region[:, 1] - region[:, 0]) / (grid - 1)))
    vals = np.array([eval_expr(f, p) for p in mesh])
    slopes = np.empty(len(mesh))
    for i, p in enumerate(mesh):
        tight = limiting_subdiff(f, p, 1e-9)
        gmax = max(
            (float(np.linalg.norm(v)) for P in tight.polytopes for v in P),
            default=0.0,
        )
        delta = max(1e-9, 0.75 * diag * gmax)
        slopes[i] = float(np.linalg.norm(min_norm_point(limiting_subdiff(f, p, delta))))
    _SLOPE_TABLE_CACHE[key] = (mesh, vals, slopes)
    return mesh, vals, slopes


def error_bound_certificate(
    f: FuncExpr,
    x,
    alpha: float,
    region,
    run: DescentRun | None = None,
    grid: int = 9,
    slope_samples: int = 8,
    seed: int = 0,
) -> ErrorBoundCertificate:
    """Quantitative check of d(x, [f <= alpha]) <= (f(x) - alpha) / r.

    r_est is the inf of the sampled slope over a grid of the slab
    {alpha < f <= f(x)} inside the region (prescreened by the cheap
    limiting slope); d_measured comes from the projection solver.
    """
    x = np.asarray(x, dtype=float)
    fx = eval_expr(f, x)
    if not alpha < fx:
        raise ValueError("alpha must be below f(x)")
    region_key = tuple(tuple(map(float, row)) for row in np.asarray(region, dtype=float))
    region = np.asarray(region, dtype=float)
    if run is None:
        span = float(np.max(region[:, 1] - region[:, 0]))
        run = DescentRun(
            f, x, eta=max(fx - alpha, 1e-6), k=1, restarts=2,
            search_radius=max(10.0 * span, 10.0),
            slope_floor=max(fx - alpha, 1e-6) / max(10.0 * span, 10.0) * 2.0,
            seed=seed,
        )
    y = project_sublevel(f, x, alpha, run)
    d_measured = float(np.linalg.norm(y - x))
    # slab slope estimate: the cached band-activity table over the region
    # grid, refined by probes along the projection segment
    mesh, vals, slopes = _slab_slope_table(f, region_key, grid)
    in_slab = (vals > alpha) & (vals <= fx)
    seg = [x + t * (y - x) for t in np.linspace(0.0, 1.0, 33)]
    seg = [p for p in seg if alpha < eval_expr(f, p) <= fx]
    if not np.any(in_slab) and not seg:
        raise ValueError("slab grid is empty")
    seg_vals = [eval_expr(f, p) for p in seg]
    delta = max(1e-9, 0.51 * float(np.max(np.abs(np.diff(seg_vals)), initial=0.0)))
    r_est = float(np.min(slopes[in_slab])) if np.any(in_slab) else np.inf
    for p in seg[:max(slope_samples, len(seg))]:
        r_band = float(np.linalg.norm(min_norm_point(limiting_subdiff(f, p, delta))))
        r_est = min(r_est, r_band, sampled_slope(f, p, radii=(1e-3,), m=16, seed=seed))
    bound = (fx - alpha) / r_est if r_est > 0 else np.inf
    return ErrorBoundCertificate(
        x=x,
        alpha=float(alpha),
        r_est=float(r_est),
        d_measured=d_measured,
        bound=float(bound),
        holds=bool(d_measured <= bound * (1.0 + 1e-6)),
    )

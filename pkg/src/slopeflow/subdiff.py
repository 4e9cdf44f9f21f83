"""Subdifferentials as polytope unions, minimum-norm points, and slopes.

The limiting subdifferential of a max/min composite of polynomials is built
by structural rules: smooth nodes contribute their gradients, an active max
node contributes the convex hull of its active branches, an active min node
contributes the union of its active branches.  The result is a finite union
of polytopes that contains the limiting subdifferential and is contained in
the Clarke subdifferential; it is exact away from nested degenerate min
ties, which are flagged as a possible superset.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .func_model import (
    AffinePre,
    FuncExpr,
    Max,
    Min,
    Poly,
    Scale,
    Sum,
    _eval,
    _poly_eval,
    _poly_grad,
    activity_threshold,
    active_pieces,
    poly_scale,
)

WOLFE_TOL = 1e-10


@dataclass(frozen=True)
class SubdiffSet:
    """A finite union of convex polytopes, each given by its generators."""

    polytopes: tuple[np.ndarray, ...]  # each array of shape (num_generators, n)
    kind: str  # frechet | limiting | clarke
    horizon_trivial: bool = True  # always True: locally Lipschitz class
    superset_flag: bool = False  # >1 simultaneously tied min node

    def all_generators(self) -> np.ndarray:
        return np.vstack(self.polytopes)


@dataclass(frozen=True)
class SlopeValue:
    value: float
    witness: np.ndarray
    kind: str  # slope | limiting_slope


def _dedupe(gens: list[np.ndarray]) -> np.ndarray:
    arr = np.array(gens, dtype=float)
    scale = 1.0 + np.max(np.abs(arr))
    keep = []
    for g in arr:
        if not any(np.max(np.abs(g - h)) <= 1e-14 * scale for h in keep):
            keep.append(g)
    return np.array(keep)


def _flip(e: FuncExpr, c: float) -> FuncExpr:
    """Push a scalar multiple into the tree, swapping max/min when negative."""
    if isinstance(e, Poly):
        return poly_scale(c, e)
    if isinstance(e, Sum):
        return Sum(tuple(_flip(ch, c) for ch in e.children))
    if isinstance(e, Scale):
        return _flip(e.child, c * e.c)
    if isinstance(e, Max):
        kids = tuple(_flip(ch, c) for ch in e.children)
        return Max(kids) if c >= 0 else Min(kids)
    if isinstance(e, Min):
        kids = tuple(_flip(ch, c) for ch in e.children)
        return Min(kids) if c >= 0 else Max(kids)
    if isinstance(e, AffinePre):
        return AffinePre(e.A, e.b, _flip(e.child, c))
    raise TypeError(type(e))


def _rules(e: FuncExpr, x: np.ndarray, act_tol: float, state: dict) -> list[list[np.ndarray]]:
    """Structural limiting-subdifferential rules; returns a union of polytopes
    as lists of generator vectors."""
    if isinstance(e, Poly):
        return [[np.array([_poly_eval(g, x) for g in _poly_grad(e)])]]
    if isinstance(e, Scale):
        return _rules(_flip(e.child, e.c), x, act_tol, state)
    if isinstance(e, AffinePre):
        A = np.asarray(e.A, dtype=float)
        y = A @ x + np.asarray(e.b, dtype=float)
        return [[A.T @ g for g in poly] for poly in _rules(e.child, y, act_tol, state)]
    if isinstance(e, Sum):
        acc: list[list[np.ndarray]] = [[np.zeros(len(x))]]
        for ch in e.children:
            polys = _rules(ch, x, act_tol, state)
            acc = [[gp + gq for gp in P for gq in Q] for P in acc for Q in polys]
        return acc
    if isinstance(e, (Max, Min)):
        vals = [_eval(ch, x) for ch in e.children]
        node_val = max(vals) if isinstance(e, Max) else min(vals)
        thresh = activity_threshold(act_tol, node_val)
        active = [i for i, v in enumerate(vals) if abs(node_val - v) <= thresh]
        branches = [_rules(e.children[i], x, act_tol, state) for i in active]
        if isinstance(e, Max):
            # subdifferentially regular case: one polytope, hull of the branches
            return [[g for polys in branches for P in polys for g in P]]
        if len(active) > 1:
            state["min_ties"] = state.get("min_ties", 0) + 1
        return [P for polys in branches for P in polys]
    raise TypeError(type(e))


def limiting_subdiff(f: FuncExpr, x, act_tol: float = 1e-9) -> SubdiffSet:
    """Union-of-polytopes estimate of the limiting subdifferential at x."""
    x = np.asarray(x, dtype=float)
    state: dict = {}
    polys = _rules(f, x, act_tol, state)
    return SubdiffSet(
        polytopes=tuple(_dedupe(P) for P in polys),
        kind="limiting",
        superset_flag=state.get("min_ties", 0) > 1,
    )


def clarke_subdiff(f: FuncExpr, x, act_tol: float = 1e-9) -> SubdiffSet:
    """Convex hull (generator union) of the limiting polytopes; the horizon
    term is {0} on this function class."""
    lim = limiting_subdiff(f, x, act_tol)
    return SubdiffSet(
        polytopes=(_dedupe(list(lim.all_generators())),),
        kind="clarke",
        superset_flag=lim.superset_flag,
    )


def frechet_subdiff(f: FuncExpr, x, act_tol: float = 1e-9) -> SubdiffSet:
    """Fréchet set on this class: equals the limiting hull away from min
    ties, and is taken empty at min ties (where it can genuinely vanish)."""
    x = np.asarray(x, dtype=float)
    state: dict = {}
    polys = _rules(f, x, act_tol, state)
    if state.get("min_ties", 0) > 0 or len(polys) > 1:
        return SubdiffSet(polytopes=(), kind="frechet")
    return SubdiffSet(polytopes=(_dedupe(polys[0]),), kind="frechet")


# ---------------------------------------------------------------------------
# minimum-norm points

def _affine_weights(G: np.ndarray) -> np.ndarray:
    """Weights of the min-norm point of the affine hull of the rows of G,
    summing to one (least-squares KKT solve; rank deficiency tolerated)."""
    m = len(G)
    M = G @ G.T
    A = np.zeros((m + 1, m + 1))
    A[:m, :m] = M
    A[:m, m] = 1.0
    A[m, :m] = 1.0
    rhs = np.zeros(m + 1)
    rhs[m] = 1.0
    sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
    return sol[:m]


def wolfe_min_norm(generators: np.ndarray, tol: float = WOLFE_TOL) -> np.ndarray:
    """Wolfe's minimum-norm-point algorithm over conv(generators).

    Deterministic: ties broken by lowest generator index.  Terminates on the
    duality-gap criterion <x, g> >= <x, x> - tol for all generators g.
    """
    G = np.asarray(generators, dtype=float)
    if G.ndim == 1:
        G = G[None, :]
    m = len(G)
    max_iter = max(50, 10 * m * m)
    norms2 = np.einsum("ij,ij->i", G, G)
    corral = [int(np.argmin(norms2))]
    lam = np.array([1.0])
    x = G[corral[0]].copy()
    for _ in range(max_iter):
        dots = G @ x
        j = int(np.argmin(dots))
        if dots[j] >= x @ x - tol:
            break
        if j in corral:
            break  # numerical stall; current x already near-optimal
        corral.append(j)
        lam = np.append(lam, 0.0)
        # minor cycle: pull x to the affine minimizer, trimming the corral
        while True:
            lam_aff = _affine_weights(G[corral])
            if np.all(lam_aff > -1e-12):
                lam = np.clip(lam_aff, 0.0, None)
                break
            neg = lam_aff < 0
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(neg, lam / (lam - lam_aff), np.inf)
            theta = min(1.0, float(np.min(ratios)))
            lam = (1.0 - theta) * lam + theta * lam_aff
            keep = lam > 1e-14
            if keep.all():
                # force out the limiting generator to avoid cycling
                keep[int(np.argmin(lam))] = False
            corral = [c for c, k in zip(corral, keep) if k]
            lam = lam[keep]
        lam = lam / lam.sum()
        x = lam @ G[corral]
    return x


def min_norm_point(S: SubdiffSet) -> np.ndarray:
    """Minimum-norm point over a union of polytopes: per-polytope Wolfe
    solves, minimized across the union (first polytope wins ties)."""
    if not S.polytopes:
        raise ValueError("empty subdifferential set")
    best = None
    best_norm = np.inf
    for P in S.polytopes:
        v = wolfe_min_norm(P)
        nv = float(np.linalg.norm(v))
        if nv < best_norm:
            best, best_norm = v, nv
    return best


def min_norm_affine(generators) -> np.ndarray:
    """Minimum-norm point of the affine span of the generators."""
    G = np.asarray(generators, dtype=float)
    if G.ndim == 1:
        G = G[None, :]
    if len(G) == 0:
        raise ValueError("need at least one generator")
    b = G[0]
    if len(G) == 1:
        return b.copy()
    B = (G[1:] - b).T  # columns span the parallel subspace
    t = np.linalg.lstsq(B, -b, rcond=None)[0]
    return b + B @ t


# ---------------------------------------------------------------------------
# slopes

def limiting_slope(f: FuncExpr, x, act_tol: float = 1e-9) -> SlopeValue:
    """dist(0, limiting subdifferential), with the minimizing subgradient."""
    v = min_norm_point(limiting_subdiff(f, x, act_tol))
    return SlopeValue(float(np.linalg.norm(v)), v, "limiting_slope")


def sampled_slope(
    f: FuncExpr,
    x,
    radii=(1e-3, 1e-4),
    m: int = 64,
    seed: int = 0,
) -> float:
    """Monte-Carlo lower estimate of the slope |∇f|(x).

    Maximizes (f(x) - f(y))+ / |x - y| over sampled directions: m random
    unit vectors per radius, the coordinate axes, and the negative active
    piece gradients / min-norm witnesses (which realize the slope on this
    function class up to curvature error).
    """
    if m < 16:
        raise ValueError("need at least 16 directions per radius")
    radii = sorted(radii, reverse=True)
    if not radii or min(radii) <= 0:
        raise ValueError("radii must be positive")
    x = np.asarray(x, dtype=float)
    n = len(x)
    fx = _eval(f, x)
    rng = np.random.default_rng(seed)
    dirs = []
    for p in active_pieces(f, x):
        g = p.gradient(x)
        ng = np.linalg.norm(g)
        if ng > 0:
            dirs.append(-g / ng)
    for S in (limiting_subdiff(f, x), clarke_subdiff(f, x)):
        w = min_norm_point(S)
        nw = np.linalg.norm(w)
        if nw > 0:
            dirs.append(-w / nw)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        dirs.extend([e, -e])
    raw = rng.standard_normal((m, n))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    dirs.extend(raw)
    best = 0.0
    for r in radii:
        for d in dirs:
            fy = _eval(f, x + r * d)
            best = max(best, (fx - fy) / r)
    return best


def is_lower_critical(f: FuncExpr, x, tol: float = 1e-8) -> bool:
    if tol <= 0:
        raise ValueError("tol must be positive")
    return limiting_slope(f, x).value <= tol

"""Experiment configs, the built-in function corpus, and run orchestration.

A run reads a flat INI-style config, executes one mode (descend, flow,
verify, compare, certify), and writes a deterministic manifest JSON, curve
CSVs, verification report JSONs, and a diagnostic SVG into the output
directory.  Exit codes: 0 success, 2 verification failure, 1 execution
error.
"""
from __future__ import annotations

import configparser
import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .descent import (
    DescentRun,
    ProjectionError,
    build_descent_polyline,
    error_bound_certificate,
    refine_until_cauchy,
)
from .flow import FlowConfig, flow_descent_identity, integrate_min_norm_flow
from .func_model import FuncExpr, eval_expr, parse_expr
from .geometry import (
    SampledCurve,
    arclength_reparam,
    curve_length,
    slope_time_reparam,
    write_curve_csv,
)
from .plots import plot_experiment
from .subdiff import limiting_slope
from .verify import (
    check_near_max_slope,
    check_near_steepest,
    check_steepest,
    compare_curves,
)

MODES = ("descend", "flow", "verify", "compare", "certify")


@dataclass(frozen=True)
class CorpusEntry:
    name: str
    text: str
    n: int
    region: tuple[tuple[float, float], ...]
    starts: tuple[tuple[float, ...], ...]

    def expr(self) -> FuncExpr:
        return parse_expr(self.text, self.n)


def _maxaffine_text(seed: int = 7, pieces: int = 5, n: int = 3) -> str:
    rng = np.random.default_rng(seed)
    rows = np.round(rng.uniform(-2.0, 2.0, size=(pieces, n + 1)), 3)
    parts = []
    for row in rows:
        text = ""
        for j in range(n + 1):
            c = float(row[j])
            sign = "-" if c < 0 else "+"
            mag = repr(abs(c))
            term = f"{mag}*x{j + 1}" if j < n else mag
            text += f" {sign} {term}" if text else (f"-{term}" if c < 0 else term)
        parts.append("(" + text + ")")
    return "max(" + ", ".join(parts) + ")"


_CORPUS = (
    CorpusEntry(
        "fig31",
        "max(x1+x2, abs(x1-x2)) + x1*(x1+1) + x2*(x2+1) + 100",
        2,
        ((-2.0, 2.0), (-2.0, 2.0)),
        ((0.0, 0.0), (1.0, 1.0), (-1.5, 0.5), (1.0, -1.5)),
    ),
    CorpusEntry(
        "example_near_vs_steepest",
        "-x1 + min(x2, 0)",
        2,
        ((-2.0, 2.0), (-2.0, 2.0)),
        ((0.0, 0.0), (-1.0, 1.0)),
    ),
    CorpusEntry(
        "abs1d",
        "abs(x1)",
        1,
        ((-2.0, 2.0),),
        ((1.5,), (-1.0,)),
    ),
    CorpusEntry(
        "maxaffine",
        _maxaffine_text(seed=7),
        3,
        ((-2.0, 2.0), (-2.0, 2.0), (-2.0, 2.0)),
        ((1.0, 1.0, 1.0), (-0.5, 1.5, -1.0)),
    ),
    CorpusEntry(
        "quad",
        "x1^2 + x2^2",
        2,
        ((-2.0, 2.0), (-2.0, 2.0)),
        ((1.0, 1.0), (-1.5, 0.5)),
    ),
    CorpusEntry(
        "diamond",
        "max(abs(x1), abs(x2)) + x1^2 + x2^2",
        2,
        ((-2.0, 2.0), (-2.0, 2.0)),
        ((1.0, 0.5), (-1.0, -1.0)),
    ),
)

CORPUS = {e.name: e for e in _CORPUS}


def corpus(name: str) -> CorpusEntry:
    if name not in CORPUS:
        raise KeyError(f"unknown corpus function {name!r}; known: {', '.join(CORPUS)}")
    return CORPUS[name]


def corpus_names() -> list[str]:
    return [e.name for e in _CORPUS]


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class ExperimentConfig:
    function: str  # corpus name, DSL text, or "all"
    mode: str
    seed: int
    out: str
    n: int | None = None  # required for raw DSL text
    start: tuple[float, ...] | None = None
    descent: dict = dataclasses.field(default_factory=dict)
    flow: dict = dataclasses.field(default_factory=dict)
    verify: dict = dataclasses.field(default_factory=dict)
    certify: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def load_config(path: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    with open(path) as fh:
        cp.read_file(fh)
    exp = cp["experiment"]
    return ExperimentConfig(
        function=exp["function"],
        mode=exp["mode"],
        seed=exp.getint("seed"),
        out=exp.get("out", "out"),
        n=exp.getint("n") if "n" in exp else None,
        start=_floats(exp["start"]) if "start" in exp else None,
        descent=dict(cp["descent"]) if "descent" in cp else {},
        flow=dict(cp["flow"]) if "flow" in cp else {},
        verify=dict(cp["verify"]) if "verify" in cp else {},
        certify=dict(cp["certify"]) if "certify" in cp else {},
    )


def _resolve_function(cfg: ExperimentConfig):
    """Returns (expr, n, region, starts, label) for a single-function run."""
    if cfg.function in CORPUS:
        e = CORPUS[cfg.function]
        starts = (cfg.start,) if cfg.start is not None else e.starts
        return e.expr(), e.n, e.region, starts, e.name
    if cfg.n is None:
        raise ValueError("raw DSL text requires the 'n' key in [experiment]")
    expr = parse_expr(cfg.function, cfg.n)
    region = tuple((-2.0, 2.0) for _ in range(cfg.n))
    start = cfg.start if cfg.start is not None else tuple(1.0 for _ in range(cfg.n))
    return expr, cfg.n, region, (start,), "custom"


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _descent_run(f, start, seed, params) -> DescentRun:
    kw = {}
    for key in ("eta", "feasibility_tol", "dist_tol", "search_radius", "slope_floor"):
        if key in params:
            kw[key] = float(params[key])
    for key in ("k", "restarts"):
        if key in params:
            kw[key] = int(params[key])
    kw.setdefault("eta", 0.5)
    return DescentRun(f, np.asarray(start, dtype=float), seed=seed, **kw)


def _flow_config(f, start, seed, params) -> FlowConfig:
    kw = {}
    for key in ("h", "T", "stop_tol", "act_tol"):
        if key in params:
            kw[key] = float(params[key])
    if "event_depth" in params:
        kw["event_depth"] = int(params["event_depth"])
    return FlowConfig(f, np.asarray(start, dtype=float), seed=seed, **kw)


def _k_schedule(params) -> tuple[int, ...]:
    if "k_schedule" in params:
        return tuple(int(v) for v in _floats(params["k_schedule"]))
    return (64, 128, 256, 512, 1024)


def _record_curve(outdir, stem, curve, f) -> str:
    path = os.path.join(outdir, stem + ".csv")
    write_curve_csv(path, curve, f)
    return stem + ".csv"


# ---------------------------------------------------------------------------
# per-mode drivers: each returns (exit_code, manifest fragment, curves to plot)

def _mode_descend(f, n, region, start, seed, cfg, outdir):
    run = _descent_run(f, start, seed, cfg.descent)
    sup_tol = float(cfg.descent.get("sup_tol", 1e-2))
    result, report = refine_until_cauchy(run, _k_schedule(cfg.descent), sup_tol)
    curve = result.curve
    arc = arclength_reparam(curve) if curve_length(curve) > 0 else None
    files = [_record_curve(outdir, "descent_value", curve, f)]
    plot_curves = [(curve, "descent polyline")]
    if arc is not None:
        files.append(_record_curve(outdir, "descent_arclength", arc, f))
    fragment = {
        "function": cfg.function,
        "x0": list(map(float, run.x0)),
        "eta": run.eta,
        "k_schedule": list(_k_schedule(cfg.descent)),
        "tolerances": {
            "feasibility_tol": run.feasibility_tol,
            "dist_tol": run.dist_tol,
            "sup_tol": sup_tol,
        },
        "seed": seed,
        "steps": [
            {
                "tau": s.tau,
                "point": list(map(float, s.point)),
                "f": s.value,
                "segment_lipschitz_cert": s.lipschitz_bound,
            }
            for s in result.steps
        ],
        "convergence": {
            "k_values": list(report.k_values),
            "sup_distances": list(report.sup_distances),
            "converged": report.converged,
            "status": report.status,
        },
        "curves": files,
    }
    code = 0 if report.converged and result.failed_at is None else 2
    return code, fragment, plot_curves


def _mode_flow(f, n, region, start, seed, cfg, outdir):
    fc = _flow_config(f, start, seed, cfg.flow)
    res = integrate_min_norm_flow(fc)
    files = [_record_curve(outdir, "flow", res.curve, f)]
    fragment = {
        "function": cfg.function,
        "x0": list(map(float, fc.x0)),
        "h": fc.h,
        "T": fc.T,
        "seed": seed,
        "events": res.events,
        "stop_reason": res.stop_reason,
        "clarke_discrepancies": res.clarke_discrepancies,
        "length": curve_length(res.curve),
        "endpoint": list(map(float, res.curve.points[-1])),
        "endpoint_slope": limiting_slope(f, res.curve.points[-1]).value,
        "curves": files,
    }
    return 0, fragment, [(res.curve, "min-norm flow")]


def _mode_verify(f, n, region, start, seed, cfg, outdir):
    """Construct a descent curve and certify the defining inequality; the
    strong (sampled-slope) variant is recorded alongside but is evidence,
    not a gate."""
    tol = float(cfg.verify.get("tol", 1e-2))
    run = _descent_run(f, start, seed, cfg.descent)
    result = build_descent_polyline(dataclasses.replace(run, k=int(cfg.descent.get("k", 128))))
    if curve_length(result.curve) == 0.0:
        return 1, {"error": "descent curve has zero length (critical start)"}, []
    arc = arclength_reparam(result.curve)
    near = check_near_steepest(f, arc, tol)
    steep = check_steepest(f, arc, tol, seed=seed)
    _write_json(os.path.join(outdir, "report_near_steepest.json"), near.to_dict())
    _write_json(os.path.join(outdir, "report_steepest.json"), steep.to_dict())
    files = [_record_curve(outdir, "descent_arclength", arc, f)]
    fragment = {
        "function": cfg.function,
        "x0": list(map(float, run.x0)),
        "seed": seed,
        "tol": tol,
        "near_steepest": near.to_dict(),
        "steepest": steep.to_dict(),
        "curves": files,
    }
    return (0 if near.verdict == "pass" else 2), fragment, [(arc, "descent curve")]


def _mode_compare(f, n, region, start, seed, cfg, outdir):
    """Equivalence triangle at one start: slope-time reparametrization of
    the converged polyline vs the min-norm flow trajectory."""
    tol = float(cfg.verify.get("tol", 1e-2))
    max_dist = float(cfg.verify.get("max_distance", 5e-2))
    run = _descent_run(f, start, seed, cfg.descent)
    result, report = refine_until_cauchy(run, _k_schedule(cfg.descent))
    arc = arclength_reparam(result.curve)
    st = slope_time_reparam(arc, f)
    fc = _flow_config(f, start, seed, cfg.flow)
    flow_res = integrate_min_norm_flow(fc)
    # truncate the flow to the polyline's value budget before comparing
    f_end = eval_expr(f, result.curve.points[-1])
    pts, knots = [], []
    for t, p in zip(flow_res.curve.knots, flow_res.curve.points):
        knots.append(t)
        pts.append(p)
        if eval_expr(f, p) <= f_end:
            break
    trunc = (
        SampledCurve(np.array(knots), np.vstack(pts), "flow_time")
        if len(knots) >= 2
        else flow_res.curve
    )
    dist = compare_curves(st, trunc)
    nm_flow = check_near_max_slope(f, trunc, tol)
    nm_st = check_near_max_slope(f, st, tol)
    _write_json(os.path.join(outdir, "report_near_max_slope_flow.json"), nm_flow.to_dict())
    _write_json(os.path.join(outdir, "report_near_max_slope_reparam.json"), nm_st.to_dict())
    files = [
        _record_curve(outdir, "descent_slope_time", st, f),
        _record_curve(outdir, "flow", flow_res.curve, f),
    ]
    fragment = {
        "function": cfg.function,
        "x0": list(map(float, run.x0)),
        "seed": seed,
        "compare_curves": dist,
        "max_distance": max_dist,
        "convergence": {"status": report.status, "sup_distances": list(report.sup_distances)},
        "near_max_slope_flow": nm_flow.to_dict(),
        "near_max_slope_reparam": nm_st.to_dict(),
        "curves": files,
    }
    ok = (
        dist <= max_dist
        and report.converged
        and nm_flow.verdict != "fail"
        and nm_st.verdict != "fail"
    )
    return (0 if ok else 2), fragment, [(st, "reparametrized polyline"), (trunc, "flow")]


def draw_level_pairs(f, region_arr, draws: int, rng) -> list[tuple[np.ndarray, float]]:
    """Seeded (x, alpha) draws with alpha strictly inside the attained value
    range, so the sublevel set is nonempty and the value gap nondegenerate."""
    n = region_arr.shape[0]
    samples = rng.uniform(region_arr[:, 0], region_arr[:, 1], size=(1024, n))
    fmin = min(eval_expr(f, p) for p in samples)
    pairs = []
    attempts = 0
    while len(pairs) < draws and attempts < 20 * draws:
        attempts += 1
        x = rng.uniform(region_arr[:, 0], region_arr[:, 1])
        fx = eval_expr(f, x)
        if fx - fmin < 1e-2:
            continue
        alpha = fx - rng.uniform(0.1, 0.9) * (fx - fmin)
        pairs.append((x, float(alpha)))
    return pairs


def _mode_certify(f, n, region, start, seed, cfg, outdir):
    """Seeded error-bound certificates over the function's region."""
    draws = int(cfg.certify.get("draws", 20))
    rng = np.random.default_rng(seed)
    region_arr = np.asarray(region, dtype=float)
    certs = []
    failures = 0
    for x, alpha in draw_level_pairs(f, region_arr, draws, rng):
        try:
            c = error_bound_certificate(f, x, alpha, region, seed=seed)
        except (ValueError, ProjectionError):
            continue
        certs.append(
            {
                "x": list(map(float, c.x)),
                "alpha": c.alpha,
                "r_est": c.r_est,
                "d_measured": c.d_measured,
                "bound": c.bound,
                "holds": c.holds,
            }
        )
        if not c.holds:
            failures += 1
    fragment = {
        "function": cfg.function,
        "seed": seed,
        "draws": draws,
        "certificates": certs,
        "failures": failures,
    }
    return (0 if failures == 0 and certs else 2), fragment, []


_DRIVERS = {
    "descend": _mode_descend,
    "flow": _mode_flow,
    "verify": _mode_verify,
    "compare": _mode_compare,
    "certify": _mode_certify,
}


# ---------------------------------------------------------------------------
# orchestration

def _run_single(cfg: ExperimentConfig, entry_name: str | None, start, outdir: str):
    """One (function, start) execution; returns (exit code, manifest dict)."""
    os.makedirs(outdir, exist_ok=True)
    sub = dataclasses.replace(cfg, function=entry_name) if entry_name else cfg
    try:
        f, n, region, starts, label = _resolve_function(sub)
        use_start = start if start is not None else starts[0]
        code, fragment, plot_curves = _DRIVERS[cfg.mode](
            f, n, region, use_start, cfg.seed, sub, outdir
        )
        fragment["mode"] = cfg.mode
        fragment["exit_code"] = code
        try:
            plot_experiment(f, n, region, plot_curves, os.path.join(outdir, "plot.svg"))
        except Exception as exc:  # plots are diagnostic, never fatal
            fragment["plot_error"] = str(exc)
        _write_json(os.path.join(outdir, "manifest.json"), fragment)
        return code, fragment
    except Exception as exc:
        fragment = {"mode": cfg.mode, "exit_code": 1, "error": str(exc)}
        _write_json(os.path.join(outdir, "manifest.json"), fragment)
        return 1, fragment


def _batch_task(args):
    cfg, name, start, outdir = args
    code, _ = _run_single(cfg, name, start, outdir)
    return (name, start, code)


def run_batch(cfg: ExperimentConfig, jobs: int = 1) -> int:
    """Run the mode over every (corpus function, start) pair."""
    tasks = []
    for e in _CORPUS:
        for i, s in enumerate(e.starts):
            outdir = os.path.join(cfg.out, f"{e.name}_{i}")
            tasks.append((cfg, e.name, s, outdir))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_batch_task, tasks))
    else:
        results = [_batch_task(t) for t in tasks]
    summary = {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "runs": [
            {"function": name, "start": list(map(float, start)), "exit_code": code}
            for name, start, code in results
        ],
    }
    worst = max((code for _, _, code in results), default=0)
    summary["exit_code"] = worst
    os.makedirs(cfg.out, exist_ok=True)
    _write_json(os.path.join(cfg.out, "manifest.json"), summary)
    return worst


def run_experiment(
    config_path: str,
    jobs: int = 1,
    seed: int | None = None,
    out: str | None = None,
) -> int:
    """Execute the experiment described by the config file; returns the
    process exit code (0 pass, 2 verification failure, 1 execution error)."""
    try:
        cfg = load_config(config_path)
    except Exception as exc:
        print(f"config error: {exc}")
        return 1
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    if out is not None:
        cfg = dataclasses.replace(cfg, out=out)
    elif "SLOPEFLOW_OUT" in os.environ:
        cfg = dataclasses.replace(cfg, out=os.environ["SLOPEFLOW_OUT"])
    os.makedirs(cfg.out, exist_ok=True)
    if cfg.function == "all":
        return run_batch(cfg, jobs=jobs)
    code, fragment = _run_single(cfg, None, cfg.start, cfg.out)
    if "error" in fragment:
        print(f"error: {fragment['error']}")
    return code

"""Command-line entry points."""
from __future__ import annotations

import json
import sys

import click

from .func_model import ParseError, parse_expr
from .geometry import read_curve_csv
from .harness import corpus_names, run_experiment
from .verify import (
    check_chain_rule,
    check_near_max_slope,
    check_near_steepest,
    check_steepest,
)

_PROPERTIES = {
    "near_steepest": (check_near_steepest, "arclength"),
    "steepest": (check_steepest, "arclength"),
    "near_max_slope": (check_near_max_slope, "slope_time"),
    "chain_rule": (check_chain_rule, "flow_time"),
}


@click.group()
def main():
    """Construct and verify descent curves for piecewise-smooth functions."""


@main.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--jobs", type=int, default=1, show_default=True, help="Parallel workers for corpus-wide batches.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Override the output directory.")
def run(config, jobs, seed, out):
    """Execute the experiment described by CONFIG."""
    sys.exit(run_experiment(config, jobs=jobs, seed=seed, out=out))


@main.command()
@click.option("--list", "list_", is_flag=True, help="List built-in corpus functions.")
def corpus(list_):
    """Inspect the built-in function corpus."""
    if list_:
        for name in corpus_names():
            click.echo(name)
    else:
        click.echo("use --list to enumerate the corpus", err=True)
        sys.exit(1)


@main.command()
@click.argument("curve_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--function", "function_text", required=True, help="Function DSL text.")
@click.option("--n", "dim", type=int, required=True, help="Ambient dimension.")
@click.option("--property", "prop", required=True, type=click.Choice(sorted(_PROPERTIES)))
@click.option("--tol", type=float, default=1e-2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def verify(curve_csv, function_text, dim, prop, tol, seed):
    """Check a stored curve against one defining property."""
    try:
        f = parse_expr(function_text, dim)
    except ParseError as exc:
        click.echo(f"parse error at position {exc.pos}: {exc}", err=True)
        sys.exit(1)
    checker, tag = _PROPERTIES[prop]
    try:
        c = read_curve_csv(curve_csv, tag=tag)
        if prop == "steepest":
            report = checker(f, c, tol, seed=seed)
        else:
            report = checker(f, c, tol)
    except Exception as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(json.dumps(report.to_dict(), sort_keys=True))
    sys.exit(0 if report.verdict != "fail" else 2)

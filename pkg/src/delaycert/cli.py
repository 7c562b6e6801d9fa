"""Command-line interface: system-file ingestion, command dispatch, and
report emission.

System definition files are line-oriented: ``key = value`` pairs, ``#``
comments, expression strings in double quotes, and an optional
``[defaults]`` section for solver and simulation knobs::

    dim = 2
    alpha = 1
    f1 = "-2*x1"
    f2 = "-2*x2"
    g1 = "x2"
    g2 = "x1"

    [defaults]
    region_bound = 5
    resolution = 33
    t_end = 50
    dt = 0.01
    conv_tol = 1e-3

Every command prints a human-readable summary and writes the same report
as CSV (full double precision, so reports round-trip exactly).  Exit
status: 0 = success / certified, 1 = a violation was found or no
certificate exists at the searched depth, 2 = usage or file error.
"""

from __future__ import annotations

import sys as _sys
from pathlib import Path

import click
import numpy as np

from . import boxopt, certify, ddesim, sysmodel
from .certify import CertificateNotFound, PreconditionFailed, SolverConfig
from .ddesim import HistoryError, HistorySpec, IntegrationError
from .exprlang import ExprError
from .sysmodel import SystemSpec, SystemSpecError

__all__ = ["SystemFileError", "load_system", "main", "cli"]

_BUILTIN_DEFAULTS = {
    "region_bound": 5.0,
    "resolution": 33,
    "t_end": 50.0,
    "dt": 0.01,
    "conv_tol": 1e-3,
}

_DEFAULT_KEYS = set(_BUILTIN_DEFAULTS)


class SystemFileError(ValueError):
    """Malformed system definition file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


def _parse_system_text(text: str):
    main: dict = {}
    defaults: dict = {}
    current = main
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            if line == "[defaults]":
                current = defaults
                continue
            raise SystemFileError(f"unknown section {line!r}", lineno)
        key, sep, value = line.partition("=")
        if not sep:
            raise SystemFileError("expected 'key = value'", lineno)
        key = key.strip()
        value = value.strip()
        if key in current:
            raise SystemFileError(f"duplicate key {key!r}", lineno)
        current[key] = (value, lineno)
    return main, defaults


def _unquote(value: str, key: str, lineno: int) -> str:
    if len(value) >= 2 and value[0] == '"' and value[-1] == '"':
        return value[1:-1]
    raise SystemFileError(
        f"expression {key} must be a double-quoted string", lineno
    )


def _number(value: str, key: str, lineno: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise SystemFileError(f"{key} must be a number, got {value!r}",
                              lineno) from None


def load_system_file(path) -> tuple:
    """Parse and validate a system file; returns (SystemSpec, defaults)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise SystemFileError(f"cannot read {path}: {err}") from err
    main, raw_defaults = _parse_system_text(text)

    def take(key):
        if key not in main:
            raise SystemFileError(f"missing key: {key}")
        return main.pop(key)

    dim_text, dim_line = take("dim")
    n = int(_number(dim_text, "dim", dim_line))
    if n < 1:
        raise SystemFileError("dim must be >= 1", dim_line)
    alpha_text, alpha_line = take("alpha")
    alpha = _number(alpha_text, "alpha", alpha_line)

    f_sources = []
    g_sources = []
    for name, target in (("f", f_sources), ("g", g_sources)):
        for i in range(1, n + 1):
            value, lineno = take(f"{name}{i}")
            target.append((_unquote(value, f"{name}{i}", lineno), lineno))
    if main:
        key = next(iter(main))
        raise SystemFileError(f"unknown key {key!r}", main[key][1])

    try:
        spec = SystemSpec.from_strings(
            [src for src, _ in f_sources], [src for src, _ in g_sources], alpha
        )
    except ExprError as err:
        raise SystemFileError(f"expression error: {err}") from err
    except SystemSpecError as err:
        raise SystemFileError(str(err)) from err

    defaults = dict(_BUILTIN_DEFAULTS)
    for key, (value, lineno) in raw_defaults.items():
        if key not in _DEFAULT_KEYS:
            raise SystemFileError(f"unknown default {key!r}", lineno)
        number = _number(value, key, lineno)
        defaults[key] = int(number) if key == "resolution" else number
    return spec, defaults


def load_system(path) -> SystemSpec:
    """Parse and validate a system file; defaults are merged and applied by
    the commands."""
    return load_system_file(path)[0]


# ---------------------------------------------------------------------------
# Report helpers
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _vector(values) -> str:
    return ";".join(f"{float(v):.17g}" for v in values)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as stream:
        stream.write(",".join(header) + "\n")
        for row in rows:
            stream.write(",".join(_fmt(v) for v in row) + "\n")


def _parse_vector(text: str, n: int, what: str) -> np.ndarray:
    try:
        values = [float(part) for part in text.split(",")]
    except ValueError:
        raise click.UsageError(f"{what} must be comma-separated numbers") from None
    if len(values) != n:
        raise click.UsageError(f"{what} must have {n} component(s)")
    return np.array(values)


def _parse_history(text: str, n: int) -> HistorySpec:
    if text.startswith("expr:"):
        sources = text[len("expr:"):].split(";")
        if len(sources) != n:
            raise click.UsageError(f"history needs {n} expression(s)")
        try:
            return HistorySpec.from_expressions(sources)
        except ExprError as err:
            raise click.UsageError(f"bad history expression: {err}") from None
    try:
        return HistorySpec.constant(_parse_vector(text, n, "history"))
    except HistoryError as err:
        raise click.UsageError(str(err)) from None


def _load(path):
    try:
        return load_system_file(path)
    except SystemFileError as err:
        click.echo(f"error: {err}", err=True)
        raise SystemExit(2) from None


def _solver_config(resolution, refine) -> SolverConfig:
    return SolverConfig(resolution=resolution, refine=refine)


@click.group()
@click.version_option()
def cli():
    """Stability certification toolkit for positive time-delay systems."""


_system_argument = click.argument(
    "system_file", type=click.Path(exists=True, dir_okay=False)
)


@cli.command()
@_system_argument
@click.option("--alpha", type=float, default=None,
              help="Degree to check (default: the file's declared alpha).")
@click.option("--bound", type=float, default=None, help="Sampling region bound.")
@click.option("--samples", type=int, default=500, show_default=True)
@click.option("--fd-step", type=float, default=1e-5, show_default=True)
@click.option("--lambdas", default="1,1.5,2,4", show_default=True,
              help="Comma-separated scaling factors >= 1.")
@click.option("--report", type=click.Path(), default="hypotheses.csv",
              show_default=True)
def hypotheses(system_file, alpha, bound, samples, fd_step, lambdas, report):
    """Run all structural hypothesis checks and tabulate the verdicts."""
    spec, defaults = _load(system_file)
    bound = bound if bound is not None else defaults["region_bound"]
    alpha = alpha if alpha is not None else spec.alpha
    try:
        lams = [float(part) for part in lambdas.split(",")]
    except ValueError:
        raise click.UsageError("--lambdas must be comma-separated numbers")
    reports = [
        sysmodel.check_p1(spec, bound, samples),
        sysmodel.check_p2(spec, bound, samples),
        sysmodel.check_subhomogeneity(spec, alpha, bound, samples, lams),
        sysmodel.check_cooperative(spec, bound, samples, fd_step),
        sysmodel.check_nondecreasing(spec, bound, samples, fd_step),
    ]
    rows = []
    for rep in reports:
        cex = rep.counterexample
        rows.append((
            rep.hypothesis.value, rep.verdict.value, rep.samples_used,
            cex.field if cex else None,
            cex.component if cex else None,
            _vector(cex.point) if cex else None,
            cex.lam if cex else None,
            cex.wrt if cex else None,
            cex.lhs if cex else None,
            cex.rhs if cex else None,
        ))
    _write_csv(report, ("hypothesis", "verdict", "samples_used", "field",
                        "component", "point", "lambda", "wrt", "lhs", "rhs"),
               rows)
    width = max(len(r.hypothesis.value) for r in reports)
    for rep in reports:
        line = f"{rep.hypothesis.value:<{width}}  {rep.verdict.value}"
        if rep.counterexample:
            cex = rep.counterexample
            line += (f"  [{cex.field}{cex.component} at ({_vector(cex.point)})"
                     + (f", lambda={cex.lam:g}" if cex.lam else "")
                     + f": {cex.lhs:.6g} vs {cex.rhs:.6g}]")
        click.echo(line)
    click.echo(f"report written to {report}")
    if any(r.violated for r in reports):
        raise SystemExit(1)


@cli.command()
@_system_argument
@click.option("--w", "w_text", required=True,
              help="Probe point, comma-separated (e.g. \"1,2\").")
@click.option("--resolution", type=int, default=None)
@click.option("--refine/--no-refine", default=True, show_default=True)
@click.option("--report", type=click.Path(), default="condition.csv",
              show_default=True)
def condition(system_file, w_text, resolution, refine, report):
    """Evaluate the per-point stability condition at one w."""
    spec, defaults = _load(system_file)
    resolution = resolution if resolution is not None else defaults["resolution"]
    w = _parse_vector(w_text, spec.n, "--w")
    try:
        rep = certify.check_condition(spec, w, _solver_config(resolution, refine))
    except ValueError as err:
        raise click.UsageError(str(err))
    _write_condition_csv(report, [rep])
    _echo_condition(rep)
    click.echo(f"report written to {report}")
    if not rep.satisfied:
        raise SystemExit(1)


def _echo_condition(rep) -> None:
    verdict = "satisfied" if rep.satisfied else "NOT satisfied"
    witness = f" (witness index {rep.witness_index})" if rep.witness_index else ""
    click.echo(f"w = ({_vector(rep.w)}): {verdict}{witness}")
    for i, lhs, rhs_neg, margin in rep.per_index_details:
        click.echo(f"  i={i}: sup g_i = {lhs:.9g}, sup f_i face = {rhs_neg:.9g},"
                   f" margin = {margin:.9g}")


def _write_condition_csv(path, reports) -> None:
    rows = []
    for rep in reports:
        for i, lhs, rhs_neg, margin in rep.per_index_details:
            rows.append((
                _vector(rep.w), rep.satisfied,
                rep.witness_index if rep.witness_index is not None else None,
                i, lhs, rhs_neg, margin,
            ))
    _write_csv(path, ("w", "satisfied", "witness_index", "index",
                      "lhs", "rhs_neg", "margin"), rows)


@cli.command()
@_system_argument
@click.option("--bound", type=float, default=None)
@click.option("--samples", type=int, default=500, show_default=True)
@click.option("--resolution", type=int, default=None)
@click.option("--refine/--no-refine", default=True, show_default=True)
@click.option("--report", type=click.Path(), default="scan.csv", show_default=True)
def scan(system_file, bound, samples, resolution, refine, report):
    """Probe the stability condition across a sampled region."""
    spec, defaults = _load(system_file)
    bound = bound if bound is not None else defaults["region_bound"]
    resolution = resolution if resolution is not None else defaults["resolution"]
    reports = certify.scan_condition(spec, bound, samples,
                                     _solver_config(resolution, refine))
    _write_condition_csv(report, reports)
    unsatisfied = [rep for rep in reports if not rep.satisfied]
    click.echo(f"{len(reports)} points scanned, {len(unsatisfied)} unsatisfied")
    if unsatisfied:
        first = unsatisfied[0]
        click.echo(f"first unsatisfied at w = ({_vector(first.w)}),"
                   f" best margin {first.margin:.6g}")
    click.echo(f"report written to {report}")
    if unsatisfied:
        raise SystemExit(1)


def _write_certificate_csv(path, status, margin, trace, v, h) -> None:
    rows = []
    for k in range(len(v)):
        rows.append((status, margin, trace.depth, trace.points_evaluated,
                     k + 1, v[k], h[k]))
    _write_csv(path, ("status", "margin", "depth", "points_evaluated",
                      "component", "v", "h_value"), rows)


def _emit_certificate(result, report) -> None:
    _write_certificate_csv(report, "certified", result.margin,
                           result.search_trace, result.v, result.h_value)
    click.echo(f"certificate found at depth {result.search_trace.depth} "
               f"({result.search_trace.points_evaluated} points)")
    click.echo(f"  v = ({_vector(result.v)})")
    click.echo(f"  h(v) = ({_vector(result.h_value)})")
    click.echo(f"  margin = {result.margin:.9g}")
    click.echo(f"report written to {report}")


def _emit_not_found(err: CertificateNotFound, report) -> None:
    if err.best_v is not None:
        _write_certificate_csv(report, "not-found",
                               -max(err.best_h), err.search_trace,
                               err.best_v, err.best_h)
    click.echo(f"no certificate: {err}")
    click.echo(f"report written to {report}")


# named explicitly so the function does not shadow the certify module
@cli.command("certify")
@_system_argument
@click.option("--depth", type=int, default=6, show_default=True)
@click.option("--resolution", type=int, default=None)
@click.option("--refine/--no-refine", default=True, show_default=True)
@click.option("--report", type=click.Path(), default="certificate.csv",
              show_default=True)
def certify_cmd(system_file, depth, resolution, refine, report):
    """Search the simplex for a certificate vector."""
    spec, defaults = _load(system_file)
    resolution = resolution if resolution is not None else defaults["resolution"]
    try:
        result = certify.find_certificate(spec, depth,
                                          _solver_config(resolution, refine))
    except CertificateNotFound as err:
        _emit_not_found(err, report)
        raise SystemExit(1) from None
    _emit_certificate(result, report)


@cli.command()
@_system_argument
@click.option("--bound", type=float, default=None)
@click.option("--samples", type=int, default=500, show_default=True)
@click.option("--depth", type=int, default=6, show_default=True)
@click.option("--report", type=click.Path(), default="certificate.csv",
              show_default=True)
def shortcut(system_file, bound, samples, depth, report):
    """Certificate search for cooperative f and nondecreasing g, using
    direct evaluation of f + g instead of box optimization."""
    spec, defaults = _load(system_file)
    bound = bound if bound is not None else defaults["region_bound"]
    try:
        result = certify.monotone_shortcut(spec, bound, samples, depth)
    except PreconditionFailed as err:
        click.echo(f"precondition failed: {err}")
        for rep in err.reports:
            cex = rep.counterexample
            click.echo(f"  {rep.hypothesis.value}: {rep.verdict.value} at "
                       f"({_vector(cex.point)})")
        raise SystemExit(1) from None
    except CertificateNotFound as err:
        _emit_not_found(err, report)
        raise SystemExit(1) from None
    _emit_certificate(result, report)


@cli.command()
@_system_argument
@click.option("--tau", type=float, required=True)
@click.option("--history", default=None,
              help="Constant \"0.5,0.5\" or expressions \"expr:0.5*(1+t/2);0.25\""
                   " (default: all components 1).")
@click.option("--t-end", type=float, default=None)
@click.option("--dt", type=float, default=None)
@click.option("--out", type=click.Path(), default="trajectory.csv",
              show_default=True)
def simulate(system_file, tau, history, t_end, dt, out):
    """Integrate the delayed system and write the trajectory as CSV."""
    spec, defaults = _load(system_file)
    t_end = t_end if t_end is not None else defaults["t_end"]
    dt = dt if dt is not None else defaults["dt"]
    phi = (_parse_history(history, spec.n) if history is not None
           else HistorySpec.constant([1.0] * spec.n))
    try:
        traj = ddesim.integrate(spec, tau, phi, t_end, dt)
    except (IntegrationError, HistoryError, ValueError) as err:
        click.echo(f"integration failed: {err}", err=True)
        raise SystemExit(1) from None
    with open(out, "w", newline="") as stream:
        ddesim.trajectory_to_csv(traj, stream)
    click.echo(f"integrated to t = {traj.t_end:g} ({len(traj.mesh)} mesh points)")
    click.echo(f"  final state = ({_vector(traj.final_state)})")
    click.echo(f"  final norm = {traj.final_norm:.9g}")
    click.echo(f"  max negativity = {traj.max_negativity():.3g}")
    click.echo(f"trajectory written to {out}")


@cli.command()
@_system_argument
@click.option("--tau", type=float, required=True)
@click.option("--history", default=None)
@click.option("--t-end", type=float, default=None)
@click.option("--dt", type=float, default=None)
@click.option("--resolution", type=int, default=17, show_default=True)
@click.option("--report", type=click.Path(), default="compare.csv",
              show_default=True)
def compare(system_file, tau, history, t_end, dt, resolution, report):
    """Check that comparison-system trajectories dominate the plain ones."""
    spec, defaults = _load(system_file)
    t_end = t_end if t_end is not None else defaults["t_end"]
    dt = dt if dt is not None else defaults["dt"]
    phi = (_parse_history(history, spec.n) if history is not None
           else HistorySpec.constant([1.0] * spec.n))
    try:
        rep = ddesim.check_dominance(spec, tau, phi, t_end, dt,
                                     SolverConfig(resolution=resolution,
                                                  refine=False))
    except (IntegrationError, HistoryError, ValueError) as err:
        click.echo(f"comparison failed: {err}", err=True)
        raise SystemExit(1) from None
    _write_csv(report,
               ("tau", "history", "t_end", "dt", "max_excess", "threshold",
                "passed", "t_at_max"),
               [(rep.tau, rep.history, rep.t_end, rep.dt, rep.max_excess,
                 rep.threshold, rep.passed, rep.t_at_max)])
    state = "holds" if rep.passed else "VIOLATED"
    click.echo(f"dominance {state}: max excess {rep.max_excess:.3g} "
               f"(threshold {rep.threshold:.3g}) at t = {rep.t_at_max:g}")
    click.echo(f"report written to {report}")
    if not rep.passed:
        raise SystemExit(1)


@cli.command()
@_system_argument
@click.option("--taus", required=True, help="Comma-separated delays.")
@click.option("--histories", required=True,
              help="Semicolon-separated constant histories, e.g."
                   " \"0.5,0.5;2,1;0,3\".")
@click.option("--t-end", type=float, default=None)
@click.option("--dt", type=float, default=None)
@click.option("--conv-tol", type=float, default=None)
@click.option("--report", type=click.Path(), default="sweep.csv",
              show_default=True)
def sweep(system_file, taus, histories, t_end, dt, conv_tol, report):
    """Delay sweep: one integration per (tau, history) cell."""
    spec, defaults = _load(system_file)
    t_end = t_end if t_end is not None else defaults["t_end"]
    dt = dt if dt is not None else defaults["dt"]
    conv_tol = conv_tol if conv_tol is not None else defaults["conv_tol"]
    try:
        tau_list = [float(part) for part in taus.split(",")]
    except ValueError:
        raise click.UsageError("--taus must be comma-separated numbers")
    phis = [
        HistorySpec.constant(_parse_vector(part, spec.n, "history"))
        for part in histories.split(";")
    ]
    result = ddesim.delay_sweep(spec, tau_list, phis, t_end, dt, conv_tol)
    _write_csv(report,
               ("tau", "history", "final_norm", "max_negativity", "converged",
                "error"),
               [(row.tau, row.history, row.final_norm, row.max_negativity,
                 row.converged, row.error) for row in result.rows])
    converged = sum(row.converged for row in result.rows)
    click.echo(f"{len(result.rows)} cells, {converged} converged "
               f"(tolerance {conv_tol:g} at t = {t_end:g})")
    for row in result.rows:
        status = "ok " if row.converged else "NO "
        detail = f"final {row.final_norm:.6g}" if not row.error else row.error
        click.echo(f"  {status} tau={row.tau:<6g} phi=({row.history}): {detail}")
    click.echo(f"report written to {report}")
    if not result.all_converged:
        raise SystemExit(1)


def main() -> None:
    cli(prog_name="delaycert")


if __name__ == "__main__":
    main()

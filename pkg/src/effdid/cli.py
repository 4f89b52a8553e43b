"""
Command-Line Interface

Subcommands:
    estimate   ATEM cells with joint bootstrap bands
    pretrends  post and pre-trend cells banded together, plus a verdict
    aggregate  time-average (or per-period event/number) aggregates
    simulate   Monte Carlo study on the built-in design

Settings resolve as: command-line flag > environment (EFFDID_*) > YAML run
file (--config) > default. Any effdid error ends the process with a single
`error:<code>:<Class>:<message>` line on stderr and its exit code.
"""

import functools
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import click

from . import __version__
from .config import (
    BootstrapConfig,
    EstimateConfig,
    NuisanceConfig,
    SimConfig,
    load_run_file,
    load_settings,
    make_config,
)
from .errors import EffDidError, NoPretrendCellsError
from .log_config import configure_logging
from .panel import PanelSchema, load_panel_csv
from .pipeline import EstimationRun, run_aggregation, run_estimation
from .reporting import (
    RunManifest,
    file_fingerprint,
    plot_bands,
    result_rows,
    write_estimates_csv,
    write_estimates_json,
    write_simulation_outputs,
)
from .simulate import MonteCarloOrchestrator

logger = logging.getLogger(__name__)

DEFAULTS: Dict[str, Any] = {
    "unit": "unit",
    "period": "period",
    "outcome": "y",
    "treatment": "d",
    "covariates": "",
    "spec": "once",
    "delta": 0,
    "gps": "logit",
    "trim": None,
    "max_iter": 100,
    "tol": 1e-10,
    "bootstrap": 999,
    "alpha": 0.05,
    "seed": 0,
    "weights": "mammen",
    "threads": 1,
    "out_dir": ".",
    "log_level": "INFO",
}

# settings that do not change any numeric output
NON_RESULT_KEYS = {"threads", "out_dir", "log_level", "log_json", "config", "plot", "progress", "input", "out"}


def _split(value: Optional[str]) -> List[str]:
    return [v.strip() for v in (value or "").split(",") if v.strip()]


def resolve_options(params: Dict[str, Any]) -> Dict[str, Any]:
    """Merge defaults, run file, environment and explicit flags (in increasing precedence)."""
    resolved = dict(DEFAULTS)
    resolved.update(load_run_file(params.get("config")))
    resolved.update(load_settings())
    resolved.update({k: v for k, v in params.items() if v is not None})
    return resolved


def common_options(func):
    """Panel, specification, first-step and bootstrap flags shared by analysis subcommands."""
    options = [
        click.option("--input", "input", type=click.Path(exists=True, dir_okay=False), help="Long-format panel CSV"),
        click.option("--unit", help="Unit id column [unit]"),
        click.option("--period", help="Period column [period]"),
        click.option("--outcome", help="Outcome column [y]"),
        click.option("--treatment", help="Treatment column(s), comma separated [d]"),
        click.option("--covariates", help="Time-invariant covariate columns, comma separated"),
        click.option("--delta", type=int, help="Anticipation window [0]"),
        click.option("--gps", type=click.Choice(["logit", "probit"]), help="Propensity link [logit]"),
        click.option("--trim", type=float, help="Drop units with propensity outside [trim, 1-trim]"),
        click.option("--max-iter", type=int, help="Newton iterations for the propensity fit [100]"),
        click.option("--tol", type=float, help="Score tolerance for the propensity fit [1e-10]"),
        click.option("--bootstrap", type=int, help="Bootstrap repetitions B [999]"),
        click.option("--alpha", type=float, help="Band level [0.05]"),
        click.option("--seed", type=int, help="Bootstrap seed [0]"),
        click.option("--weights", type=click.Choice(["mammen", "rademacher"]), help="Multiplier law [mammen]"),
        click.option("--threads", type=int, help="Worker threads [1]"),
        click.option("--out-dir", type=click.Path(file_okay=False), help="Output directory [.]"),
        click.option("--plot", is_flag=True, default=None, help="Also write plot.svg"),
        click.option("--config", type=click.Path(exists=True, dir_okay=False), help="YAML run file"),
        click.option("--log-level", help="Logging level [INFO]"),
        click.option("--log-json", is_flag=True, default=None, help="JSON log lines"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def handle_errors(func):
    """Report effdid errors on one line and exit with their code."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except EffDidError as e:
            logger.debug("command failed", exc_info=True)
            click.echo(e.one_line(), err=True)
            sys.exit(e.exit_code)
    return wrapper


def _setup(params: Dict[str, Any]) -> Dict[str, Any]:
    opts = resolve_options(params)
    configure_logging(opts["log_level"], bool(opts.get("log_json")))
    return opts


def _configs(opts: Dict[str, Any], **estimate_values):
    nuisance = make_config(NuisanceConfig, gps=opts["gps"], trim=opts["trim"], max_iter=opts["max_iter"],
                           tol=opts["tol"])
    bootstrap = make_config(BootstrapConfig, n_reps=opts["bootstrap"], alpha=opts["alpha"], seed=opts["seed"],
                            weight_kind=opts["weights"], threads=opts["threads"],
                            pretrends_in_uniform=estimate_values.pop("pretrends_in_uniform", None))
    estimate = make_config(EstimateConfig, spec=opts["spec"], delta=opts["delta"], threads=opts["threads"],
                           **estimate_values)
    return estimate, nuisance, bootstrap


def _load(opts: Dict[str, Any]):
    if not opts.get("input"):
        raise click.UsageError("--input is required (flag or run file)")
    schema = PanelSchema(
        unit_column=opts["unit"],
        period_column=opts["period"],
        outcome_column=opts["outcome"],
        treatment_columns=tuple(_split(opts["treatment"])),
        covariate_columns=tuple(_split(opts["covariates"])),
    )
    return load_panel_csv(opts["input"], schema)


def _manifest(subcommand: str, opts: Dict[str, Any], run: Optional[EstimationRun] = None) -> RunManifest:
    config = {k: v for k, v in sorted(opts.items()) if k not in NON_RESULT_KEYS}
    return RunManifest(
        subcommand=subcommand,
        config=config,
        input=file_fingerprint(opts["input"]) if opts.get("input") else None,
        version=__version__,
        cells=[c.label() for c in run.cells] if run is not None else [],
    )


def _write(run: EstimationRun, opts: Dict[str, Any], subcommand: str, stem: str,
           aggregates_only: bool = False):
    out = Path(opts["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(subcommand, opts, run)
    rows = result_rows(run, opts["alpha"], aggregates_only=aggregates_only)
    write_estimates_csv(rows, out / f"{stem}.csv", manifest)
    write_estimates_json(run, rows, out / f"{stem}.json", manifest)
    if opts.get("plot"):
        plot_bands(rows, out / "plot.svg", manifest)
    for row in rows:
        band = "" if row["lower"] is None else f"  [{row['lower']:.4f}, {row['upper']:.4f}]"
        click.echo(f"{row['cell']:<22}{row['point']:>10.4f}{band}")


@click.group()
@click.version_option(__version__, prog_name="effdid")
def main():
    """Doubly robust DiD with effective treatments."""


@main.command()
@common_options
@click.option("--spec", type=click.Choice(["once", "event", "number"]), help="Effective treatment [once]")
@click.option("--estimand", type=click.Choice(["DR", "OR", "IPW"]), help="Estimator [DR]")
@click.option("--pretrends", "include_pretrends", is_flag=True, default=None, help="Add pre-trend cells")
@handle_errors
def estimate(**params):
    """Estimate the default design of a specification."""
    opts = _setup(params)
    panel = _load(opts)
    est_cfg, nuisance, boot = _configs(opts, include_pretrends=opts.get("include_pretrends"),
                                       estimand=opts.get("estimand"))
    run = run_estimation(panel, est_cfg, nuisance, boot)
    _write(run, opts, "estimate", "estimates")


@main.command()
@common_options
@click.option("--spec", type=click.Choice(["once", "event", "number"]), help="Effective treatment [once]")
@click.option("--post-only-bands", is_flag=True, default=None,
              help="Band post and pre-trend cells with separate critical values")
@handle_errors
def pretrends(**params):
    """Estimate post and pre-trend cells and check the pre-trend bands against zero."""
    opts = _setup(params)
    panel = _load(opts)
    est_cfg, nuisance, boot = _configs(opts, include_pretrends=True,
                                       pretrends_in_uniform=not opts.get("post_only_bands"))
    run = run_estimation(panel, est_cfg, nuisance, boot)
    if run.verdict is None:
        raise NoPretrendCellsError(f"the {est_cfg.spec} design has no cells with s >= 2")
    _write(run, opts, "pretrends", "estimates")
    click.echo(run.verdict.summary())


@main.command()
@common_options
@click.option("--kind", type=click.Choice(["time_average", "event", "number"]), default="time_average",
              show_default=True,
              help="Aggregate to report; event reports baseline-1 cells (t,1,e), which have the "
                   "same movers and stayers as (t,e-1,e)")
@click.option("--uniform-with-components", is_flag=True, default=None,
              help="Include component cells in the max-t set")
@handle_errors
def aggregate(**params):
    """Aggregate cell estimates (ATEM^A by default) with a bootstrap interval."""
    opts = _setup(params)
    panel = _load(opts)
    est_cfg, nuisance, boot = _configs(opts)
    run = run_aggregation(panel, opts["kind"], est_cfg, nuisance, boot,
                          uniform_with_components=bool(opts.get("uniform_with_components")))
    _write(run, opts, "aggregate", "aggregate", aggregates_only=not opts.get("uniform_with_components"))


@main.command()
@click.option("--n", "n_units", type=int, help="Units N [1000]")
@click.option("--t", "n_periods", type=int, help="Periods T [4]")
@click.option("--reps", type=int, help="Replications [1000]")
@click.option("--spec", type=click.Choice(["once", "event", "number"]), help="Effective treatment [once]")
@click.option("--pretrends", "include_pretrends", is_flag=True, default=None, help="Track pre-trend cells")
@click.option("--seed", type=int, help="Master seed [0]")
@click.option("--bootstrap", type=int, help="Bootstrap repetitions per replication [999]")
@click.option("--alpha", type=float, help="Band level [0.05]")
@click.option("--weights", type=click.Choice(["mammen", "rademacher"]), help="Multiplier law [mammen]")
@click.option("--gps", type=click.Choice(["logit", "probit"]), help="Propensity link [logit]")
@click.option("--trend-violation", "parallel_trends_violation", type=float,
              help="Adds c * alpha_i * t to untreated outcomes")
@click.option("--u-law", type=click.Choice(["normal", "logistic"]), help="Selection error law [normal]")
@click.option("--alpha-law", type=click.Choice(["normal", "logistic", "zero"]), help="Unit effect law [normal]")
@click.option("--threads", type=int, help="Worker threads across replications [1]")
@click.option("--out", "out", type=click.Path(dir_okay=False), help="Table CSV path [simulation.csv]")
@click.option("--progress", is_flag=True, default=None, help="Show a progress bar")
@click.option("--config", type=click.Path(exists=True, dir_okay=False), help="YAML run file")
@click.option("--log-level", help="Logging level [INFO]")
@click.option("--log-json", is_flag=True, default=None, help="JSON log lines")
@handle_errors
def simulate(**params):
    """Monte Carlo study: bias, RMSE, pointwise/uniform coverage and interval length per cell."""
    opts = _setup(params)
    sim_cfg = make_config(SimConfig, n_units=opts.get("n_units"), n_periods=opts.get("n_periods"),
                          reps=opts.get("reps"), seed=opts["seed"], u_law=opts.get("u_law"),
                          alpha_law=opts.get("alpha_law"),
                          parallel_trends_violation=opts.get("parallel_trends_violation"))
    est_cfg = make_config(EstimateConfig, spec=opts["spec"], include_pretrends=opts.get("include_pretrends"))
    nuisance = make_config(NuisanceConfig, gps=opts["gps"])
    boot = make_config(BootstrapConfig, n_reps=opts["bootstrap"], alpha=opts["alpha"], weight_kind=opts["weights"])

    orchestrator = MonteCarloOrchestrator(sim_cfg, est_cfg, nuisance, boot, threads=opts["threads"],
                                          progress=bool(opts.get("progress")))
    table = orchestrator.run()
    out = Path(opts.get("out") or "simulation.csv")
    write_simulation_outputs(table, out.parent, _manifest("simulate", opts), csv_name=out.name)
    logger.info(f"Summary: {orchestrator.generate_summary_report()}")
    for row in table.rows:
        click.echo(f"t={row.t},s={row.s},e={row.e}{'' if row.r is None else f',r={row.r}'}  bias={row.bias:.4f} "
                   f"rmse={row.rmse:.4f} pw_cp={row.pw_cp:.3f} u_cp={row.u_cp:.3f} ci_l={row.ci_l:.3f}")


if __name__ == "__main__":
    main()

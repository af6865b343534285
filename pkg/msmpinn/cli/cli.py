from dataclasses import replace
from functools import wraps
import json
import os
import sys
from typing import List, Optional, Sequence, Tuple

import click
from joblib import Parallel, delayed

from msmpinn import __version__
from msmpinn import _exceptions as exc
from msmpinn.config import (ExperimentConfig, apply_preset, config_digest,
                            default_config, dump_config, load_config,
                            resolve)
from msmpinn.metrics import build_report, lattice_frame, report_records
from msmpinn.network import DenseNetwork
from msmpinn.problems import (default_lattice, get_problem,
                              lattice_from_counts)
from msmpinn.training import msm_run, pinn_run
from msmpinn.utils import write_csv, write_json, write_text
from msmpinn.verify import run_suites
import msmpinn._descriptions as DESC

PROGRESS_STRIDE = 500
THREADS_ENV = "MSM_THREADS"


def _exit_codes(func):
    """Map configuration errors to exit status 2 and numeric failures to 1."""
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (exc.ConfigurationError, exc.ContractError) as e:
            click.echo(f"Error: {e.message}", err=True)
            sys.exit(2)
        except exc.NumericError as e:
            click.echo(f"Error: {e.message}", err=True)
            sys.exit(1)
    return wrapper


def _thread_cap() -> Optional[int]:
    value = os.environ.get(THREADS_ENV)
    if value is None:
        return None
    try:
        cap = int(value)
    except ValueError:
        raise exc.ConfigurationError(
            f"{THREADS_ENV} must be an integer, got '{value}'."
        )
    if cap < 1:
        raise exc.ConfigurationError(
            f"{THREADS_ENV} must be at least 1, got {cap}."
        )
    return cap


def _workers(parallel: int) -> Tuple[int, int]:
    """Number of concurrent runs and threads per run."""
    if parallel < 1:
        raise exc.ConfigurationError(
            f"--parallel must be at least 1, got {parallel}."
        )
    cap = _thread_cap()
    if cap is None:
        return parallel, 1
    runs = min(parallel, cap)
    return runs, max(1, cap // runs)


def _parse_seeds(text: str) -> Tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise exc.ConfigurationError(f"Invalid seed list '{text}'.")


def _experiment(config_path, problem, preset, seed, seeds,
                method=None) -> ExperimentConfig:
    if config_path is not None:
        config = load_config(config_path)
    elif problem is not None:
        config = default_config(problem)
    else:
        raise exc.ConfigurationError("Either --config or --problem is "
                                     "required.")
    if preset is not None:
        config = apply_preset(config, preset)
    if method is not None:
        config = replace(config, method=method)
    if seed is not None:
        config = replace(config, seeds=(seed,))
    elif seeds is not None:
        config = replace(config, seeds=_parse_seeds(seeds))
    return resolve(config)


def _progress(method: str, seed: int):
    def callback(phase, epoch, loss):
        if epoch % PROGRESS_STRIDE == 0:
            click.echo(f"[{method} seed {seed}] {phase} epoch {epoch}: "
                       f"loss {loss:.4e}")
    return callback


def _load_checkpoint(path, problem) -> DenseNetwork:
    try:
        net = DenseNetwork.load(path)
    except FileNotFoundError:
        raise exc.ConfigurationError(f"Checkpoint {path} not found.")
    except (ValueError, KeyError) as e:
        raise exc.ConfigurationError(f"Invalid checkpoint {path}: {e}")
    if net.input_dim != problem.input_dim:
        raise exc.DimensionMismatchError(problem.input_dim, net.input_dim,
                                         "checkpoint input")
    return net


def _write_grid(field, problem, directory: str) -> None:
    lattice = default_lattice(problem)
    if lattice is not None:
        write_csv(os.path.join(directory, "u_grid.csv"),
                  lattice_frame(field, problem, lattice))


def _execute(config: ExperimentConfig, method: str, seed: int, out: str,
             n_jobs: int):
    """Run one (method, seed) pair and write its artifacts.

    :returns: Error report of the run, or None and a failure message
    """
    problem = get_problem(config.problem)
    output = config.output
    directory = os.path.join(out, method, f"seed_{seed}")
    callback = _progress(method, seed)
    click.echo(f"Running {method} on {problem.name} with seed {seed}...")
    try:
        if method == "msm":
            result = msm_run(problem, config.train, seed,
                             output.lattice_scale, output.n_eval_mc,
                             n_jobs=n_jobs, callback=callback)
        else:
            result = pinn_run(problem, config.train, seed,
                              output.lattice_scale, output.n_eval_mc,
                              callback=callback)
    except exc.NumericError as error:
        partial = getattr(error, "partial_result", None)
        if partial is not None:
            partial.save(directory, output.export_sets,
                         output.export_trajectories,
                         output.export_checkpoints)
        return None, f"{method} seed {seed}: {error.message}"

    result.save(directory, output.export_sets, output.export_trajectories,
                output.export_checkpoints)
    if output.export_grid:
        _write_grid(result.u_net, problem, directory)
    click.echo(f"Finished {method} seed {seed}: "
               f"rel_l2={result.errors['rel_l2']:.4e}, "
               f"l_inf={result.errors['l_inf']:.4e}")
    return result.error_report(config_digest(config)), None


def _run_experiments(config: ExperimentConfig, methods: Sequence[str],
                     out: str, parallel: int) -> List[str]:
    """Run every (method, seed) pair, write the report and return the
    failure messages."""
    runs, threads = _workers(parallel)
    os.makedirs(out, exist_ok=True)
    write_text(os.path.join(out, "config.toml"), dump_config(config))

    jobs = [(method, seed) for method in methods for seed in config.seeds]
    outcomes = Parallel(n_jobs=runs)(
        delayed(_execute)(config, method, seed, out, threads)
        for method, seed in jobs
    )
    reports = [report for report, _ in outcomes if report is not None]
    failures = [failure for _, failure in outcomes if failure is not None]

    table = build_report(reports)
    write_csv(os.path.join(out, "report.csv"), table)
    write_json(os.path.join(out, "report.json"), report_records(table))
    for failure in failures:
        click.echo(f"Failed: {failure}", err=True)
    return failures


@click.group()
@click.version_option(__version__)
def msmpinn():
    """Trains physics-informed networks with moving collocation samples."""
    pass


@msmpinn.command()
@click.option("-c", "--config", "config_path", type=click.Path(),
              help=DESC.CONFIG)
@click.option("-p", "--problem", type=click.Choice(DESC.VALID_PROBLEMS),
              help=DESC.PROBLEM)
@click.option("--preset", type=click.Choice(DESC.VALID_PRESETS),
              help=DESC.PRESET)
@click.option("--seed", type=int, help=DESC.SEED)
@click.option("--seeds", type=str, help=DESC.SEEDS)
@click.option("--method", type=click.Choice(DESC.VALID_METHODS),
              help=DESC.METHOD)
@click.option("-o", "--out", type=click.Path(), help=DESC.OUTPUT)
@click.option("--parallel", type=int, default=1, show_default=True,
              help=DESC.PARALLEL)
@_exit_codes
def run(config_path, problem, preset, seed, seeds, method, out, parallel):
    """Train one method over the configured seeds."""
    config = _experiment(config_path, problem, preset, seed, seeds, method)
    out = out or config.output.directory
    failures = _run_experiments(config, [config.method], out, parallel)
    if failures:
        sys.exit(1)
    click.echo(f"Wrote artifacts to {out}")


@msmpinn.command()
@click.argument("problem", type=click.Choice(DESC.VALID_PROBLEMS))
@click.option("-c", "--config", "config_path", type=click.Path(),
              help=DESC.CONFIG)
@click.option("--preset", type=click.Choice(DESC.VALID_PRESETS),
              help=DESC.PRESET)
@click.option("--seeds", type=str, help=DESC.SEEDS)
@click.option("-o", "--out", type=click.Path(), help=DESC.OUTPUT)
@click.option("--parallel", type=int, default=1, show_default=True,
              help=DESC.PARALLEL)
@_exit_codes
def compare(problem, config_path, preset, seeds, out, parallel):
    """Run both methods per seed with matched budgets."""
    config = _experiment(config_path, problem, preset, None, seeds)
    if config.problem != problem:
        raise exc.ConfigurationError(
            f"Configuration is for {config.problem}, not {problem}."
        )
    out = out or config.output.directory
    failures = _run_experiments(config, DESC.VALID_METHODS, out, parallel)
    if failures:
        sys.exit(1)
    click.echo(f"Wrote report to {os.path.join(out, 'report.csv')}")


@msmpinn.command()
@click.option("-s", "--suite", "suites", multiple=True,
              type=click.Choice(DESC.VALID_SUITES), help=DESC.SUITE)
@click.option("-o", "--out", type=click.Path(), help=DESC.OUTPUT)
@_exit_codes
def verify(suites, out):
    """Run numerical self-checks and print a JSON summary."""
    summary = run_suites(suites, echo=lambda line: click.echo(line,
                                                              err=True))
    if out is not None:
        write_json(os.path.join(out, "verify.json"), summary)
    click.echo(json.dumps(summary, indent=2, sort_keys=True))
    if not summary["passed"]:
        sys.exit(1)


@msmpinn.command(name="export-grid")
@click.option("--checkpoint", type=click.Path(),
              help=DESC.CHECKPOINT)
@click.option("-p", "--problem", required=True,
              type=click.Choice(DESC.VALID_PROBLEMS), help=DESC.PROBLEM)
@click.option("--points", type=int, help=DESC.POINTS)
@click.option("--slices", type=int, help=DESC.SLICES)
@click.option("-o", "--out", required=True, type=click.Path(),
              help=DESC.OUTPUT_FILE)
@_exit_codes
def export_grid(checkpoint, problem, points, slices, out):
    """Evaluate a trained solution network (or the reference solution) on
    a lattice."""
    problem = get_problem(problem)
    field = problem.reference if checkpoint is None else \
        _load_checkpoint(checkpoint, problem)
    if points is None and slices is None:
        lattice = default_lattice(problem)
        if lattice is None:
            raise exc.ConfigurationError(
                f"{problem.name} has no default lattice; pass --points and "
                "--slices."
            )
    elif points is None or slices is None:
        raise exc.ConfigurationError("--points and --slices go together.")
    elif points < 2 or slices < 2:
        raise exc.ConfigurationError(
            "--points and --slices must be at least 2."
        )
    else:
        lattice = lattice_from_counts(problem, points, slices)
    frame = lattice_frame(field, problem, lattice)
    write_csv(out, frame)
    click.echo(f"Wrote {len(frame)} lattice rows to {out}")


if __name__ == "__main__":
    msmpinn()

"""``rlct`` command-line interface.

Exit codes: 0 on success, 2 for configuration errors, 3 for numerical
failures.
"""

from __future__ import annotations

import logging
import sys
from contextlib import contextmanager
from typing import Optional

import click
import numpy as np

from rlct import workflows as wf
from rlct.model_core import BoundaryError
from rlct.sampler import SamplerError, TailMassError
from rlct.sbic import MonotonicityError, SbicError
from rlct.zoo.mle import EMMonotonicityError

EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_NUMERIC_ERRORS = (SamplerError, TailMassError, SbicError, MonotonicityError, EMMonotonicityError, BoundaryError,
                   FloatingPointError, np.linalg.LinAlgError)


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@contextmanager
def _guarded():
    try:
        yield
    except wf.ConfigError as exc:
        _fail(str(exc), EXIT_CONFIG)
    except _NUMERIC_ERRORS as exc:
        _fail(f"{type(exc).__name__}: {exc}", EXIT_NUMERIC)


def _prepare(command: str, config: Optional[str], seed: Optional[int], extra: Optional[dict] = None):
    user = wf.load_config(config)
    if seed is not None:
        user["seed"] = seed
    for key, value in (extra or {}).items():
        if value is not None:
            user[key] = value
    return wf.resolve_config(command, user)


def _workers(workers: Optional[int]) -> int:
    if workers is None:
        return wf.default_workers()
    if workers < 1:
        raise wf.ConfigError("--workers must be >= 1")
    return workers


@contextmanager
def _output(path: Optional[str]):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


_config_opt = click.option("--config", "config", type=click.Path(dir_okay=False), help="YAML configuration (or a CSV written by rlct).")
_seed_opt = click.option("--seed", type=click.IntRange(0, 2**64 - 1), help="Master seed; overrides the configuration.")
_workers_opt = click.option("--workers", type=int, help=f"Worker processes (default: ${wf.WORKERS_ENV} or 1).")
_out_opt = click.option("--out", type=click.Path(dir_okay=False), help="Output CSV (default: stdout).")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log chain diagnostics.")
def main(verbose: bool):
    """Estimate real log canonical thresholds and select singular models."""
    logging.basicConfig(level=logging.INFO if verbose else logging.ERROR, format="%(levelname)s %(message)s")


@main.command("estimate-rlct")
@_config_opt
@_seed_opt
@_workers_opt
@_out_opt
def estimate_rlct(config, seed, workers, out):
    """Variance-based RLCT estimate for a model pair from the zoo."""
    with _guarded():
        cfg = _prepare("estimate-rlct", config, seed)
        rows = wf.run_estimate(cfg, _workers(workers))
        with _output(out) as fh:
            wf.write_estimate_report(cfg, rows, fh)


@main.command()
@_config_opt
@_seed_opt
@_workers_opt
@_out_opt
@click.option("--data", type=click.Path(dir_okay=False), help="Counts file: one integer per line.")
@click.option("--fixture", type=click.Choice(["cormorant"]), help="Use an embedded dataset instead of --data.")
@click.option("--rlct-table", type=click.Path(dir_okay=False), help="CSV of RLCT estimates from estimate-rlct or replicate.")
@click.option("--strict-monotonicity", is_flag=True, default=None, help="Abort when RLCT estimates are not monotone.")
def select(config, seed, workers, out, data, fixture, rlct_table, strict_monotonicity):
    """Choose the number of binomial mixture components."""
    with _guarded():
        cfg = _prepare("select", config, seed)
        if (data is None) == (fixture is None):
            raise wf.ConfigError("give exactly one of --data and --fixture")
        dataset = wf.cormorant_fixture() if fixture else wf.read_counts(data)
        report = wf.run_select(cfg, dataset, rlct_table, _workers(workers), strict_monotonicity)
        with _output(out) as fh:
            fh.write(wf.config_header("select", cfg))
            report.result.write_csv(fh)
        click.echo(wf.format_selection(report), err=out is None)


@main.command()
@click.argument("target", type=click.Choice(sorted(wf.TARGET_SETTINGS)))
@_config_opt
@_seed_opt
@_workers_opt
@_out_opt
@click.option("--scale", type=float, help="Shrink simulation counts and m by this factor in (0, 1].")
@click.option("--strict-monotonicity", is_flag=True, default=None, help="Abort when RLCT estimates are not monotone.")
def replicate(target, config, seed, workers, out, scale, strict_monotonicity):
    """Rerun one of the reference experiments."""
    with _guarded():
        cfg = _prepare("replicate", config, seed, {"target": target, "scale": scale,
                                                   "strict_monotonicity": strict_monotonicity})
        header, rows = wf.run_replicate(cfg, _workers(workers))
        with _output(out) as fh:
            wf.write_rows_report("replicate", cfg, header, rows, fh)


@main.command()
@_config_opt
@_seed_opt
@_out_opt
@click.option("--fixture", type=click.Choice(["cormorant"]), help="Sample on an embedded dataset.")
def sample(config, seed, out, fixture):
    """Dump one tempered-posterior chain."""
    with _guarded():
        cfg = _prepare("sample", config, seed)
        chain = wf.run_sample(cfg, fixture)
        with _output(out) as fh:
            wf.write_chain_report(cfg, chain, fh)


@main.command()
@_config_opt
@_seed_opt
@_out_opt
@click.option("--fixture", type=click.Choice(["cormorant"]), help="Use an embedded dataset.")
def oracle(config, seed, out, fixture):
    """Compare MCMC moments with the quadrature oracle."""
    with _guarded():
        cfg = _prepare("oracle", config, seed)
        header, rows = wf.run_oracle(cfg, fixture)
        with _output(out) as fh:
            wf.write_rows_report("oracle", cfg, header, rows, fh)


if __name__ == "__main__":
    main()

"""
CryptoTVP - Command Line Interface
Configuration-driven experiment runs: simulate, forecast, trade, verify.
Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

import logging
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

from app import create_app
from services.archive_service import ArchiveService
from services.config_validation import SimulateConfig, load_run_config, validate_environment
from services.data_service import PanelSchema, load_panel, save_panel, simulate_dgp
from services.evaluation_service import bayes_factor_frame, expanding_window_run, score
from services.model_spec import ModelFamily, ModelSpec
from services.portfolio_service import (
    EQUAL_WEIGHTS,
    ONLY_FIRST,
    backtest,
    baseline_weights,
    strategy_weights,
)
from services import report_service
from utils import format_elapsed

logger = logging.getLogger(__name__)

BASELINE_MODEL = ModelFamily.TVP_FLAT.value


def _resolve(config_path, output, seed=None, jobs=None):
    run_config = load_run_config(config_path).with_overrides(seed=seed, jobs=jobs, output_dir=output)
    out = Path(run_config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return run_config, out


def _archive_app(output_dir):
    uri = os.getenv('ARCHIVE_DATABASE_URL') or f"sqlite:///{Path(output_dir).resolve() / 'archive.db'}"
    return create_app(database_uri=uri)


def _load_run_panel(run_config):
    data = run_config.data
    if data is None or not data.path:
        raise ValueError("'data.path' is not set; run 'simulate' first or point it at a prepared panel")
    panel = load_panel(data.path, PanelSchema(data.date_column, data.columns, data.targets))
    if data.transform == 'log_returns':
        panel = panel.log_returns()
    if run_config.holdout >= panel.T:
        raise ValueError(f"holdout {run_config.holdout} must be smaller than the panel length {panel.T}")
    return panel


common_options = [
    click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False),
                 help='Run configuration JSON.'),
    click.option('--output', default=None, type=click.Path(file_okay=False), help='Output directory.'),
    click.option('--seed', default=None, type=int, help='Master seed (overrides the configuration).'),
    click.option('--jobs', default=None, type=int, help='Concurrent (model, window) jobs.'),
]


def with_common_options(func):
    for option in reversed(common_options):
        func = option(func)
    return func


@click.group()
def cli():
    """Bayesian TVP-VAR forecasting and portfolio experiments."""


@cli.command()
@with_common_options
def simulate(config_path, output, seed, jobs):
    """Write a synthetic panel and its ground truth."""
    run_config, out = _resolve(config_path, output, seed, jobs)
    sim = run_config.simulate or SimulateConfig()
    sim_seed = seed if seed is not None else sim.seed
    spec = ModelSpec(family=sim.family, p=run_config.lag_order, seed=sim_seed)
    panel, truth = simulate_dgp(spec, sim.T, sim_seed, sim.m)

    config_hash = run_config.config_hash
    save_panel(panel, out / 'simulated_panel.csv', header_comment=f"config_hash={config_hash}")
    truth.to_json(out / 'simulated_truth.json', extra={'config_hash': config_hash})
    click.echo(f"Simulated {spec.tag} panel (T={sim.T}, m={sim.m}) written to {out}")


@cli.command()
@with_common_options
def forecast(config_path, output, seed, jobs):
    """Expanding-window forecasts and scores for every configured model."""
    run_config, out = _resolve(config_path, output, seed, jobs)
    panel = _load_run_panel(run_config)
    config_hash = run_config.config_hash
    app = _archive_app(out)
    jobs = run_config.jobs or app.config['DEFAULT_JOBS']
    metadata = report_service.run_metadata(run_config, config_hash, panel.names)

    with app.app_context():
        ArchiveService.ensure_run(config_hash, run_config.seed, metadata)
        reports = {}
        for tag in run_config.models:
            spec = run_config.model_spec(tag)
            done = ArchiveService.completed_windows(config_hash, tag)
            if done:
                logger.info(f"Resuming {tag}: {len(done)} of {run_config.holdout} windows archived")
            expanding_window_run(panel, spec, run_config.holdout, jobs=jobs, targets=panel.target_indices,
                                 skip=done, on_record=lambda record: ArchiveService.save_record(config_hash, record))
            reports[tag] = score(ArchiveService.load_records(config_hash, tag))

    baseline = BASELINE_MODEL if BASELINE_MODEL in reports else run_config.models[0]
    report_service.write_csv(report_service.score_table(reports), out / 'forecast_scores.csv', config_hash)
    report_service.write_csv(report_service.pit_table(reports), out / 'forecast_pit_tests.csv', config_hash)
    report_service.write_csv(report_service.per_date_scores(reports), out / 'forecast_scores_by_date.csv',
                             config_hash)
    report_service.write_csv(report_service.pit_series(reports), out / 'forecast_pit_series.csv', config_hash)
    report_service.write_csv(bayes_factor_frame(reports, baseline), out / 'forecast_bayes_factors.csv',
                             config_hash)
    report_service.write_descriptives(panel, out, config_hash)
    report_service.write_json(metadata, out / 'run_metadata.json', config_hash)
    click.echo(f"Forecast tables for {len(reports)} model(s) written to {out}")


@cli.command()
@with_common_options
def trade(config_path, output, seed, jobs):
    """Portfolio backtests from archived forecasts."""
    run_config, out = _resolve(config_path, output, seed, jobs)
    config_hash = run_config.config_hash
    app = _archive_app(out)

    trade_reports = {}
    realized = dates = names = None
    with app.app_context():
        for tag in run_config.models:
            if not ArchiveService.has_records(config_hash, tag):
                raise ValueError(f"no forecast archive for {tag} (config {config_hash[:12]}); "
                                 f"run the 'forecast' command first")
            records = ArchiveService.load_records(config_hash, tag)
            if len(records) != run_config.holdout:
                raise ValueError(f"forecast archive for {tag} holds {len(records)} of {run_config.holdout} "
                                 f"windows; rerun the 'forecast' command to complete it")
            realized = np.array([r.realized for r in records])
            dates = [r.forecast_date for r in records]
            names = list(records[0].density.names)
            paths = strategy_weights(records, run_config.target_returns)
            trade_reports[tag] = {strategy: backtest(weights, realized, dates, strategy)
                                  for strategy, weights in paths.items()}

    baselines = {name: backtest(baseline_weights(dates, len(names), name), realized, dates, name)
                 for name in (EQUAL_WEIGHTS, ONLY_FIRST)}
    table = report_service.sharpe_table(trade_reports, baselines, run_config.target_returns)
    report_service.write_csv(table, out / 'trade_sharpe.csv', config_hash)
    report_service.write_csv(report_service.weight_paths(trade_reports, names), out / 'trade_weights.csv',
                             config_hash)
    click.echo(f"Trading tables written to {out}")


@cli.command()
@with_common_options
def verify(config_path, output, seed, jobs):
    """Re-hash the configuration and check every output file against it."""
    run_config, out = _resolve(config_path, output, seed, jobs)
    results = report_service.verify_outputs(out, run_config.config_hash)
    if not results:
        raise ValueError(f"no CSV or JSON outputs found in {out}")
    for name, ok in results.items():
        click.echo(f"{'ok' if ok else 'MISMATCH'}  {name}")
    failed = [name for name, ok in results.items() if not ok]
    if failed:
        raise ValueError(f"{len(failed)} file(s) do not match config hash {run_config.config_hash[:12]}")


def main(argv=None):
    """Run the CLI and translate failures into exit codes."""
    validate_environment()
    started = time.perf_counter()
    try:
        cli.main(args=argv, prog_name='cryptotvp', standalone_mode=False)
    except (ValueError, click.ClickException) as e:
        message = e.format_message() if isinstance(e, click.ClickException) else str(e)
        logger.error(f"Validation error: {message}")
        click.echo(f"Error: {message}", err=True)
        return 1
    except Exception as e:
        logger.error(f"Run failed: {e}", exc_info=True)
        click.echo(f"Error: {e}", err=True)
        return 2
    logger.debug(f"Command finished in {format_elapsed(time.perf_counter() - started)}")
    return 0


if __name__ == '__main__':
    sys.exit(main())

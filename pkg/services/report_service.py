"""
CryptoTVP - Report Service
Writes every result table and plot-data series as CSV (first line
'# config_hash=<sha256>') or JSON (top-level 'config_hash' key), and
verifies output directories against a configuration hash.
"""

import json
import logging
from importlib import metadata as importlib_metadata
from pathlib import Path

import numpy as np
import pandas as pd

from services.data_service import describe_panel
from services.model_spec import ModelFamily
from services.portfolio_service import EQUAL_WEIGHTS, MIN_VARIANCE, ONLY_FIRST, target_label
from services.volatility import LOG_SQUARE_OFFSET
from services.evaluation_service import PIT_CLAMP
from utils import SEED_RULE

logger = logging.getLogger(__name__)

HASH_PREFIX = '# config_hash='
TRACKED_PACKAGES = ('numpy', 'scipy', 'pandas', 'statsmodels', 'Flask', 'Flask-SQLAlchemy')


# ============================================================================
# Writers
# ============================================================================
def write_csv(frame: pd.DataFrame, path, config_hash):
    path = Path(path)
    with open(path, 'w', newline='') as handle:
        handle.write(f"{HASH_PREFIX}{config_hash}\n")
        frame.to_csv(handle, index=False)
    logger.info(f"Wrote {path}")
    return path


def write_json(payload, path, config_hash):
    path = Path(path)
    body = dict(payload)
    body['config_hash'] = config_hash
    with open(path, 'w') as handle:
        json.dump(body, handle, sort_keys=True, indent=2, default=_json_default)
        handle.write('\n')
    logger.info(f"Wrote {path}")
    return path


def _json_default(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


# ============================================================================
# Forecast tables
# ============================================================================
def _label(tag):
    try:
        return ModelFamily.parse(tag).label
    except ValueError:
        return tag


def score_table(reports):
    """Joint and marginal LPS plus RMSE per target, one row per model."""
    rows = []
    for tag, report in reports.items():
        row = {'model': tag, 'label': _label(tag), 'joint_lps': report.joint_lps}
        for col, name in enumerate(report.target_names):
            row[f'lps_{name}'] = float(report.marginal_lps[col])
        for col, name in enumerate(report.target_names):
            row[f'rmse_{name}'] = float(report.rmse[col])
        rows.append(row)
    return pd.DataFrame(rows)


def pit_table(reports):
    """Mean, variance and persistence tests of the PIT errors per model and target."""
    rows = []
    for tag, report in reports.items():
        for name in report.target_names:
            tests = report.tests.get(name)
            row = {'model': tag, 'target': name}
            if tests is None:
                row.update({k: np.nan for k in ('mean', 'mean_p', 'variance', 'variance_p',
                                                'persistence', 'persistence_p')})
            else:
                row.update(tests.as_dict())
            rows.append(row)
    return pd.DataFrame(rows)


def per_date_scores(reports):
    """Long-format per-date joint and marginal log scores."""
    frames = []
    for tag, report in reports.items():
        frame = pd.DataFrame({'date': report.dates, 'model': tag, 'joint': report.joint_scores})
        for col, name in enumerate(report.target_names):
            frame[name] = report.marginal_scores[:, col]
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def pit_series(reports):
    frames = []
    for tag, report in reports.items():
        frame = pd.DataFrame({'date': report.dates, 'model': tag})
        for col, name in enumerate(report.target_names):
            frame[f'z_{name}'] = report.pit[:, col]
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def write_descriptives(panel, output_dir, config_hash):
    described = describe_panel(panel)
    write_csv(described['returns'], Path(output_dir) / 'plot_returns.csv', config_hash)
    cholesky = described['cholesky'].reset_index().rename(columns={'index': 'series'})
    write_csv(cholesky, Path(output_dir) / 'plot_cholesky.csv', config_hash)


# ============================================================================
# Trading tables
# ============================================================================
def sharpe_table(trade_reports, baselines, target_returns):
    """
    Annualized Sharpe ratios: one row per model plus the equal-weights and
    only-first-asset baselines, one column per strategy.
    """
    columns = [MIN_VARIANCE] + [target_label(r) for r in target_returns]
    rows = []
    for tag, by_strategy in trade_reports.items():
        row = {'model': tag}
        for column in columns:
            row[column] = by_strategy[column].sharpe
        rows.append(row)
    for name in (EQUAL_WEIGHTS, ONLY_FIRST):
        if name in baselines:
            row = {'model': name}
            for column in columns:
                row[column] = baselines[name].sharpe
            rows.append(row)
    return pd.DataFrame(rows, columns=['model'] + columns)


def weight_paths(trade_reports, asset_names):
    frames = []
    for tag, by_strategy in trade_reports.items():
        for strategy, report in by_strategy.items():
            frame = pd.DataFrame({'date': report.dates, 'model': tag, 'strategy': strategy,
                                  'constraint_active': report.active.astype(int)})
            for col, name in enumerate(asset_names):
                frame[f'w_{name}'] = report.weights[:, col]
            frame['portfolio_return'] = report.returns
            frames.append(frame)
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


# ============================================================================
# Metadata and verification
# ============================================================================
def package_versions():
    versions = {}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = importlib_metadata.version(name)
        except importlib_metadata.PackageNotFoundError:
            versions[name] = 'unknown'
    return versions


def run_metadata(run_config, config_hash, variable_order=None):
    """Audit record: seeds, seed rule, modelling decisions with magnitudes, versions."""
    return {
        'config_hash': config_hash,
        'master_seed': run_config.seed,
        'seed_rule': SEED_RULE,
        'models': list(run_config.models),
        'holdout': run_config.holdout,
        'mcmc': {
            'iterations': run_config.mcmc.iterations,
            'burn_in': run_config.mcmc.burn_in,
            'thin': run_config.mcmc.thin,
            'max_components': run_config.mcmc.max_components,
        },
        'decisions': {
            'log_square_offset': f'log(eta^2 + {LOG_SQUARE_OFFSET} * sample variance)',
            'pit_clamp': PIT_CLAMP,
            'd0': 'the reported c1 = 1 is read as d0 = 1',
            'variable_order': list(variable_order or []),
            'effective_sample_start': 'p + 1',
            'residuals_mid_sweep': 'current draw',
            'dof_proposal': 'uniform over the prior support',
            'lag_multiplier_update': 'exact full conditional over lags L >= l',
            'sv_innovation_prior': 'Gamma(1/2, 1/2) on varsigma^2',
            'predictive_h': 'simulated innovation',
            'target_constraint': 'inequality; equality branch when binding',
        },
        'versions': package_versions(),
    }


def verify_outputs(output_dir, expected_hash):
    """Check the hash marker of every CSV and JSON file; returns {file name: ok}."""
    results = {}
    for path in sorted(Path(output_dir).iterdir()):
        if path.suffix == '.csv':
            with open(path) as handle:
                first = handle.readline().strip()
            results[path.name] = first == f"{HASH_PREFIX}{expected_hash}"
        elif path.suffix == '.json':
            try:
                with open(path) as handle:
                    payload = json.load(handle)
                results[path.name] = isinstance(payload, dict) and payload.get('config_hash') == expected_hash
            except json.JSONDecodeError:
                results[path.name] = False
    return results

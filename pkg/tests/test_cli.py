import json

import pytest

from cli import main

CONFIG = {
    'schema_version': 1,
    'data': {'path': 'out/simulated_panel.csv', 'date_column': 'date', 'columns': ['y1', 'y2'],
             'targets': ['y1', 'y2'], 'transform': 'none'},
    'models': ['NgVar', 'RwSv'],
    'holdout': 3,
    'mcmc': {'iterations': 30, 'burn_in': 15, 'thin': 1, 'max_components': 5},
    'lag_order': 1,
    'portfolio': {'target_returns': [0.10 / 252]},
    'output_dir': 'out',
    'seed': 4,
    'jobs': 1,
    'simulate': {'family': 'tTvpNg', 'T': 60, 'm': 2, 'seed': 1},
}


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    monkeypatch.delenv('ARCHIVE_DATABASE_URL', raising=False)
    monkeypatch.delenv('MCMC_ENV', raising=False)
    config_path = tmp_path / 'run.json'
    config_path.write_text(json.dumps(CONFIG))
    return tmp_path, config_path


def run(config_path, command, output):
    return main([command, '--config', str(config_path), '--output', str(output)])


def test_full_pipeline(workspace):
    """simulate, forecast, trade and verify succeed in sequence."""
    root, config_path = workspace
    out = root / 'out'
    assert run(config_path, 'simulate', out) == 0
    assert (out / 'simulated_panel.csv').read_text().startswith('# config_hash=')
    assert run(config_path, 'forecast', out) == 0
    for name in ('forecast_scores.csv', 'forecast_pit_tests.csv', 'forecast_bayes_factors.csv',
                 'plot_returns.csv', 'plot_cholesky.csv', 'run_metadata.json'):
        assert (out / name).exists()
    assert run(config_path, 'trade', out) == 0
    assert 'minVar' in (out / 'trade_sharpe.csv').read_text()
    assert run(config_path, 'verify', out) == 0


def test_forecast_is_byte_identical(workspace):
    """Two runs of one configuration write identical tables."""
    root, config_path = workspace
    out = root / 'out'
    assert run(config_path, 'simulate', out) == 0
    second = root / 'second'
    assert run(config_path, 'forecast', out) == 0
    assert run(config_path, 'forecast', second) == 0
    for path in out.glob('forecast_*.csv'):
        assert path.read_bytes() == (second / path.name).read_bytes()


def test_forecast_resumes_from_archive(workspace):
    """A repeated forecast reuses the archive and reproduces the tables."""
    root, config_path = workspace
    out = root / 'out'
    assert run(config_path, 'simulate', out) == 0
    assert run(config_path, 'forecast', out) == 0
    first = (out / 'forecast_scores.csv').read_bytes()
    assert run(config_path, 'forecast', out) == 0
    assert (out / 'forecast_scores.csv').read_bytes() == first


def test_trade_without_forecast(workspace):
    """Trading before forecasting names the missing step and exits 1."""
    root, config_path = workspace
    assert run(config_path, 'trade', root / 'out') == 1


def test_verify_detects_foreign_hash(workspace):
    """A seed override changes the hash and verification fails."""
    root, config_path = workspace
    out = root / 'out'
    assert run(config_path, 'simulate', out) == 0
    assert main(['verify', '--config', str(config_path), '--output', str(out), '--seed', '99']) == 1


def test_invalid_config_exit_code(tmp_path):
    """Validation failures exit with code 1."""
    bad = tmp_path / 'bad.json'
    bad.write_text(json.dumps({'schema_version': 7}))
    assert main(['forecast', '--config', str(bad)]) == 1


def test_simulate_unknown_family(tmp_path):
    """An unknown simulation family exits nonzero before writing anything."""
    config_path = tmp_path / 'run.json'
    config_path.write_text(json.dumps(dict(CONFIG, simulate={'family': 'Garch', 'T': 60})))
    assert run(config_path, 'simulate', tmp_path / 'out') == 1
    assert not (tmp_path / 'out').exists()

"""
CryptoTVP - Configuration Validator
Checks the process environment and loads the run configuration JSON,
collecting every problem before failing.
"""

import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Tuple

from config import Config
from services.model_spec import McmcSettings, ModelFamily, ModelSpec
from utils import hash_config

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
KNOWN_ENVIRONMENTS = ('development', 'testing', 'production')
TRANSFORMS = ('log_returns', 'none')


class ConfigValidationError(ValueError):
    """Invalid run configuration; lists every problem found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("Invalid run configuration: " + "; ".join(self.problems))


def validate_environment():
    """
    Validate the process environment.
    Exits the application if MCMC_ENV names an unknown configuration.
    """
    env = os.getenv('MCMC_ENV', 'production')
    if env not in KNOWN_ENVIRONMENTS:
        error_msg = f"CRITICAL: MCMC_ENV must be one of {', '.join(KNOWN_ENVIRONMENTS)}, got '{env}'"
        logger.critical(error_msg)
        sys.exit(1)

    if env == 'production' and not os.getenv('ARCHIVE_DATABASE_URL'):
        logger.debug("ARCHIVE_DATABASE_URL not set; the archive lives in the output directory.")


@dataclass(frozen=True)
class DataConfig:
    path: Optional[str] = None
    date_column: str = 'date'
    columns: Tuple[str, ...] = ()
    targets: Tuple[str, ...] = ()
    transform: str = 'log_returns'


@dataclass(frozen=True)
class SimulateConfig:
    family: str = 'tTvpNg'
    T: int = 300
    m: int = 3
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    models: Tuple[str, ...] = Config.DEFAULT_MODELS
    holdout: int = Config.DEFAULT_HOLDOUT
    mcmc: McmcSettings = field(default_factory=McmcSettings)
    lag_order: int = 1
    target_returns: Tuple[float, ...] = Config.DEFAULT_TARGET_RETURNS
    output_dir: str = 'output'
    seed: int = 0
    jobs: Optional[int] = None
    simulate: Optional[SimulateConfig] = None
    schema_version: int = SCHEMA_VERSION

    def model_spec(self, tag):
        return ModelSpec(family=tag, p=self.lag_order, mcmc=self.mcmc, seed=self.seed)

    def with_overrides(self, seed=None, jobs=None, output_dir=None):
        changes = {}
        if seed is not None:
            changes['seed'] = int(seed)
        if jobs is not None:
            changes['jobs'] = int(jobs)
        if output_dir is not None:
            changes['output_dir'] = str(output_dir)
        return replace(self, **changes) if changes else self

    def hashed_dict(self):
        """Everything that determines results; jobs and output location are excluded."""
        data = asdict(self)
        data.pop('jobs')
        data.pop('output_dir')
        return data

    @property
    def config_hash(self):
        return hash_config(self.hashed_dict())


def _int(raw, key, problems, minimum=None):
    value = raw.get(key)
    if isinstance(value, bool) or not isinstance(value, int):
        problems.append(f"'{key}' must be an integer")
        return None
    if minimum is not None and value < minimum:
        problems.append(f"'{key}' must be at least {minimum}")
        return None
    return value


def parse_run_config(raw, base_dir=None) -> RunConfig:
    """Validate a decoded configuration mapping."""
    if not isinstance(raw, dict):
        raise ConfigValidationError(["configuration must be a JSON object"])
    problems: List[str] = []

    if raw.get('schema_version') != SCHEMA_VERSION:
        problems.append(f"'schema_version' must be {SCHEMA_VERSION}")

    data_raw = raw.get('data') or {}
    data = None
    if not isinstance(data_raw, dict):
        problems.append("'data' must be an object")
    else:
        columns = data_raw.get('columns') or []
        targets = data_raw.get('targets') or list(columns[:3])
        path = data_raw.get('path')
        if path is not None and base_dir is not None and not os.path.isabs(path):
            path = str(Path(base_dir) / path)
        if data_raw and not columns:
            problems.append("'data.columns' must list at least one value column")
        unknown = [t for t in targets if t not in columns]
        if unknown:
            problems.append(f"'data.targets' not among columns: {', '.join(unknown)}")
        transform = data_raw.get('transform', 'log_returns')
        if transform not in TRANSFORMS:
            problems.append(f"'data.transform' must be one of {', '.join(TRANSFORMS)}")
        data = DataConfig(path, data_raw.get('date_column', 'date'), tuple(columns), tuple(targets), transform)

    models = raw.get('models', list(Config.DEFAULT_MODELS))
    if not isinstance(models, list) or not models:
        problems.append("'models' must be a nonempty list of model family tags")
        models = []
    for tag in models:
        try:
            ModelFamily.parse(tag)
        except ValueError as e:
            problems.append(str(e))
    if len(set(models)) != len(models):
        problems.append("'models' contains duplicates")

    holdout = _int({'holdout': raw.get('holdout', Config.DEFAULT_HOLDOUT)}, 'holdout', problems, 1)
    lag_order = _int({'lag_order': raw.get('lag_order', 1)}, 'lag_order', problems, 1)
    seed = _int({'seed': raw.get('seed', 0)}, 'seed', problems, 0)
    jobs = raw.get('jobs')
    if jobs is not None:
        jobs = _int(raw, 'jobs', problems, 1)

    mcmc_raw = raw.get('mcmc') or {}
    mcmc = McmcSettings()
    if not isinstance(mcmc_raw, dict):
        problems.append("'mcmc' must be an object")
    else:
        values = {
            'iterations': mcmc_raw.get('iterations', Config.DEFAULT_ITERATIONS),
            'burn_in': mcmc_raw.get('burn_in', Config.DEFAULT_BURN_IN),
            'thin': mcmc_raw.get('thin', 1),
            'max_components': mcmc_raw.get('max_components', Config.DEFAULT_MAX_COMPONENTS),
        }
        checked = {key: _int(values, key, problems, 0 if key == 'burn_in' else 1) for key in values}
        if None not in checked.values():
            if checked['burn_in'] >= checked['iterations']:
                problems.append("'mcmc.burn_in' must be smaller than 'mcmc.iterations'")
            else:
                mcmc = McmcSettings(**checked)

    portfolio = raw.get('portfolio') or {}
    target_returns = portfolio.get('target_returns', list(Config.DEFAULT_TARGET_RETURNS))
    if not isinstance(target_returns, list) or not all(
            isinstance(r, (int, float)) and not isinstance(r, bool) for r in target_returns):
        problems.append("'portfolio.target_returns' must be a list of numbers")
        target_returns = []

    simulate = None
    sim_raw = raw.get('simulate')
    if sim_raw is not None:
        if not isinstance(sim_raw, dict):
            problems.append("'simulate' must be an object")
        else:
            try:
                family = ModelFamily.parse(sim_raw.get('family', 'tTvpNg'))
                if family.univariate:
                    problems.append(f"'simulate.family' {family.value} is not a generative VAR family")
            except ValueError as e:
                problems.append(str(e))
            sim_T = _int({'simulate.T': sim_raw.get('T', 300)}, 'simulate.T', problems, 50)
            sim_m = _int({'simulate.m': sim_raw.get('m', 3)}, 'simulate.m', problems, 1)
            sim_seed = _int({'simulate.seed': sim_raw.get('seed', 0)}, 'simulate.seed', problems, 0)
            simulate = SimulateConfig(sim_raw.get('family', 'tTvpNg'), sim_T, sim_m, sim_seed)

    if problems:
        for problem in problems:
            logger.error(f"Config problem: {problem}")
        raise ConfigValidationError(problems)

    return RunConfig(
        data=data,
        models=tuple(models),
        holdout=holdout,
        mcmc=mcmc,
        lag_order=lag_order,
        target_returns=tuple(float(r) for r in target_returns),
        output_dir=str(raw.get('output_dir', 'output')),
        seed=seed,
        jobs=jobs,
        simulate=simulate,
    )


def load_run_config(path) -> RunConfig:
    """Read and validate a run configuration file; relative data paths resolve against it."""
    try:
        with open(path) as handle:
            raw = json.load(handle)
    except FileNotFoundError:
        raise ConfigValidationError([f"configuration file {path} not found"]) from None
    except json.JSONDecodeError as e:
        raise ConfigValidationError([f"configuration file {path} is not valid JSON: {e}"]) from e
    return parse_run_config(raw, base_dir=Path(path).resolve().parent)

"""
CryptoTVP - Application Configuration
Defines base, development, testing and production configurations.
Process-level values are loaded from environment variables; experiment
settings live in the run configuration JSON.
"""

import os


class Config:
    """Base configuration class."""

    # Forecast archive; the CLI points relative sqlite paths at the output directory
    SQLALCHEMY_DATABASE_URI = os.getenv('ARCHIVE_DATABASE_URL')
    SQLALCHEMY_TRACK_MODIFICATIONS = False

    # Logging
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
    LOG_FORMAT = '[%(asctime)s] %(levelname)s in %(module)s: %(message)s'

    # Parallelism cap for (model, window) jobs
    DEFAULT_JOBS = int(os.getenv('DEFAULT_JOBS', os.cpu_count() or 1))

    # Estimation and evaluation defaults
    DEFAULT_ITERATIONS = 30000
    DEFAULT_BURN_IN = 15000
    DEFAULT_MAX_COMPONENTS = 1000
    DEFAULT_HOLDOUT = 160
    ANNUALIZATION = 252
    DEFAULT_TARGET_RETURNS = (0.10 / 252, 0.15 / 252, 0.30 / 252)
    DEFAULT_MODELS = ('tTvpNg', 'TvpNg', 'TvpFlat', 'NgVar', 'MinnVar', 'SsvsVar', 'RwSv', 'ArSv')


class DevelopmentConfig(Config):
    """Development configuration."""
    DEBUG = True
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'DEBUG')


class TestingConfig(Config):
    """Testing configuration."""
    TESTING = True
    SQLALCHEMY_DATABASE_URI = 'sqlite:///:memory:'
    DEFAULT_JOBS = 1


class ProductionConfig(Config):
    """Production configuration."""
    DEBUG = False


config = {
    'development': DevelopmentConfig,
    'testing': TestingConfig,
    'production': ProductionConfig,
    'default': ProductionConfig
}

"""
CryptoTVP - Application Entry Point
Builds the Flask application that hosts the forecast archive and the
command-line interface. Loads configuration from environment variables.
"""

# Load environment variables before anything else
from dotenv import load_dotenv
load_dotenv()

import logging
import os

from flask import Flask

from config import config
from extensions import db


def configure_logging(app):
    """Send every log record to stdout with a single formatter."""
    formatter = logging.Formatter(app.config['LOG_FORMAT'])
    handler = logging.StreamHandler()
    handler.setFormatter(formatter)
    level = getattr(logging, str(app.config['LOG_LEVEL']).upper(), logging.INFO)
    handler.setLevel(level)

    # Remove existing handlers to avoid duplication
    root = logging.getLogger()
    root.handlers = [handler]
    root.setLevel(level)
    app.logger.handlers = []
    app.logger.propagate = True
    app.logger.setLevel(level)


def create_app(config_name=None, database_uri=None):
    """
    Application factory.
    config_name defaults to MCMC_ENV; database_uri overrides the configured archive.
    """
    app = Flask(__name__)
    app.config.from_object(config[config_name or os.getenv('MCMC_ENV', 'production')])
    if database_uri:
        app.config['SQLALCHEMY_DATABASE_URI'] = database_uri
    if not app.config.get('SQLALCHEMY_DATABASE_URI'):
        app.config['SQLALCHEMY_DATABASE_URI'] = 'sqlite:///archive.db'

    configure_logging(app)
    db.init_app(app)

    # Create tables on startup if they don't exist
    with app.app_context():
        try:
            db.create_all()
            app.logger.debug("Archive tables verified.")
        except Exception as e:
            app.logger.error(f"Error creating archive tables: {e}")
            raise

    return app

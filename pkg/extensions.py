"""
CryptoTVP - Flask Extension Instances
Imported by app.py, models.py and the services to avoid circular imports.
"""

from flask_sqlalchemy import SQLAlchemy

db = SQLAlchemy()

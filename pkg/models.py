"""
CryptoTVP - Database Models
Forecast archive used to resume interrupted runs and to feed the trading
backtest without re-running chains.
"""

import json
from datetime import datetime, timezone

from extensions import db


class RunRecord(db.Model):
    """
    One experiment run, keyed by the hash of its configuration.
    Holds the run metadata (seeds, decisions, versions) as JSON.
    """

    __tablename__ = 'runs'

    config_hash = db.Column(db.String(64), primary_key=True)
    created_at = db.Column(db.DateTime, default=lambda: datetime.now(timezone.utc))
    seed = db.Column(db.BigInteger, nullable=False)
    metadata_json = db.Column(db.Text, nullable=True)

    forecasts = db.relationship('ForecastArchive', backref='run', lazy='dynamic',
                                cascade='all, delete-orphan')

    def __repr__(self):
        return f'<RunRecord {self.config_hash[:12]}>'

    @property
    def run_metadata(self):
        return json.loads(self.metadata_json) if self.metadata_json else {}

    def to_dict(self):
        return {
            'config_hash': self.config_hash,
            'created_at': self.created_at.isoformat() if self.created_at else None,
            'seed': self.seed,
            'metadata': self.run_metadata,
        }


class ForecastArchive(db.Model):
    """
    Target-marginal predictive mixture of one (model, window) job.
    Mixture arrays are stored as a compressed npz blob.
    """

    __tablename__ = 'forecast_archive'

    id = db.Column(db.Integer, primary_key=True, autoincrement=True)
    config_hash = db.Column(db.String(64), db.ForeignKey('runs.config_hash', ondelete='CASCADE'),
                            nullable=False, index=True)
    model_tag = db.Column(db.String(32), nullable=False)
    window_index = db.Column(db.Integer, nullable=False)
    forecast_date = db.Column(db.String(10), nullable=False)
    seed = db.Column(db.String(20), nullable=False)
    names_json = db.Column(db.Text, nullable=False)
    realized_json = db.Column(db.Text, nullable=False)
    mixture_blob = db.Column(db.LargeBinary, nullable=False)
    created_at = db.Column(db.DateTime, default=lambda: datetime.now(timezone.utc))

    # One archived density per run, model and window
    __table_args__ = (
        db.UniqueConstraint('config_hash', 'model_tag', 'window_index', name='unique_forecast_per_window'),
        db.Index('idx_run_model', 'config_hash', 'model_tag'),
    )

    def __repr__(self):
        return f'<ForecastArchive {self.model_tag} window {self.window_index}>'

    def to_dict(self):
        return {
            'config_hash': self.config_hash,
            'model_tag': self.model_tag,
            'window_index': self.window_index,
            'forecast_date': self.forecast_date,
            'seed': int(self.seed),
            'names': json.loads(self.names_json),
            'realized': json.loads(self.realized_json),
        }

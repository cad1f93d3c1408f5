"""
CryptoTVP - Archive Service
Persists forecast records per (run, model, window) so interrupted runs
resume where they stopped and trading reads densities without re-estimation.
"""

import io
import json
import logging

import numpy as np
from sqlalchemy.exc import SQLAlchemyError

from extensions import db
from kernels import GaussianMixture
from models import ForecastArchive, RunRecord
from services.evaluation_service import ForecastRecord
from services.model_service import PredictiveDensity
from utils import stable_json_dumps

logger = logging.getLogger(__name__)


def _pack_mixture(mixture: GaussianMixture) -> bytes:
    buffer = io.BytesIO()
    np.savez_compressed(buffer, weights=mixture.weights, means=mixture.means, covariances=mixture.covariances)
    return buffer.getvalue()


def _unpack_mixture(blob: bytes) -> GaussianMixture:
    with np.load(io.BytesIO(blob)) as data:
        return GaussianMixture(data['weights'], data['means'], data['covariances'])


class ArchiveService:
    """Service class for the forecast archive."""

    @staticmethod
    def ensure_run(config_hash, seed, metadata=None):
        """Create the run row if missing; returns it."""
        run = db.session.get(RunRecord, config_hash)
        if run is None:
            run = RunRecord(config_hash=config_hash, seed=int(seed) % (2 ** 63),
                            metadata_json=stable_json_dumps(metadata or {}))
            db.session.add(run)
            db.session.commit()
            logger.info(f"Registered run {config_hash[:12]}")
        elif metadata is not None:
            run.metadata_json = stable_json_dumps(metadata)
            db.session.commit()
        return run

    @staticmethod
    def completed_windows(config_hash, model_tag):
        rows = (db.session.query(ForecastArchive.window_index)
                .filter_by(config_hash=config_hash, model_tag=model_tag).all())
        return {row[0] for row in rows}

    @staticmethod
    def save_record(config_hash, record: ForecastRecord):
        """Store one record; a duplicate (run, model, window) is rolled back and reported."""
        entry = ForecastArchive(
            config_hash=config_hash,
            model_tag=record.model_tag,
            window_index=record.window_index,
            forecast_date=record.forecast_date,
            seed=str(record.seed),
            names_json=json.dumps(list(record.density.names)),
            realized_json=json.dumps(record.realized.tolist()),
            mixture_blob=_pack_mixture(record.density.mixture),
        )
        try:
            db.session.add(entry)
            db.session.commit()
        except SQLAlchemyError as e:
            db.session.rollback()
            logger.error(f"Error archiving {record.model_tag} window {record.window_index}: {e}", exc_info=True)
            raise
        return entry

    @staticmethod
    def load_records(config_hash, model_tag):
        """Archived records of one model ordered by window."""
        rows = (ForecastArchive.query.filter_by(config_hash=config_hash, model_tag=model_tag)
                .order_by(ForecastArchive.window_index).all())
        records = []
        for row in rows:
            density = PredictiveDensity(_unpack_mixture(row.mixture_blob), row.model_tag,
                                        tuple(json.loads(row.names_json)), row.forecast_date)
            records.append(ForecastRecord(row.window_index, row.forecast_date, row.model_tag, density,
                                          np.array(json.loads(row.realized_json)), int(row.seed)))
        return records

    @staticmethod
    def has_records(config_hash, model_tag=None):
        query = ForecastArchive.query.filter_by(config_hash=config_hash)
        if model_tag is not None:
            query = query.filter_by(model_tag=model_tag)
        return query.first() is not None

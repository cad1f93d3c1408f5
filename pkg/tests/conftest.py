import pytest
import sys
import os

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app import create_app
from extensions import db
from services.data_service import simulate_dgp
from services.model_spec import McmcSettings, ModelSpec
from utils import make_generator

TINY_MCMC = McmcSettings(iterations=40, burn_in=20, thin=1, max_components=10)


@pytest.fixture
def test_app():
    app = create_app('testing', database_uri='sqlite:///:memory:')

    with app.app_context():
        db.create_all()
        yield app
        db.session.remove()
        db.drop_all()


@pytest.fixture
def runner(test_app):
    return test_app.test_cli_runner()


@pytest.fixture
def db_session(test_app):
    yield db.session


@pytest.fixture
def rng():
    return make_generator(20240601)


@pytest.fixture(scope='session')
def small_panel():
    """Two-series t-TVP panel long enough for a handful of windows."""
    spec = ModelSpec(family='tTvpNg', seed=7)
    panel, _ = simulate_dgp(spec, 80, seed=7, m=2)
    return panel


@pytest.fixture
def tiny_spec():
    def build(family='tTvpNg', **changes):
        return ModelSpec(family=family, mcmc=TINY_MCMC, seed=11, **changes)
    return build

import numpy as np
import pytest

from kernels import GaussianMixture
from services.evaluation_service import ForecastRecord
from services.model_service import PredictiveDensity
from services.portfolio_service import (
    EQUAL_WEIGHTS,
    MIN_VARIANCE,
    ONLY_FIRST,
    WeightVector,
    backtest,
    baseline_weights,
    min_variance_weights,
    sharpe_ratio,
    strategy_weights,
    target_label,
    target_mv_weights,
)


def random_problem(rng, n=3):
    A = rng.standard_normal((n, n))
    P = A @ A.T + 0.1 * np.eye(n)
    mu = rng.normal(0.0, 0.01, n)
    return P, mu


def kkt_solution(P, mu=None, r_star=None):
    """Equality-constrained quadratic program solved through its KKT system."""
    n = P.shape[0]
    rows = [np.ones(n)] if mu is None else [np.ones(n), mu]
    rhs = [1.0] if mu is None else [1.0, r_star]
    C = np.array(rows)
    K = np.block([[2 * P, C.T], [C, np.zeros((len(rows), len(rows)))]])
    sol = np.linalg.solve(K, np.concatenate([np.zeros(n), rhs]))
    return sol[:n]


def test_min_variance_matches_kkt(rng):
    """Closed-form minimum-variance weights equal the QP solution."""
    for _ in range(100):
        P, _ = random_problem(rng)
        w = min_variance_weights(P).weights
        assert np.allclose(w, kkt_solution(P), atol=1e-8)
        assert abs(w.sum() - 1.0) <= 1e-10


def test_target_weights_match_kkt_when_active(rng):
    """A binding return target reproduces the two-constraint QP."""
    for _ in range(100):
        P, mu = random_problem(rng)
        base = min_variance_weights(P).weights
        r_star = base @ mu + 0.01
        result = target_mv_weights(P, mu, r_star)
        assert result.active
        assert np.allclose(result.weights, kkt_solution(P, mu, r_star), atol=1e-8)
        assert abs(result.weights @ mu - r_star) <= 1e-10
        assert abs(result.weights.sum() - 1.0) <= 1e-10


def test_min_variance_scale_invariant(rng):
    """Rescaling the covariance leaves the minimum-variance weights unchanged."""
    for _ in range(20):
        P, _ = random_problem(rng, n=4)
        c = rng.uniform(0.01, 100.0)
        assert np.allclose(min_variance_weights(c * P).weights, min_variance_weights(P).weights, atol=1e-10)


def test_min_variance_beats_baselines(rng):
    """No baseline portfolio has lower predicted variance than the minimum-variance one."""
    for _ in range(50):
        P, _ = random_problem(rng, n=3)
        w = min_variance_weights(P).weights
        best = w @ P @ w
        baselines = [np.full(3, 1.0 / 3)] + [np.eye(3)[j] for j in range(3)]
        for b in baselines:
            assert best <= b @ P @ b + 1e-12


def test_target_weights_slack():
    """A target already met by minimum variance leaves the constraint slack."""
    P = np.diag([1.0, 2.0])
    mu = np.array([0.05, 0.05])
    result = target_mv_weights(P, mu, 0.01)
    assert not result.active
    assert np.allclose(result.weights, min_variance_weights(P).weights)


def test_target_weights_degenerate_frontier():
    """Equal expected returns give a degenerate frontier and fall back to minimum variance."""
    P = np.eye(2)
    mu = np.array([0.01, 0.01])
    result = target_mv_weights(P, mu, 0.02)
    assert not result.active
    assert np.allclose(result.weights, [0.5, 0.5])


def test_target_label():
    """Labels show the annualized target."""
    assert target_label(0.10 / 252) == 'targetMV_0.10'


def test_weight_vector_budget():
    """Weights must sum to one."""
    with pytest.raises(ValueError):
        WeightVector('2020-01-01', 'x', np.array([0.5, 0.6]))


def test_only_first_asset_sharpe(rng):
    """The only-first-asset baseline reproduces the asset's own Sharpe ratio."""
    returns = rng.normal(0.001, 0.02, (50, 3))
    dates = [str(np.datetime64('2020-01-01') + t) for t in range(50)]
    report = backtest(baseline_weights(dates, 3, ONLY_FIRST), returns, dates)
    assert abs(report.sharpe - sharpe_ratio(returns[:, 0])) <= 1e-12
    assert report.strategy == ONLY_FIRST


def test_equal_weights_and_unknown_baseline():
    """Equal weights split wealth evenly; unknown baselines are refused."""
    weights = baseline_weights(['2020-01-01'], 4, EQUAL_WEIGHTS)
    assert np.allclose(weights[0].weights, 0.25)
    with pytest.raises(ValueError):
        baseline_weights(['2020-01-01'], 4, 'leveraged')


def test_sharpe_ratio_formula():
    """Annualized mean over sample standard deviation."""
    r = np.array([0.01, -0.005, 0.02, 0.0])
    assert np.isclose(sharpe_ratio(r), r.mean() / r.std(ddof=1) * np.sqrt(252))
    with pytest.raises(ValueError, match='degenerate'):
        sharpe_ratio(np.full(5, 0.01))


def test_constant_portfolio_returns_are_degenerate():
    """Equal weights on identical constant returns leave no variation to scale by."""
    dates = [str(np.datetime64('2020-01-01') + t) for t in range(160)]
    with pytest.raises(ValueError, match='degenerate return series'):
        backtest(baseline_weights(dates, 3, EQUAL_WEIGHTS), np.full((160, 3), 0.01), dates)
    with pytest.raises(ValueError, match='degenerate'):
        sharpe_ratio(np.zeros(10))


def test_backtest_misaligned():
    """Weights and returns must cover the same dates."""
    weights = baseline_weights(['2020-01-01', '2020-01-02'], 2, EQUAL_WEIGHTS)
    with pytest.raises(ValueError, match='misaligned'):
        backtest(weights, np.zeros((2, 2)), ['2020-01-02', '2020-01-03'])


def test_strategy_weights_from_records(rng):
    """Every record yields a min-variance weight and one weight per target."""
    records = []
    for t in range(3):
        P, mu = random_problem(rng, 2)
        date = str(np.datetime64('2020-01-01') + t)
        density = PredictiveDensity(GaussianMixture(np.ones(1), mu[None], P[None]), 'TvpNg', ('a', 'b'), date)
        records.append(ForecastRecord(t, date, 'TvpNg', density, rng.normal(0, 0.01, 2)))
    paths = strategy_weights(records, [0.10 / 252, 0.30 / 252])
    assert set(paths) == {MIN_VARIANCE, 'targetMV_0.10', 'targetMV_0.30'}
    assert all(len(v) == 3 for v in paths.values())
    realized = np.array([r.realized for r in records])
    report = backtest(paths[MIN_VARIANCE], realized, [r.forecast_date for r in records])
    assert report.returns.shape == (3,)

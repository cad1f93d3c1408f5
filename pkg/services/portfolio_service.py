"""
CryptoTVP - Portfolio Service
Closed-form minimum-variance and target mean-variance weights from the
predictive moments of each hold-out date, baselines, and Sharpe backtests.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from kernels import safe_cholesky

logger = logging.getLogger(__name__)

ANNUALIZATION = 252
BUDGET_TOLERANCE = 1e-10
FRONTIER_TOLERANCE = 1e-12
DEGENERATE_TOLERANCE = 1e-12

MIN_VARIANCE = "minVar"
EQUAL_WEIGHTS = "equalWeights"
ONLY_FIRST = "onlyBTC"


def target_label(r_star):
    """Strategy label of a daily target return, e.g. 0.10/252 -> 'targetMV_0.10'."""
    return f"targetMV_{r_star * ANNUALIZATION:.2f}"


@dataclass(frozen=True)
class WeightVector:
    date: str
    model_tag: str
    weights: np.ndarray
    strategy: str = MIN_VARIANCE
    active: bool = False

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if abs(weights.sum() - 1.0) > BUDGET_TOLERANCE:
            raise ValueError(f"weights sum to {weights.sum():.12f}, not 1")
        object.__setattr__(self, "weights", weights)


@dataclass
class TradeReport:
    strategy: str
    model_tag: str
    dates: List[str]
    returns: np.ndarray
    sharpe: float
    weights: np.ndarray
    active: np.ndarray


def _solve(P, rhs):
    chol = safe_cholesky(P, "predictive covariance")
    return np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))


def min_variance_weights(P, date="", model_tag="") -> WeightVector:
    """w = P^-1 1 / (1' P^-1 1)."""
    P = np.asarray(P, dtype=float)
    raw = _solve(P, np.ones(P.shape[0]))
    return WeightVector(date, model_tag, raw / raw.sum(), MIN_VARIANCE, False)


def target_mv_weights(P, mu, r_star, date="", model_tag="") -> WeightVector:
    """
    Minimum variance subject to 1'w = 1 and w'mu >= r_star. When the
    min-variance portfolio already meets the target the constraint is slack.
    """
    P = np.asarray(P, dtype=float)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    label = target_label(r_star)
    base = min_variance_weights(P, date, model_tag)
    if base.weights @ mu >= r_star:
        return WeightVector(date, model_tag, base.weights, label, False)

    ones = np.ones(P.shape[0])
    inv_one = _solve(P, ones)
    inv_mu = _solve(P, mu)
    A = ones @ inv_one
    B = ones @ inv_mu
    C = mu @ inv_mu
    D = A * C - B ** 2
    if abs(D) <= FRONTIER_TOLERANCE * max(abs(A * C), 1e-300):
        logger.warning(f"Degenerate frontier on {date} ({model_tag}); using minimum-variance weights")
        return WeightVector(date, model_tag, base.weights, label, False)

    a = (C - B * r_star) / D
    b = (A * r_star - B) / D
    weights = a * inv_one + b * inv_mu
    # absorb rounding in the budget constraint
    weights = weights / weights.sum()
    return WeightVector(date, model_tag, weights, label, True)


def strategy_weights(records, target_returns: Sequence[float]) -> Dict[str, List[WeightVector]]:
    """Weight paths of every strategy from the predictive mixture moments of each record."""
    paths = {MIN_VARIANCE: []}
    for r_star in target_returns:
        paths[target_label(r_star)] = []
    for record in records:
        P = record.density.covariance()
        mu = record.density.mean()
        paths[MIN_VARIANCE].append(min_variance_weights(P, record.forecast_date, record.model_tag))
        for r_star in target_returns:
            paths[target_label(r_star)].append(target_mv_weights(P, mu, r_star, record.forecast_date,
                                                                 record.model_tag))
    return paths


def baseline_weights(dates, n_assets, strategy) -> List[WeightVector]:
    """Equal weights, or all wealth in the first target asset."""
    if strategy == EQUAL_WEIGHTS:
        w = np.full(n_assets, 1.0 / n_assets)
    elif strategy == ONLY_FIRST:
        w = np.zeros(n_assets)
        w[0] = 1.0
    else:
        raise ValueError(f"unknown baseline strategy {strategy}")
    return [WeightVector(str(d), "baseline", w, strategy) for d in dates]


def sharpe_ratio(returns, annualization=ANNUALIZATION):
    """mean / sd (ddof=1) scaled by sqrt(annualization); zero risk-free rate."""
    returns = np.asarray(returns, dtype=float)
    if returns.shape[0] < 2:
        raise ValueError("degenerate return series: need at least two returns")
    sd = returns.std(ddof=1)
    scale = max(np.abs(returns).max(), 1e-300)
    if not sd > DEGENERATE_TOLERANCE * scale:
        raise ValueError("degenerate return series")
    return float(returns.mean() / sd * np.sqrt(annualization))


def backtest(weights: Sequence[WeightVector], realized, dates, strategy: Optional[str] = None) -> TradeReport:
    """
    Daily portfolio returns w_t' r_t, with w_t built from the density predicted
    for date t, and their annualized Sharpe ratio.
    """
    realized = np.asarray(realized, dtype=float)
    dates = [str(d) for d in dates]
    if len(weights) != len(dates) or [w.date for w in weights] != dates:
        raise ValueError("weight and return dates are misaligned")
    W = np.array([w.weights for w in weights])
    if W.shape != realized.shape:
        raise ValueError(f"weights {W.shape} and returns {realized.shape} differ in shape")
    port = np.einsum("tj,tj->t", W, realized)
    strategy = strategy or (weights[0].strategy if weights else "")
    model_tag = weights[0].model_tag if weights else ""
    return TradeReport(strategy, model_tag, dates, port, sharpe_ratio(port), W,
                       np.array([w.active for w in weights]))

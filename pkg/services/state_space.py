"""
CryptoTVP - State Space
Triangular equation-by-equation regression system of the VAR and the
coefficient samplers: forward-filtering backward-sampling of the normalized
random-walk states and the conjugate draw of baselines and scale roots in
the non-centered parameterization.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from kernels import LOG_2PI, NumericalError, safe_cholesky, sample_mvn_precision

logger = logging.getLogger(__name__)

EIGEN_TOLERANCE = 1e-8


@dataclass(frozen=True)
class EquationSystem:
    """
    Regression of equation i (1-based): y_it = beta_it' z_it + eta_it over the
    effective sample t = p+1..T, with z_it = [x_t', -eps_1t, ..., -eps_{i-1,t}]'.
    """

    index: int
    regressors: np.ndarray
    response: np.ndarray
    m: int
    p: int

    @property
    def mp(self):
        return self.m * self.p

    @property
    def k(self):
        return self.regressors.shape[1]

    @property
    def T(self):
        return self.regressors.shape[0]

    @property
    def lags(self):
        return self.regressors[:, :self.mp]


@dataclass
class CoefficientState:
    """
    Non-centered coefficient state of one equation. beta_it = beta0 + sqrt_theta * paths[t].
    When only terminal states are kept, paths holds a single row.
    """

    beta0: np.ndarray
    sqrt_theta: np.ndarray
    paths: np.ndarray

    @classmethod
    def constant(cls, beta0, T):
        beta0 = np.asarray(beta0, dtype=float)
        return cls(beta0, np.zeros_like(beta0), np.zeros((T, beta0.shape[0])))

    @property
    def k(self):
        return self.beta0.shape[0]

    def implied_path(self):
        return self.beta0 + self.paths * self.sqrt_theta

    def terminal(self):
        """beta_iT, the last coefficient vector of the path."""
        return self.beta0 + self.paths[-1] * self.sqrt_theta

    def flipped(self, mask):
        """Jointly negate (sqrt_theta_j, paths[:, j]) for j in mask; beta path unchanged."""
        sign = np.where(mask, -1.0, 1.0)
        return CoefficientState(self.beta0.copy(), self.sqrt_theta * sign, self.paths * sign)

    def snapshot(self, keep_paths=True):
        paths = self.paths if keep_paths else self.paths[-1:].copy()
        return CoefficientState(self.beta0, self.sqrt_theta, paths)


# ============================================================================
# Equation system
# ============================================================================
def lagged_design(values, p):
    """Stack lags 1..p of a T x m matrix: rows t = p+1..T of [y_{t-1}', ..., y_{t-p}']."""
    values = np.asarray(values, dtype=float)
    T = values.shape[0]
    if T <= p:
        raise ValueError(f"panel length {T} must exceed lag order {p}")
    return np.hstack([values[p - lag:T - lag] for lag in range(1, p + 1)])


def build_equation_system(panel, p, i, residuals=None) -> EquationSystem:
    """Equation i of the triangularized VAR; residuals holds the i-1 preceding reduced-form shocks."""
    values = panel.values if hasattr(panel, "values") else np.asarray(panel, dtype=float)
    T, m = values.shape
    if not 1 <= i <= m:
        raise ValueError(f"equation index {i} outside 1..{m}")
    X = lagged_design(values, p)

    if residuals is None:
        residuals = np.zeros((0, T - p))
    residuals = np.atleast_2d(np.asarray(residuals, dtype=float))
    if residuals.size == 0:
        residuals = residuals.reshape(0, T - p)
    if residuals.shape != (i - 1, T - p):
        raise ValueError(f"equation {i} needs {i - 1} residual series of length {T - p}, "
                         f"got shape {residuals.shape}")

    return equation_from_design(X, values[p:, i - 1], i, residuals, m, p)


def equation_from_design(X, response, i, residuals, m, p) -> EquationSystem:
    """Equation i from a precomputed lag design; residuals is (i-1) x (T-p)."""
    Z = np.hstack([X, -np.asarray(residuals, dtype=float).reshape(i - 1, X.shape[0]).T])
    return EquationSystem(i, Z, np.array(response, dtype=float), m, p)


def fitted_values(system: EquationSystem, state: CoefficientState):
    if state.paths.shape[0] == system.T:
        return np.einsum("tk,tk->t", system.regressors, state.implied_path())
    return system.regressors @ state.terminal()


def reduced_form_residuals(system: EquationSystem, state: CoefficientState):
    """eps_it = y_it - a_it' x_t, the shock later equations condition on."""
    mp = system.mp
    if state.paths.shape[0] == system.T:
        a = state.implied_path()[:, :mp]
        return system.response - np.einsum("tk,tk->t", system.lags, a)
    return system.response - system.lags @ state.terminal()[:mp]


def equation_loglik(system: EquationSystem, state: CoefficientState, obs_variances):
    """Gaussian log likelihood of y_i given the coefficient path and variances."""
    resid = system.response - fitted_values(system, state)
    var = np.asarray(obs_variances, dtype=float)
    return float(-0.5 * np.sum(LOG_2PI + np.log(var) + resid ** 2 / var))


# ============================================================================
# Forward-filtering backward-sampling
# ============================================================================
def _symmetric_root(cov, context):
    """Square-root factor of a PSD matrix via eigh; tiny negative eigenvalues are clipped."""
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    floor = -EIGEN_TOLERANCE * max(np.abs(vals).max(), 1.0)
    if vals.min() < floor:
        raise NumericalError(f"{context} lost positive semi-definiteness (min eigenvalue {vals.min():.3e})")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def kalman_filter(loadings, target, obs_variances):
    """
    Filter beta_t = beta_{t-1} + u_t, u_t ~ N(0, I), beta_0 = 0, with scalar
    observations target_t = loadings_t' beta_t + N(0, obs_variances_t).
    Returns filtered means (T, k) and covariances (T, k, k).
    """
    T, k = loadings.shape
    means = np.empty((T, k))
    covs = np.empty((T, k, k))
    a = np.zeros(k)
    P = np.zeros((k, k))
    eye = np.eye(k)
    for t in range(T):
        P = P + eye
        f = loadings[t]
        Pf = P @ f
        S = f @ Pf + obs_variances[t]
        gain = Pf / S
        a = a + gain * (target[t] - f @ a)
        P = P - np.outer(gain, Pf)
        P = 0.5 * (P + P.T)
        means[t] = a
        covs[t] = P
    return means, covs


def ffbs_draw(system: EquationSystem, sqrt_theta, baseline_fit, obs_variances, rng):
    """
    Joint draw of the normalized states beta~_1..T given the non-centered
    observation equation baseline_fit_t = (sqrt_theta * z_t)' beta~_t + eta_t.
    """
    var = np.asarray(obs_variances, dtype=float)
    if var.shape[0] != system.T or np.any(var <= 0) or not np.all(np.isfinite(var)):
        raise ValueError("observation variances must be positive, finite and match the sample length")
    sqrt_theta = np.asarray(sqrt_theta, dtype=float)
    if sqrt_theta.shape[0] != system.k:
        raise ValueError(f"expected {system.k} scale roots, got {sqrt_theta.shape[0]}")

    loadings = system.regressors * sqrt_theta
    means, covs = kalman_filter(loadings, np.asarray(baseline_fit, dtype=float), var)

    T, k = means.shape
    draws = np.empty((T, k))
    root = _symmetric_root(covs[-1], f"filtered covariance of equation {system.index}")
    draws[-1] = means[-1] + root @ rng.standard_normal(k)
    for t in range(T - 2, -1, -1):
        # with identity transition and innovation, J = P (P + I)^-1 is also the smoothing covariance
        vals, vecs = np.linalg.eigh(covs[t])
        vals = np.clip(vals, 0.0, None)
        shrink = vals / (vals + 1.0)
        J = (vecs * shrink) @ vecs.T
        mean = means[t] + J @ (draws[t + 1] - means[t])
        draws[t] = mean + vecs @ (np.sqrt(shrink) * rng.standard_normal(k))
    return draws


# ============================================================================
# Baselines and scale roots
# ============================================================================
def _augmented_design(system, paths):
    if paths is None:
        return system.regressors
    return np.hstack([system.regressors, paths * system.regressors])


def static_posterior(system: EquationSystem, paths, obs_variances, prior_variances, prior_means=None):
    """
    Gaussian posterior (precision, linear term) of the stacked vector
    (beta0, sqrt_theta) in the regression on [z_t', (beta~_t * z_t)'].
    paths=None drops the scale roots (constant-coefficient families).
    """
    W = _augmented_design(system, paths)
    tau2 = np.asarray(prior_variances, dtype=float)
    if tau2.shape[0] != W.shape[1]:
        raise ValueError(f"expected {W.shape[1]} prior variances, got {tau2.shape[0]}")
    if np.any(tau2 <= 0):
        raise ValueError("prior variances must be positive")
    prior_mean = np.zeros_like(tau2) if prior_means is None else np.asarray(prior_means, dtype=float)

    weights = 1.0 / np.asarray(obs_variances, dtype=float)
    Ww = W * weights[:, None]
    precision = W.T @ Ww + np.diag(1.0 / tau2)
    linear = Ww.T @ system.response + prior_mean / tau2
    return precision, linear


def static_moments(system, paths, obs_variances, prior_variances, prior_means=None):
    """Posterior mean and covariance of (beta0, sqrt_theta)."""
    precision, linear = static_posterior(system, paths, obs_variances, prior_variances, prior_means)
    chol = safe_cholesky(precision, f"static posterior of equation {system.index}")
    cov = np.linalg.solve(chol.T, np.linalg.solve(chol, np.eye(len(linear))))
    return cov @ linear, 0.5 * (cov + cov.T)


def draw_static_and_scales(system: EquationSystem, paths: Optional[np.ndarray], obs_variances,
                           prior_variances, rng, prior_means=None):
    """Joint conjugate draw of (beta0, sqrt_theta); returns sqrt_theta = 0 when paths is None."""
    precision, linear = static_posterior(system, paths, obs_variances, prior_variances, prior_means)
    draw, _ = sample_mvn_precision(precision, linear, rng, f"static posterior of equation {system.index}")
    k = system.k
    if paths is None:
        return draw, np.zeros(k)
    return draw[:k], draw[k:]

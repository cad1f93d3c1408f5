"""
CryptoTVP - Shrinkage Priors
Prior hierarchies and their Gibbs/MH updates:
- Normal-Gamma: local scales, lag-wise multiplicative globals, covariance-block global
- SSVS spike-and-slab with OLS-scaled component standard deviations
- Hierarchical Minnesota with tightness estimated by random-walk MH
Coefficient vectors follow the equation layout: m*p lag coefficients (lag 1
first) followed by the i-1 covariance coefficients of equation i.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy import special, stats

from kernels import sample_gig
from services.state_space import build_equation_system, lagged_design
from services.volatility import TARGET_ACCEPTANCE

logger = logging.getLogger(__name__)

COEF_FLOOR = 1e-16
RIDGE_PENALTY = 1e-6


def lag_of_position(m, p, k):
    """Lag (1..p) of each coefficient position; 0 marks covariance coefficients."""
    lags = np.zeros(k, dtype=int)
    lags[:m * p] = np.repeat(np.arange(1, p + 1), m)
    return lags


# ============================================================================
# Normal-Gamma
# ============================================================================
@dataclass
class NgState:
    """
    Normal-Gamma scales. tau2_theta is empty for constant-coefficient
    families. lam is always recomputed from pi.
    """

    m: int
    p: int
    tau2_beta: List[np.ndarray]
    tau2_theta: List[np.ndarray]
    pi: np.ndarray
    varrho: float
    time_varying: bool = True

    @classmethod
    def initial(cls, m, p, time_varying=True):
        ks = [m * p + i for i in range(m)]
        return cls(
            m=m,
            p=p,
            tau2_beta=[np.ones(k) for k in ks],
            tau2_theta=[np.ones(k) for k in ks] if time_varying else [np.zeros(0) for _ in ks],
            pi=np.ones(p),
            varrho=1.0,
            time_varying=time_varying,
        )

    @property
    def lam(self):
        return np.cumprod(self.pi)

    def coefficient_globals(self, i):
        """Global scale of every coefficient of equation i (0-based): lambda_L on lag blocks, varrho on covariances."""
        k = self.m * self.p + i
        lags = lag_of_position(self.m, self.p, k)
        lam = self.lam
        return np.where(lags > 0, lam[np.maximum(lags, 1) - 1], self.varrho)

    def prior_variances(self, i):
        if self.time_varying:
            return np.concatenate([self.tau2_beta[i], self.tau2_theta[i]])
        return self.tau2_beta[i].copy()

    def copy(self):
        return NgState(self.m, self.p, [t.copy() for t in self.tau2_beta], [t.copy() for t in self.tau2_theta],
                       self.pi.copy(), float(self.varrho), self.time_varying)


def update_local_scales(coefficients, globals_, kappa, rng):
    """tau^2 ~ GIG(kappa - 1/2, max(coef^2, 1e-16), kappa * global) per coefficient."""
    coefficients = np.asarray(coefficients, dtype=float)
    globals_ = np.asarray(globals_, dtype=float)
    if np.any(globals_ <= 0):
        raise ValueError("global scales must be positive")
    chi = np.maximum(coefficients ** 2, COEF_FLOOR)
    return np.atleast_1d(sample_gig(kappa - 0.5, chi, kappa * globals_, rng))


def update_all_local_scales(state: NgState, betas, thetas, hyper, rng):
    """Refresh every tau^2; beta and sqrt-theta of the same coefficient share its global."""
    for i in range(state.m):
        g = state.coefficient_globals(i)
        state.tau2_beta[i] = update_local_scales(betas[i], g, hyper.kappa, rng)
        if state.time_varying:
            state.tau2_theta[i] = update_local_scales(thetas[i], g, hyper.kappa, rng)
    return state


def _lag_sums(state: NgState):
    """Per-lag count and sum of the lag-coefficient tau^2 values (beta and theta pooled)."""
    counts = np.zeros(state.p)
    sums = np.zeros(state.p)
    for i in range(state.m):
        k = state.m * state.p + i
        lags = lag_of_position(state.m, state.p, k)
        blocks = [state.tau2_beta[i]] + ([state.tau2_theta[i]] if state.time_varying else [])
        for tau2 in blocks:
            for lag in range(1, state.p + 1):
                sel = tau2[lags == lag]
                counts[lag - 1] += sel.size
                sums[lag - 1] += sel.sum()
    return counts, sums


def lag_multiplier_params(l, state: NgState, hyper):
    """
    Shape and rate of the full conditional of pi_l (1-based l). Every lag L >= l
    depends on pi_l through lambda_L = pi_l * lambda_L / pi_l.
    """
    counts, sums = _lag_sums(state)
    lam = state.lam
    tail = slice(l - 1, state.p)
    shape = hyper.c0 + hyper.kappa * counts[tail].sum()
    rate = hyper.d0 + 0.5 * hyper.kappa * np.sum(lam[tail] / state.pi[l - 1] * sums[tail])
    return shape, rate


def update_lag_multiplier(l, state: NgState, hyper, rng):
    """Gamma draw of pi_l; lambda is recomputed from the updated multipliers."""
    shape, rate = lag_multiplier_params(l, state, hyper)
    state.pi[l - 1] = rng.gamma(shape, 1.0 / rate)
    return state.pi[l - 1]


def covariance_global_params(state: NgState, hyper):
    tau2 = []
    for i in range(1, state.m):
        mp = state.m * state.p
        tau2.append(state.tau2_beta[i][mp:])
        if state.time_varying:
            tau2.append(state.tau2_theta[i][mp:])
    tau2 = np.concatenate(tau2) if tau2 else np.zeros(0)
    return hyper.a0 + hyper.kappa * tau2.size, hyper.b0 + 0.5 * hyper.kappa * tau2.sum()


def update_covariance_global(state: NgState, hyper, rng):
    """Gamma draw of varrho; a single-equation system has no covariance block and is left unchanged."""
    if state.m == 1:
        return state.varrho
    shape, rate = covariance_global_params(state, hyper)
    state.varrho = float(rng.gamma(shape, 1.0 / rate))
    return state.varrho


def update_globals(state: NgState, hyper, rng):
    for l in range(1, state.p + 1):
        update_lag_multiplier(l, state, hyper, rng)
    update_covariance_global(state, hyper, rng)
    return state


# ============================================================================
# OLS scales
# ============================================================================
def ols_fit(Z, y):
    """Least-squares coefficients and their standard errors; ridge 1e-6 for singular designs."""
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = Z.shape
    gram = Z.T @ Z
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        logger.warning(f"Singular OLS design ({n}x{k}); applying ridge penalty {RIDGE_PENALTY}")
        chol = np.linalg.cholesky(gram + RIDGE_PENALTY * np.eye(k))
    inv = np.linalg.solve(chol.T, np.linalg.solve(chol, np.eye(k)))
    coef = inv @ (Z.T @ y)
    resid = y - Z @ coef
    dof = max(n - k, 1)
    s2 = resid @ resid / dof
    return coef, np.sqrt(np.clip(np.diag(inv) * s2, 0.0, None)), resid


def triangular_ols(values, p):
    """Per-equation OLS (coefficients, standard errors) of the triangular system, covariance columns on first-stage OLS shocks."""
    values = np.asarray(values, dtype=float)
    m = values.shape[1]
    X = lagged_design(values, p)
    shocks = np.column_stack([ols_fit(X, values[p:, j])[2] for j in range(m)])
    fits = []
    for i in range(1, m + 1):
        system = build_equation_system(values, p, i, shocks[:, :i - 1].T)
        coef, se, _ = ols_fit(system.regressors, system.response)
        fits.append((coef, se))
    return fits


def triangular_ols_scales(values, p):
    return [se for _, se in triangular_ols(values, p)]


# ============================================================================
# SSVS
# ============================================================================
@dataclass
class SsvsState:
    spike_sd: List[np.ndarray]
    slab_sd: List[np.ndarray]
    indicators: List[np.ndarray]
    inclusion: float = 0.5

    @classmethod
    def from_ols(cls, ols_sds, settings):
        spikes, slabs = [], []
        for i, sd in enumerate(ols_sds):
            sd = np.asarray(sd, dtype=float)
            if np.any(sd <= 0):
                raise ValueError(f"zero OLS standard deviation in equation {i + 1} (degenerate column)")
            spikes.append(settings.spike_scale * sd)
            slabs.append(settings.slab_scale * sd)
        if not np.all([np.all(s < b) for s, b in zip(spikes, slabs)]):
            raise ValueError("spike standard deviation must be smaller than the slab")
        return cls(spikes, slabs, [np.ones(len(sd), dtype=bool) for sd in ols_sds], settings.inclusion)

    def prior_variances(self, i):
        return np.where(self.indicators[i], self.slab_sd[i] ** 2, self.spike_sd[i] ** 2)

    def copy(self):
        return SsvsState(self.spike_sd, self.slab_sd, [d.copy() for d in self.indicators], self.inclusion)


def inclusion_probability(coefficients, spike_sd, slab_sd, inclusion):
    """Posterior probability that each coefficient comes from the slab."""
    log_slab = np.log(inclusion) + stats.norm.logpdf(coefficients, 0.0, slab_sd)
    log_spike = np.log1p(-inclusion) + stats.norm.logpdf(coefficients, 0.0, spike_sd)
    return special.expit(log_slab - log_spike)


def update_ssvs(coefficients, i, state: SsvsState, rng):
    """Bernoulli indicator draw for equation i; returns the indicators and the implied prior variances."""
    prob = inclusion_probability(np.asarray(coefficients, dtype=float), state.spike_sd[i], state.slab_sd[i],
                                 state.inclusion)
    state.indicators[i] = rng.random(prob.shape) < prob
    return state.indicators[i], state.prior_variances(i)


# ============================================================================
# Hierarchical Minnesota
# ============================================================================
@dataclass
class MinnesotaData:
    """Sufficient statistics of the reduced-form equations on one estimation window."""

    XtX: np.ndarray
    Xty: np.ndarray
    yty: np.ndarray
    n: int
    sigma2: np.ndarray
    m: int
    p: int

    @classmethod
    def from_values(cls, values, p):
        values = np.asarray(values, dtype=float)
        m = values.shape[1]
        X = lagged_design(values, p)
        Y = values[p:]
        sigma2 = np.empty(m)
        for j in range(m):
            # univariate AR(p) residual variance sets the scale of variable j
            Xj = np.column_stack([np.ones(Y.shape[0]), X[:, j::m]])
            _, _, resid = ols_fit(Xj, Y[:, j])
            sigma2[j] = max(resid @ resid / max(Y.shape[0] - Xj.shape[1], 1), 1e-12)
        return cls(X.T @ X, X.T @ Y, np.einsum("tj,tj->j", Y, Y), Y.shape[0], sigma2, m, p)


@dataclass
class MinnesotaState:
    lambda1: float
    lambda2: float
    own_lag_mean: float
    sigma2: np.ndarray
    step: float = 0.3
    accepted: int = 0
    proposed: int = 0

    def __post_init__(self):
        if self.lambda1 <= 0 or self.lambda2 <= 0:
            raise ValueError("Minnesota tightness parameters must be positive")

    @classmethod
    def initial(cls, settings, data: MinnesotaData):
        return cls(settings.lambda1, settings.lambda2, settings.own_lag_mean, data.sigma2.copy())

    def lag_prior(self, i, m, p, lambda1=None, lambda2=None):
        """Prior mean and variance of the m*p lag coefficients of equation i (0-based)."""
        l1 = self.lambda1 if lambda1 is None else lambda1
        l2 = self.lambda2 if lambda2 is None else lambda2
        lags = np.repeat(np.arange(1, p + 1), m).astype(float)
        var_idx = np.tile(np.arange(m), p)
        own = var_idx == i
        variance = np.where(own, (l1 / lags) ** 2, (l1 * l2 / lags) ** 2 * self.sigma2[i] / self.sigma2[var_idx])
        mean = np.where(own & (lags == 1), self.own_lag_mean, 0.0)
        return mean, variance

    def prior(self, i, m, p, covariance_variance):
        """Prior mean and variance of the full coefficient vector of triangular equation i."""
        mean, variance = self.lag_prior(i, m, p)
        return np.concatenate([mean, np.zeros(i)]), np.concatenate([variance, np.full(i, covariance_variance)])

    def copy(self):
        return MinnesotaState(self.lambda1, self.lambda2, self.own_lag_mean, self.sigma2, self.step,
                              self.accepted, self.proposed)


def minnesota_log_marginal(state: MinnesotaState, data: MinnesotaData, lambda1, lambda2):
    """
    Log marginal likelihood of the reduced-form equations under the conjugate
    normal-inverse-gamma form: b_i | s2 ~ N(b0, s2 V0 / sigma_i^2), s2 ~ IG(1, sigma_i^2).
    """
    total = 0.0
    shape0 = 1.0
    for i in range(data.m):
        b0, v = state.lag_prior(i, data.m, data.p, lambda1, lambda2)
        v0 = v / data.sigma2[i]
        prec0 = 1.0 / v0
        prec_n = data.XtX + np.diag(prec0)
        chol = np.linalg.cholesky(prec_n)
        lin = data.Xty[:, i] + prec0 * b0
        half = np.linalg.solve(chol, lin)
        rate0 = data.sigma2[i]
        rate_n = rate0 + 0.5 * (data.yty[i] + b0 @ (prec0 * b0) - half @ half)
        shape_n = shape0 + 0.5 * data.n
        logdet_n = 2.0 * np.log(np.diag(chol)).sum()
        total += (-0.5 * data.n * np.log(2 * np.pi) - 0.5 * logdet_n - 0.5 * np.log(v0).sum()
                  + shape0 * np.log(rate0) - shape_n * np.log(rate_n)
                  + special.gammaln(shape_n) - special.gammaln(shape0))
    return float(total)


def _minnesota_log_target(state, data, settings, lambda1, lambda2):
    hyper = (stats.gamma.logpdf(lambda1, settings.hyper_shape, scale=1.0 / settings.hyper_rate)
             + stats.gamma.logpdf(lambda2, settings.hyper_shape, scale=1.0 / settings.hyper_rate))
    return minnesota_log_marginal(state, data, lambda1, lambda2) + hyper + np.log(lambda1) + np.log(lambda2)


def update_minnesota(state: MinnesotaState, data: MinnesotaData, settings, rng, step: Optional[float] = None):
    """Random-walk MH on (log lambda1, log lambda2); rejection retains the current values."""
    step = state.step if step is None else step
    z = rng.standard_normal(2)
    prop1 = state.lambda1 * np.exp(step * z[0])
    prop2 = state.lambda2 * np.exp(step * z[1])
    log_ratio = (_minnesota_log_target(state, data, settings, prop1, prop2)
                 - _minnesota_log_target(state, data, settings, state.lambda1, state.lambda2))
    state.proposed += 1
    if np.log(rng.random()) < log_ratio:
        state.lambda1, state.lambda2 = float(prop1), float(prop2)
        state.accepted += 1
    return state.lambda1, state.lambda2


def adapt_minnesota_step(state: MinnesotaState, low=TARGET_ACCEPTANCE[0], high=TARGET_ACCEPTANCE[1]):
    if state.proposed == 0:
        return state.step
    rate = state.accepted / state.proposed
    if rate < low:
        state.step *= 0.8
    elif rate > high:
        state.step *= 1.25
    state.accepted = 0
    state.proposed = 0
    return state.step

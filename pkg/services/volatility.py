"""
CryptoTVP - Volatility
Stochastic-volatility block (log-variance AR(1) paths and parameters via the
10-component auxiliary mixture for log chi-square(1)) and the t-error block
(latent scale mixture and degrees of freedom). Every function works on one
equation (1-D arrays) or on all equations at once (columns of a T x m array).
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from kernels import sample_inverse_gamma

logger = logging.getLogger(__name__)

# Auxiliary mixture for log chi-square(1): weights, means, variances
MIXTURE_PROBS = np.array([0.00609, 0.04775, 0.13057, 0.20674, 0.22715, 0.18842, 0.12047, 0.05591, 0.01575, 0.00115])
MIXTURE_MEANS = np.array([1.92677, 1.34744, 0.73504, 0.02266, -0.85173, -1.97278, -3.46788, -5.55246, -8.68384, -14.65000])
MIXTURE_VARS = np.array([0.11265, 0.17788, 0.26768, 0.40611, 0.62699, 0.98583, 1.57469, 2.54498, 4.16591, 7.33342])

LOG_SQUARE_OFFSET = 1e-8
TARGET_ACCEPTANCE = (0.2, 0.4)
ADAPT_EVERY = 100


@dataclass
class SvState:
    """Log-volatility paths (T x m) and AR(1) parameters, plus the (rho, varsigma) proposal scale."""

    h: np.ndarray
    mu: np.ndarray
    rho: np.ndarray
    varsigma: np.ndarray
    step: np.ndarray = None
    accepted: np.ndarray = None
    proposed: np.ndarray = None

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        self.rho = np.atleast_1d(np.asarray(self.rho, dtype=float))
        self.varsigma = np.atleast_1d(np.asarray(self.varsigma, dtype=float))
        if np.any(np.abs(self.rho) >= 1):
            raise ValueError("volatility persistence must satisfy |rho| < 1")
        if np.any(self.varsigma <= 0):
            raise ValueError("volatility innovation scale must be positive")
        if self.step is None:
            self.step = np.full(self.mu.shape, 0.1)
        if self.accepted is None:
            self.accepted = np.zeros(self.mu.shape, dtype=int)
        if self.proposed is None:
            self.proposed = np.zeros(self.mu.shape, dtype=int)

    @classmethod
    def initial(cls, log_sq, rho=0.9, varsigma=0.2):
        """Starting state centred on the sample level of the log-squared residuals."""
        log_sq = np.asarray(log_sq, dtype=float)
        level = log_sq.mean(axis=0) + 1.27
        n = np.atleast_1d(level).shape[0]
        h = np.broadcast_to(level, log_sq.shape).astype(float).copy()
        return cls(h, np.atleast_1d(level), np.full(n, rho), np.full(n, varsigma))

    def column(self, j):
        """Single-equation view of equation j (0-based) as a fresh state."""
        return SvState(self.h[:, j].copy(), self.mu[j:j + 1], self.rho[j:j + 1], self.varsigma[j:j + 1],
                       self.step[j:j + 1].copy(), self.accepted[j:j + 1].copy(), self.proposed[j:j + 1].copy())

    def assign(self, j, sub):
        self.h[:, j] = sub.h
        self.mu[j] = sub.mu[0]
        self.rho[j] = sub.rho[0]
        self.varsigma[j] = sub.varsigma[0]
        self.accepted[j] = sub.accepted[0]
        self.proposed[j] = sub.proposed[0]

    def snapshot(self, keep_paths=True):
        h = self.h.copy() if keep_paths else self.h[-1:].copy()
        return SvState(h, self.mu.copy(), self.rho.copy(), self.varsigma.copy(),
                       self.step.copy(), self.accepted.copy(), self.proposed.copy())


@dataclass
class TailState:
    """Latent variance multipliers phi (T x m) and equation-specific degrees of freedom."""

    phi: np.ndarray
    dof: np.ndarray = field(default_factory=lambda: np.array([10.0]))

    def __post_init__(self):
        self.dof = np.atleast_1d(np.asarray(self.dof, dtype=float))
        if np.any(self.phi <= 0):
            raise ValueError("phi must be strictly positive")

    def snapshot(self, keep_paths=True):
        phi = self.phi.copy() if keep_paths else self.phi[-1:].copy()
        return TailState(phi, self.dof.copy())


def _as_columns(a):
    a = np.asarray(a, dtype=float)
    return (a[:, None], True) if a.ndim == 1 else (a, False)


def log_square_residuals(eta, phi=None):
    """log(eta^2 / phi + offset) with offset 1e-8 times the column variance."""
    standardized = np.asarray(eta, dtype=float)
    if phi is not None:
        standardized = standardized / np.sqrt(phi)
    scaled = standardized ** 2
    var = np.var(standardized, axis=0)
    offset = LOG_SQUARE_OFFSET * np.where(var > 0, var, 1.0)
    return np.log(scaled + offset)


# ============================================================================
# Log-volatility paths
# ============================================================================
def sample_mixture_indicators(log_sq, h, rng):
    """Draw the mixture component of each observation from its discrete posterior."""
    resid = log_sq[..., None] - h[..., None] - MIXTURE_MEANS
    log_like = np.log(MIXTURE_PROBS) - 0.5 * np.log(MIXTURE_VARS) - 0.5 * resid ** 2 / MIXTURE_VARS
    log_like -= log_like.max(axis=-1, keepdims=True)
    post = np.exp(log_like)
    post /= post.sum(axis=-1, keepdims=True)
    u = rng.random(post.shape[:-1])
    n = len(MIXTURE_PROBS)
    return np.minimum((u[..., None] > np.cumsum(post, axis=-1)).sum(axis=-1), n - 1)


def ffbs_log_volatility(target, obs_var, mu, rho, varsigma, rng):
    """
    Joint draw of h_1..T for target_t = h_t + N(0, obs_var_t) with
    h_t = mu + rho (h_{t-1} - mu) + varsigma nu_t and stationary h_1.
    Arrays are T x m; parameters are m-vectors.
    """
    T, m = target.shape
    means = np.empty((T, m))
    variances = np.empty((T, m))
    a = mu.copy()
    P = varsigma ** 2 / (1.0 - rho ** 2)
    for t in range(T):
        if t > 0:
            a = mu + rho * (a - mu)
            P = rho ** 2 * P + varsigma ** 2
        S = P + obs_var[t]
        gain = P / S
        a = a + gain * (target[t] - a)
        P = P * (1.0 - gain)
        means[t] = a
        variances[t] = P

    draws = np.empty((T, m))
    draws[-1] = means[-1] + np.sqrt(variances[-1]) * rng.standard_normal(m)
    for t in range(T - 2, -1, -1):
        pred = rho ** 2 * variances[t] + varsigma ** 2
        J = np.divide(rho * variances[t], pred, out=np.zeros(m), where=pred > 0)
        mean = means[t] + J * (draws[t + 1] - mu - rho * (means[t] - mu))
        var = np.clip(variances[t] - J * rho * variances[t], 0.0, None)
        draws[t] = mean + np.sqrt(var) * rng.standard_normal(m)
    return draws


def sample_sv_path(log_sq_resid, state: SvState, rng):
    """New h path from its full conditional under the auxiliary mixture."""
    log_sq, single = _as_columns(log_sq_resid)
    h, _ = _as_columns(state.h)
    if not np.all(np.isfinite(log_sq)):
        raise ValueError("log-squared residuals must be finite")
    indicators = sample_mixture_indicators(log_sq, h, rng)
    draws = ffbs_log_volatility(log_sq - MIXTURE_MEANS[indicators], MIXTURE_VARS[indicators],
                                state.mu, state.rho, state.varsigma, rng)
    return draws[:, 0] if single else draws


# ============================================================================
# Log-volatility parameters
# ============================================================================
def _ar1_loglik(h, mu, rho, varsigma):
    if h.shape[0] == 0:
        return np.zeros(mu.shape)
    var0 = varsigma ** 2 / (1.0 - rho ** 2)
    first = -0.5 * (np.log(2 * np.pi * var0) + (h[0] - mu) ** 2 / var0)
    innov = h[1:] - mu - rho * (h[:-1] - mu)
    rest = -0.5 * ((h.shape[0] - 1) * np.log(2 * np.pi * varsigma ** 2) + (innov ** 2).sum(axis=0) / varsigma ** 2)
    return first + rest


def _log_param_prior(rho, varsigma, prior):
    """Log prior of (atanh rho, log varsigma) including Jacobians; Gamma prior on varsigma^2."""
    beta = stats.beta.logpdf((rho + 1.0) / 2.0, prior.rho_a, prior.rho_b) - np.log(2.0)
    var_prior = stats.gamma.logpdf(varsigma ** 2, prior.var_shape, scale=1.0 / prior.var_rate)
    jacobian = np.log1p(-rho ** 2) + np.log(2.0 * varsigma ** 2)
    return beta + var_prior + jacobian


def _draw_mu(h, rho, varsigma, prior, rng):
    prec = np.full(rho.shape, 1.0 / prior.mu_sd ** 2)
    lin = np.full(rho.shape, prior.mu_mean / prior.mu_sd ** 2)
    if h.shape[0] > 0:
        var0 = varsigma ** 2 / (1.0 - rho ** 2)
        prec = prec + 1.0 / var0 + (h.shape[0] - 1) * (1.0 - rho) ** 2 / varsigma ** 2
        lin = lin + h[0] / var0 + (1.0 - rho) * (h[1:] - rho * h[:-1]).sum(axis=0) / varsigma ** 2
    return lin / prec + rng.standard_normal(rho.shape) / np.sqrt(prec)


def sample_sv_params(h, state: SvState, prior, rng):
    """
    One MH-within-Gibbs update: mu by its conjugate Gaussian step, then
    (rho, varsigma) jointly by random-walk MH on (atanh rho, log varsigma).
    An empty h (zero rows) samples from the prior.
    """
    hc, _ = _as_columns(h)
    mu = _draw_mu(hc, state.rho, state.varsigma, prior, rng)

    m = mu.shape[0]
    z_rho = np.arctanh(state.rho) + state.step * rng.standard_normal(m)
    z_sig = np.log(state.varsigma) + state.step * rng.standard_normal(m)
    rho_new = np.tanh(z_rho)
    sig_new = np.exp(z_sig)
    valid = (np.abs(rho_new) < 1.0) & (sig_new > 0) & np.isfinite(sig_new)

    with np.errstate(invalid="ignore", divide="ignore"):
        current = _ar1_loglik(hc, mu, state.rho, state.varsigma) + _log_param_prior(state.rho, state.varsigma, prior)
        proposed = np.where(valid, _ar1_loglik(hc, mu, rho_new, sig_new) + _log_param_prior(rho_new, sig_new, prior),
                            -np.inf)
    accept = np.log(rng.random(m)) < proposed - current

    state.mu = mu
    state.rho = np.where(accept, rho_new, state.rho)
    state.varsigma = np.where(accept, sig_new, state.varsigma)
    state.accepted = state.accepted + accept
    state.proposed = state.proposed + 1
    return state.mu, state.rho, state.varsigma


def adapt_step(state: SvState, low=TARGET_ACCEPTANCE[0], high=TARGET_ACCEPTANCE[1]):
    """Rescale the proposal toward the target acceptance band; resets the counters."""
    proposed = np.broadcast_to(state.proposed, state.accepted.shape)
    if not np.any(proposed > 0):
        return state.step
    rate = np.divide(state.accepted, proposed, out=np.full(proposed.shape, np.nan), where=proposed > 0)
    scale = np.where(rate < low, 0.8, np.where(rate > high, 1.25, 1.0))
    state.step = state.step * np.where(proposed > 0, scale, 1.0)
    state.accepted = np.zeros_like(state.accepted)
    state.proposed = np.zeros_like(state.accepted)
    return state.step


# ============================================================================
# t errors
# ============================================================================
def phi_posterior_params(eta, h, dof):
    """Shape (v+1)/2 and rate (v + eta^2 e^-h)/2 of the inverse-Gamma full conditional."""
    dof = np.asarray(dof, dtype=float)
    shape = np.broadcast_to((dof + 1.0) / 2.0, np.shape(eta))
    rate = (dof + np.asarray(eta, dtype=float) ** 2 * np.exp(-np.asarray(h, dtype=float))) / 2.0
    return shape, rate


def sample_phi(eta, h, dof, rng):
    if np.any(np.asarray(dof) <= 0) or not np.all(np.isfinite(h)):
        raise ValueError("phi update needs positive degrees of freedom and finite h")
    shape, rate = phi_posterior_params(eta, h, dof)
    return sample_inverse_gamma(shape, rate, rng)


def dof_log_target(phi, dof):
    """log p(v | phi) up to a constant under the flat prior, one value per equation."""
    phi_c, _ = _as_columns(phi)
    v = np.asarray(dof, dtype=float)
    n = phi_c.shape[0]
    half = v / 2.0
    return (n * (half * np.log(half) - special.gammaln(half))
            - (half + 1.0) * np.log(phi_c).sum(axis=0) - half * (1.0 / phi_c).sum(axis=0))


def dof_acceptance_probability(phi, current, proposal, prior):
    """Independence-MH acceptance with the uniform prior as proposal."""
    current = np.atleast_1d(np.asarray(current, dtype=float))
    proposal = np.atleast_1d(np.asarray(proposal, dtype=float))
    inside = (proposal > prior.lower) & (proposal < prior.upper)
    with np.errstate(over="ignore", invalid="ignore"):
        log_ratio = np.where(proposal == current, 0.0, dof_log_target(phi, proposal) - dof_log_target(phi, current))
    return np.where(inside, np.minimum(1.0, np.exp(np.minimum(log_ratio, 0.0))), 0.0)


def sample_dof(phi, prior, current, rng):
    """Independence MH step for the degrees of freedom; rejection keeps the current value."""
    if np.any(np.asarray(phi) <= 0):
        raise ValueError("phi must be strictly positive")
    current = np.atleast_1d(np.asarray(current, dtype=float))
    proposal = rng.uniform(prior.lower, prior.upper, size=current.shape)
    accept = rng.random(current.shape) < dof_acceptance_probability(phi, current, proposal, prior)
    return np.where(accept, proposal, current)

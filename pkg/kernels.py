"""
CryptoTVP - Statistical Kernels
Random-variate generators and density evaluators shared by every sampler
block: generalized inverse Gaussian and inverse-Gamma draws, Cholesky
factorisation with jitter escalation, and Gaussian-mixture predictive
densities (log density, marginalisation, univariate CDF).
"""

import logging
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import special, stats

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

JITTER_SCALE = 1e-10
JITTER_ATTEMPTS = 3
WEIGHT_TOLERANCE = 1e-12
LOG_2PI = np.log(2.0 * np.pi)


class NumericalError(RuntimeError):
    """Raised when a factorisation fails beyond the jitter policy."""


# ============================================================================
# Factorisation
# ============================================================================
def safe_cholesky(matrix: np.ndarray, context: str = "matrix") -> np.ndarray:
    """
    Lower Cholesky factor of a symmetric matrix.

    On failure adds 1e-10 * trace / m to the diagonal, escalating tenfold,
    at most three times before raising NumericalError.
    """
    a = np.asarray(matrix, dtype=float)
    a = 0.5 * (a + a.T)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass

    m = a.shape[0]
    base = JITTER_SCALE * max(abs(np.trace(a)) / m, 1e-300)
    for attempt in range(JITTER_ATTEMPTS):
        jitter = base * 10.0 ** attempt
        try:
            factor = np.linalg.cholesky(a + jitter * np.eye(m))
            logger.warning(f"Cholesky of {context} needed jitter {jitter:.3e} (attempt {attempt + 1})")
            return factor
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(f"{context} is not positive definite after {JITTER_ATTEMPTS} jitter attempts")


def sample_mvn_precision(precision: np.ndarray, linear: np.ndarray, rng: np.random.Generator,
                         context: str = "posterior precision"):
    """
    Draw from N(Q^{-1} b, Q^{-1}) given precision Q and linear term b.
    Returns (draw, mean).
    """
    chol = safe_cholesky(precision, context)
    mean = _cho_solve(chol, linear)
    noise = np.linalg.solve(chol.T, rng.standard_normal(len(linear)))
    return mean + noise, mean


def _cho_solve(chol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    return np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))


# ============================================================================
# Generalized inverse Gaussian
# ============================================================================
def _gig_mode(lam: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Mode of the two-parameter GIG density x^(lam-1) exp(-omega/2 (x + 1/x))."""
    with np.errstate(divide="ignore", invalid="ignore"):
        upper = (np.sqrt((lam - 1.0) ** 2 + omega ** 2) + (lam - 1.0)) / omega
        lower = omega / (np.sqrt((1.0 - lam) ** 2 + omega ** 2) + (1.0 - lam))
    return np.where(lam >= 1.0, upper, lower)


def _log_kernel(x, t, s, nc):
    with np.errstate(divide="ignore", invalid="ignore"):
        return t * np.log(x) - s * (x + 1.0 / x) - nc


def _rou_shift(lam, omega, rng):
    """Ratio-of-uniforms with mode shift (lam > 2 or omega > 3)."""
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _gig_mode(lam, omega)
    nc = t * np.log(xm) - s * (xm + 1.0 / xm)

    a = -(2.0 * (lam + 1.0) / omega + xm)
    b = 2.0 * (lam - 1.0) * xm / omega - 1.0
    p = b - a * a / 3.0
    q = 2.0 * a ** 3 / 27.0 - a * b / 3.0 + xm
    fi = np.arccos(-q / (2.0 * np.sqrt(-(p ** 3) / 27.0)))
    fak = 2.0 * np.sqrt(-p / 3.0)
    y1 = fak * np.cos(fi / 3.0) - a / 3.0
    y2 = fak * np.cos(fi / 3.0 + 4.0 / 3.0 * np.pi) - a / 3.0
    uplus = (y1 - xm) * np.exp(_log_kernel(y1, t, s, nc))
    uminus = (y2 - xm) * np.exp(_log_kernel(y2, t, s, nc))

    out = np.empty_like(lam)
    pending = np.arange(lam.size)
    while pending.size:
        u = rng.random(pending.size)
        v = rng.random(pending.size)
        x = (uminus[pending] + u * (uplus[pending] - uminus[pending])) / v + xm[pending]
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = (x > 0.0) & (np.log(v) <= _log_kernel(x, t[pending], s[pending], nc[pending]))
        out[pending[ok]] = x[ok]
        pending = pending[~ok]
    return out


def _rou_noshift(lam, omega, rng):
    """Ratio-of-uniforms without mode shift (moderate lam and omega)."""
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _gig_mode(lam, omega)
    nc = t * np.log(xm) - s * (xm + 1.0 / xm)
    ym = ((lam + 1.0) + np.sqrt((lam + 1.0) ** 2 + omega ** 2)) / omega
    um = np.exp(0.5 * (lam + 1.0) * np.log(ym) - s * (ym + 1.0 / ym) - nc)

    out = np.empty_like(lam)
    pending = np.arange(lam.size)
    while pending.size:
        u = um[pending] * rng.random(pending.size)
        v = rng.random(pending.size)
        x = u / v
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = (x > 0.0) & (np.log(v) <= _log_kernel(x, t[pending], s[pending], nc[pending]))
        out[pending[ok]] = x[ok]
        pending = pending[~ok]
    return out


def _concave_hat(lam, omega, rng):
    """Three-piece hat rejection for lam < 1 and small omega, where ROU stalls."""
    xm = _gig_mode(lam, omega)
    x0 = omega / (1.0 - lam)
    k0 = np.exp((lam - 1.0) * np.log(xm) - 0.5 * omega * (xm + 1.0 / xm))
    a0 = k0 * x0

    wide = x0 >= 2.0 / omega
    k1 = np.where(wide, 0.0, np.exp(-omega))
    with np.errstate(divide="ignore", invalid="ignore"):
        a1_pos = k1 / lam * ((2.0 / omega) ** lam - x0 ** lam)
        a1_zero = k1 * np.log(2.0 / (omega * omega))
    a1 = np.where(wide, 0.0, np.where(lam == 0.0, a1_zero, a1_pos))
    edge = np.maximum(x0, 2.0 / omega)
    k2 = edge ** (lam - 1.0)
    a2 = k2 * 2.0 * np.exp(-0.5 * omega * edge) / omega
    total = a0 + a1 + a2

    out = np.empty_like(lam)
    pending = np.arange(lam.size)
    while pending.size:
        lp, wp, x0p, k0p, k1p, k2p = (arr[pending] for arr in (lam, omega, x0, k0, k1, k2))
        a0p, a1p, edgep = a0[pending], a1[pending], edge[pending]
        v = total[pending] * rng.random(pending.size)

        in_a = v <= a0p
        in_b = ~in_a & (v - a0p <= a1p)
        in_c = ~in_a & ~in_b
        x = np.empty(pending.size)
        hx = np.empty(pending.size)

        x[in_a] = x0p[in_a] * v[in_a] / a0p[in_a]
        hx[in_a] = k0p[in_a]

        vb = v[in_b] - a0p[in_b]
        lb, k1b, x0b, wb = lp[in_b], k1p[in_b], x0p[in_b], wp[in_b]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            xb = np.where(lb == 0.0,
                          wb * np.exp(np.exp(wb) * vb),
                          (x0b ** lb + lb / k1b * vb) ** (1.0 / np.where(lb == 0.0, 1.0, lb)))
        x[in_b] = xb
        hx[in_b] = k1b * xb ** (lb - 1.0)

        vc = v[in_c] - a0p[in_c] - a1p[in_c]
        wc, k2c = wp[in_c], k2p[in_c]
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = -2.0 / wc * np.log(np.exp(-0.5 * wc * edgep[in_c]) - wc / (2.0 * k2c) * vc)
        x[in_c] = xc
        hx[in_c] = k2c * np.exp(-0.5 * wc * xc)

        u = rng.random(pending.size) * hx
        with np.errstate(divide="ignore", invalid="ignore"):
            target = (lp - 1.0) * np.log(x) - 0.5 * wp * (x + 1.0 / x)
            ok = np.isfinite(x) & (x > 0.0) & (np.log(u) <= target)
        out[pending[ok]] = x[ok]
        pending = pending[~ok]
    return out


def sample_gig(lam: ArrayLike, chi: ArrayLike, psi: ArrayLike, rng: np.random.Generator) -> ArrayLike:
    """
    Draw from GIG(lam, chi, psi) with density proportional to
    x^(lam-1) exp(-(chi/x + psi*x)/2). Arguments broadcast against each other.

    chi == 0 reduces to Gamma(lam, rate psi/2) and psi == 0 to
    inverse-Gamma(-lam, rate chi/2); every other region uses the
    Hoermann-Leydold ratio-of-uniforms family.
    """
    lam_a, chi_a, psi_a = np.broadcast_arrays(np.asarray(lam, dtype=float),
                                              np.asarray(chi, dtype=float),
                                              np.asarray(psi, dtype=float))
    shape = lam_a.shape
    lam_f, chi_f, psi_f = lam_a.ravel(), chi_a.ravel(), psi_a.ravel()

    if np.any(chi_f < 0) or np.any(psi_f < 0):
        raise ValueError("GIG requires chi >= 0 and psi >= 0")
    if np.any((chi_f == 0) & (psi_f == 0)):
        raise ValueError("GIG requires chi and psi not both zero")
    if np.any((chi_f == 0) & (lam_f <= 0)):
        raise ValueError("GIG with chi = 0 requires lambda > 0")
    if np.any((psi_f == 0) & (lam_f >= 0)):
        raise ValueError("GIG with psi = 0 requires lambda < 0")

    out = np.empty(lam_f.size)
    gamma_case = chi_f == 0
    inv_case = psi_f == 0
    general = ~gamma_case & ~inv_case

    if gamma_case.any():
        out[gamma_case] = rng.gamma(lam_f[gamma_case], 2.0 / psi_f[gamma_case])
    if inv_case.any():
        out[inv_case] = 1.0 / rng.gamma(-lam_f[inv_case], 2.0 / chi_f[inv_case])

    if general.any():
        lam_g = lam_f[general]
        abs_lam = np.abs(lam_g)
        omega = np.sqrt(chi_f[general] * psi_f[general])
        alpha = np.sqrt(chi_f[general] / psi_f[general])

        shifted = (abs_lam > 2.0) | (omega > 3.0)
        plain = ~shifted & ((abs_lam >= 1.0 - 2.25 * omega ** 2) | (omega > 0.2))
        hat = ~shifted & ~plain

        x = np.empty(abs_lam.size)
        if shifted.any():
            x[shifted] = _rou_shift(abs_lam[shifted], omega[shifted], rng)
        if plain.any():
            x[plain] = _rou_noshift(abs_lam[plain], omega[plain], rng)
        if hat.any():
            x[hat] = _concave_hat(abs_lam[hat], omega[hat], rng)

        out[general] = np.where(lam_g < 0, alpha / x, alpha * x)

    out = out.reshape(shape)
    return float(out) if out.ndim == 0 else out


def gig_mean(lam: float, chi: float, psi: float) -> float:
    """Analytic mean sqrt(chi/psi) K_{lam+1}(w) / K_lam(w), w = sqrt(chi*psi)."""
    omega = np.sqrt(chi * psi)
    # exponentially scaled Bessel functions keep the ratio finite for large omega
    return float(np.sqrt(chi / psi) * special.kve(lam + 1.0, omega) / special.kve(lam, omega))


def sample_inverse_gamma(shape: ArrayLike, rate: ArrayLike, rng: np.random.Generator) -> ArrayLike:
    """Reciprocal of a Gamma(shape, rate) draw."""
    shape_a = np.asarray(shape, dtype=float)
    rate_a = np.asarray(rate, dtype=float)
    if np.any(shape_a <= 0) or np.any(rate_a <= 0):
        raise ValueError("inverse-Gamma requires shape > 0 and rate > 0")
    draw = 1.0 / rng.gamma(shape_a, 1.0 / rate_a)
    return float(draw) if np.ndim(draw) == 0 else draw


# ============================================================================
# Gaussian mixtures
# ============================================================================
@dataclass(frozen=True)
class GaussianMixture:
    """Weighted mixture of multivariate Gaussians: weights (K,), means (K, m), covariances (K, m, m)."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        means = np.asarray(self.means, dtype=float)
        covs = np.asarray(self.covariances, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        if covs.ndim == 1:
            covs = covs[:, None, None]
        k, m = means.shape
        if weights.shape[0] != k or covs.shape != (k, m, m):
            raise ValueError(f"inconsistent mixture shapes: weights {weights.shape}, "
                             f"means {means.shape}, covariances {covs.shape}")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError("mixture weights must lie on the simplex")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", 0.5 * (covs + np.swapaxes(covs, 1, 2)))

    @classmethod
    def equal_weights(cls, means, covariances) -> "GaussianMixture":
        means = np.asarray(means, dtype=float)
        k = means.shape[0]
        return cls(np.full(k, 1.0 / k), means, covariances)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def covariance(self) -> np.ndarray:
        """Mixture covariance by the law of total variance."""
        mu = self.mean()
        centred = self.means - mu
        within = np.einsum("k,kij->ij", self.weights, self.covariances)
        between = np.einsum("k,ki,kj->ij", self.weights, centred, centred)
        return within + between


def _component_cholesky(covs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(covs)
    except np.linalg.LinAlgError:
        return np.stack([safe_cholesky(c, "predictive covariance") for c in covs])


def component_logpdfs(x: np.ndarray, gm: GaussianMixture) -> np.ndarray:
    """Log density of x under every mixture component."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != gm.dim:
        raise ValueError(f"dimension mismatch: x has {x.shape[0]} entries, mixture has {gm.dim}")
    chol = _component_cholesky(gm.covariances)
    diff = (x - gm.means)[..., None]
    sol = np.linalg.solve(chol, diff)[..., 0]
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    return -0.5 * (gm.dim * LOG_2PI + logdet + np.einsum("ki,ki->k", sol, sol))


def mixture_logpdf(x: np.ndarray, gm: GaussianMixture) -> float:
    """log sum_k w_k N(x; mu_k, Sigma_k) via log-sum-exp."""
    with np.errstate(divide="ignore"):
        log_w = np.log(gm.weights)
    return float(special.logsumexp(log_w + component_logpdfs(x, gm)))


def mixture_marginal(gm: GaussianMixture, keep: Sequence[int]) -> GaussianMixture:
    """Exact Gaussian marginal over the coordinates in keep; weights unchanged."""
    idx = np.asarray(list(keep), dtype=int)
    if idx.size == 0:
        raise ValueError("marginal index set must be nonempty")
    if np.any(idx < 0) or np.any(idx >= gm.dim):
        raise ValueError(f"marginal indices {idx.tolist()} out of range for dimension {gm.dim}")
    return GaussianMixture(gm.weights, gm.means[:, idx], gm.covariances[:, idx[:, None], idx[None, :]])


def mixture_cdf_univariate(gm: GaussianMixture, y: float) -> float:
    """sum_k w_k Phi((y - mu_k) / sigma_k) for a one-dimensional mixture."""
    if gm.dim != 1:
        raise ValueError(f"univariate CDF requested for a {gm.dim}-dimensional mixture")
    sd = np.sqrt(gm.covariances[:, 0, 0])
    return float(np.clip(gm.weights @ stats.norm.cdf((y - gm.means[:, 0]) / sd), 0.0, 1.0))

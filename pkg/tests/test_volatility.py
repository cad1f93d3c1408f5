import numpy as np
import pytest
from scipy import stats

from services.model_spec import DofPrior, SvPrior
from services.volatility import (
    MIXTURE_MEANS,
    MIXTURE_PROBS,
    SvState,
    adapt_step,
    dof_acceptance_probability,
    ffbs_log_volatility,
    log_square_residuals,
    phi_posterior_params,
    sample_dof,
    sample_mixture_indicators,
    sample_phi,
    sample_sv_params,
    sample_sv_path,
)


def test_mixture_matches_log_chi_square_mean():
    """The auxiliary mixture has the mean of log chi-square(1)."""
    assert np.isclose(MIXTURE_PROBS.sum(), 1.0, atol=1e-4)
    assert np.isclose(MIXTURE_PROBS @ MIXTURE_MEANS, -1.2704, atol=2e-3)


def test_log_square_residuals_finite_at_zero():
    """Exact zeros stay finite thanks to the offset."""
    eta = np.array([0.0, 0.5, -1.0, 0.0])
    assert np.all(np.isfinite(log_square_residuals(eta)))


def test_log_square_offset_scales_with_standardized_variance():
    """The offset is 1e-8 times the variance of eta / sqrt(phi)."""
    eta = np.array([0.0, 0.5, -1.0, 2.0])
    phi = np.array([1.0, 4.0, 0.25, 2.0])
    out = log_square_residuals(eta, phi)
    assert np.isclose(out[0], np.log(1e-8 * np.var(eta / np.sqrt(phi))))
    assert np.isclose(out[1], np.log(0.0625 + 1e-8 * np.var(eta / np.sqrt(phi))))


def test_indicators_in_range(rng):
    """Indicators index the ten components."""
    idx = sample_mixture_indicators(rng.standard_normal((50, 2)), np.zeros((50, 2)), rng)
    assert idx.shape == (50, 2)
    assert idx.min() >= 0 and idx.max() <= 9


def test_ffbs_tracks_precise_observations(rng):
    """With negligible observation noise the draw follows the target."""
    target = np.linspace(-1.0, 1.0, 30)[:, None]
    draw = ffbs_log_volatility(target, np.full((30, 1), 1e-8), np.zeros(1), np.array([0.9]),
                               np.array([0.5]), rng)
    assert np.allclose(draw, target, atol=1e-3)


def test_sv_path_recovers_level(rng):
    """Paths drawn from simulated returns sit near the true log variance."""
    h_true = np.full(500, -2.0)
    eta = np.exp(h_true / 2) * rng.standard_normal(500)
    state = SvState(np.zeros(500), -2.0, 0.95, 0.1)
    for _ in range(50):
        state.h = sample_sv_path(log_square_residuals(eta), state, rng)
    assert abs(state.h.mean() + 2.0) < 0.4


def test_sv_params_prior_only(rng):
    """With no data the parameter update leaves the prior invariant."""
    prior = SvPrior()
    state = SvState(np.zeros(0), 0.0, 0.8, 0.5, step=np.array([0.6]))
    rho, var = [], []
    for s in range(40000):
        sample_sv_params(np.zeros(0), state, prior, rng)
        if s >= 1000 and s % 5 == 0:
            rho.append(state.rho[0])
            var.append(state.varsigma[0] ** 2)
    assert abs(np.mean((np.array(rho) + 1) / 2) - 25 / 30) < 0.02
    assert abs(np.mean(var) - 1.0) < 0.3


def test_sv_state_validation():
    """Explosive persistence and nonpositive scales are rejected."""
    with pytest.raises(ValueError):
        SvState(np.zeros(3), 0.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        SvState(np.zeros(3), 0.0, 0.5, 0.0)


def test_adapt_step_moves_toward_band():
    """Low acceptance shrinks the step, high acceptance widens it, counters reset."""
    state = SvState(np.zeros((3, 2)), np.zeros(2), np.full(2, 0.5), np.full(2, 0.2))
    state.accepted = np.array([5, 80])
    state.proposed = 100
    step = adapt_step(state)
    assert np.allclose(step, [0.08, 0.125])
    assert np.all(state.proposed == 0) and np.all(state.accepted == 0)


def test_proposal_counts_are_per_equation(rng):
    """Updating each equation through its column view counts one proposal per equation."""
    m = 6
    state = SvState(np.zeros((40, m)), np.zeros(m), np.full(m, 0.5), np.full(m, 0.2))
    h = rng.standard_normal((40, m))
    for j in range(m):
        sub = state.column(j)
        sample_sv_params(h[:, j], sub, SvPrior(), rng)
        state.assign(j, sub)
    assert np.all(state.proposed == 1)
    assert np.all(state.accepted <= 1)
    state.accepted = np.ones(m, dtype=int)
    assert np.allclose(adapt_step(state), 0.125)


def test_phi_posterior_params():
    """Shape (v+1)/2 and rate (v + eta^2 e^-h)/2."""
    shape, rate = phi_posterior_params(np.array([2.0]), np.array([0.0]), 4.0)
    assert np.allclose(shape, 2.5)
    assert np.allclose(rate, 4.0)


def test_sample_phi_positive(rng):
    """phi draws are strictly positive; invalid dof is refused."""
    phi = sample_phi(rng.standard_normal((20, 2)), np.zeros((20, 2)), np.array([5.0, 8.0]), rng)
    assert np.all(phi > 0)
    with pytest.raises(ValueError):
        sample_phi(np.ones(3), np.zeros(3), 0.0, rng)


def test_dof_acceptance_edges(rng):
    """Out-of-support proposals never pass; identical proposals always pass."""
    phi = 1.0 / rng.gamma(2.5, 0.4, size=(100, 1))
    prior = DofPrior()
    assert dof_acceptance_probability(phi, 5.0, 25.0, prior)[0] == 0.0
    assert dof_acceptance_probability(phi, 5.0, 5.0, prior)[0] == 1.0


def test_dof_posterior_concentrates(rng):
    """Degrees of freedom settle near the value that generated phi."""
    v = 5.0
    phi = 1.0 / rng.gamma(v / 2, 2.0 / v, size=(3000, 1))
    current = np.array([15.0])
    draws = []
    for s in range(600):
        current = sample_dof(phi, DofPrior(), current, rng)
        if s >= 100:
            draws.append(current[0])
    assert 4.0 < np.median(draws) < 6.5


def _prior_draw(prior, rng):
    mu = rng.normal(prior.mu_mean, prior.mu_sd)
    rho = 2.0 * rng.beta(prior.rho_a, prior.rho_b) - 1.0
    varsigma = np.sqrt(rng.gamma(prior.var_shape, 1.0 / prior.var_rate))
    return mu, rho, varsigma


def _simulate_h(mu, rho, varsigma, T, rng):
    h = np.empty(T)
    h[0] = mu + varsigma / np.sqrt(1.0 - rho ** 2) * rng.standard_normal()
    for t in range(1, T):
        h[t] = mu + rho * (h[t - 1] - mu) + varsigma * rng.standard_normal()
    return h


@pytest.mark.slow
def test_sv_parameter_update_getting_it_right(rng):
    """Marginal-conditional and successive-conditional simulators agree on (mu, rho, varsigma)."""
    prior = SvPrior()
    T, n, thin = 20, 10000, 10

    marginal = np.array([_prior_draw(prior, rng) for _ in range(n)])

    mu, rho, varsigma = _prior_draw(prior, rng)
    state = SvState(np.zeros(T), mu, rho, varsigma, step=np.array([0.3]))
    successive = []
    for s in range(n * thin):
        h = _simulate_h(state.mu[0], state.rho[0], state.varsigma[0], T, rng)
        sample_sv_params(h, state, prior, rng)
        if s % thin == 0:
            successive.append((state.mu[0], state.rho[0], state.varsigma[0]))
    successive = np.array(successive)

    for col in range(3):
        assert stats.ks_2samp(marginal[:, col], successive[:, col]).pvalue > 0.01


@pytest.mark.slow
def test_volatility_block_getting_it_right(rng):
    """Prior draws and data / full-conditional cycles agree on (h, mu, rho, varsigma, phi, v) for one series."""
    prior = SvPrior(mu_sd=1.0)
    dof_prior = DofPrior()
    T, n, thin = 20, 3000, 10

    marginal = []
    for _ in range(10000):
        mu, rho, varsigma = _prior_draw(prior, rng)
        v = rng.uniform(dof_prior.lower, dof_prior.upper)
        h = _simulate_h(mu, rho, varsigma, T, rng)
        phi = 1.0 / rng.gamma(v / 2.0, 2.0 / v)
        marginal.append((mu, rho, varsigma, v, h[-1], phi))
    marginal = np.array(marginal)

    mu, rho, varsigma = _prior_draw(prior, rng)
    state = SvState(_simulate_h(mu, rho, varsigma, T, rng), mu, rho, varsigma, step=np.array([0.5]))
    dof = np.array([rng.uniform(dof_prior.lower, dof_prior.upper)])
    phi = 1.0 / rng.gamma(dof[0] / 2.0, 2.0 / dof[0], size=T)
    successive = []
    for s in range(n * thin):
        eta = np.sqrt(phi * np.exp(state.h)) * rng.standard_normal(T)
        state.h = sample_sv_path(log_square_residuals(eta, phi), state, rng)
        sample_sv_params(state.h, state, prior, rng)
        phi = sample_phi(eta, state.h, dof, rng)
        dof = sample_dof(phi, dof_prior, dof, rng)
        if s % thin == 0:
            successive.append((state.mu[0], state.rho[0], state.varsigma[0], dof[0], state.h[-1], phi[0]))
    successive = np.array(successive)

    for col in range(marginal.shape[1]):
        assert stats.ks_2samp(marginal[:, col], successive[:, col]).pvalue > 0.01

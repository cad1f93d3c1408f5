import numpy as np
import pytest
from scipy import stats

from services.state_space import (
    CoefficientState,
    EquationSystem,
    build_equation_system,
    draw_static_and_scales,
    ffbs_draw,
    fitted_values,
    lagged_design,
    static_moments,
)
from utils import make_generator


def test_lagged_design_layout():
    """Rows stack lag 1 first, then lag 2."""
    values = np.arange(12, dtype=float).reshape(6, 2)
    X = lagged_design(values, 2)
    assert X.shape == (4, 4)
    assert np.array_equal(X[0], [2.0, 3.0, 0.0, 1.0])


def test_equation_system_uses_negative_residuals():
    """Equation i appends the negated residuals of earlier equations."""
    values = np.random.default_rng(0).standard_normal((10, 3))
    resid = np.ones((2, 9))
    system = build_equation_system(values, 1, 3, resid)
    assert system.k == 5
    assert np.all(system.regressors[:, 3:] == -1.0)
    with pytest.raises(ValueError):
        build_equation_system(values, 1, 3, np.ones((1, 9)))


def test_flipped_state_keeps_path():
    """Jointly negating a scale root and its state leaves the coefficient path unchanged."""
    rng = np.random.default_rng(1)
    state = CoefficientState(rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal((5, 3)))
    flipped = state.flipped(np.array([True, False, True]))
    assert np.allclose(state.implied_path(), flipped.implied_path())


def test_ffbs_matches_exact_posterior():
    """FFBS draws reproduce the joint Gaussian posterior of a four-step k = 1 system."""
    rng = make_generator(3)
    T = 4
    z = np.array([[1.0], [-0.5], [2.0], [0.7]])
    y = np.array([0.3, -1.2, 0.8, 0.1])
    system = EquationSystem(1, z, y, 1, 1)
    root = np.array([0.8])
    obs = np.array([0.5, 1.0, 0.7, 2.0])

    # beta~ ~ N(0, L L') with L lower-triangular ones; y = root * z * beta~ + e
    prior_cov = np.minimum.outer(np.arange(1, T + 1), np.arange(1, T + 1)).astype(float)
    H = np.diag(root[0] * z[:, 0])
    precision = np.linalg.inv(prior_cov) + H.T @ np.diag(1 / obs) @ H
    cov = np.linalg.inv(precision)
    mean = cov @ H.T @ (y / obs)

    n = 100000
    draws = np.array([ffbs_draw(system, root, y, obs, rng)[:, 0] for _ in range(n)])
    se = draws.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 3 * se)
    assert np.allclose(np.cov(draws, rowvar=False), cov, atol=0.02 * np.abs(cov).max())


def test_ffbs_rejects_bad_variances(rng):
    """Nonpositive observation variances are refused."""
    values = np.random.default_rng(2).standard_normal((8, 1))
    system = build_equation_system(values, 1, 1)
    with pytest.raises(ValueError):
        ffbs_draw(system, np.ones(1), system.response, np.zeros(system.T), rng)


def test_static_draw_recovers_coefficients(rng):
    """With a diffuse prior the static draw centres on the least-squares fit."""
    data_rng = np.random.default_rng(4)
    values = np.zeros((400, 1))
    for t in range(1, 400):
        values[t] = 0.6 * values[t - 1] + data_rng.standard_normal()
    system = build_equation_system(values, 1, 1)
    mean, cov = static_moments(system, None, np.ones(system.T), np.full(1, 100.0))
    ols = np.linalg.lstsq(system.regressors, system.response, rcond=None)[0]
    assert np.allclose(mean, ols, atol=1e-3)
    beta0, root = draw_static_and_scales(system, None, np.ones(system.T), np.full(1, 100.0), rng)
    assert np.all(root == 0.0)
    assert abs(beta0[0] - 0.6) < 0.15


def test_fitted_values_terminal_row():
    """A one-row path evaluates with the terminal coefficients."""
    values = np.random.default_rng(5).standard_normal((6, 1))
    system = build_equation_system(values, 1, 1)
    state = CoefficientState(np.array([0.5]), np.array([0.1]), np.array([[2.0]]))
    assert np.allclose(fitted_values(system, state), system.regressors[:, 0] * 0.7)


def test_dogmatic_prior_pins_coefficient(rng):
    """A prior variance of 1e-12 holds that coefficient at zero whatever the data say."""
    values = np.random.default_rng(6).standard_normal((100, 2)) + 3.0
    system = build_equation_system(values, 1, 1)
    prior = np.array([1e-12, 100.0])
    for _ in range(20):
        beta0, _ = draw_static_and_scales(system, None, np.ones(system.T), prior, rng)
        assert abs(beta0[0]) < 1e-4


@pytest.mark.slow
def test_state_space_getting_it_right():
    """Prior draws and alternating data / conditional-update cycles agree on (beta0, sqrt_theta, beta~_T)."""
    rng = make_generator(21)
    T, k = 20, 2
    z = np.column_stack([np.ones(T), np.random.default_rng(8).standard_normal(T)])
    obs = np.ones(T)
    prior = np.ones(2 * k)
    n, thin = 3000, 5

    marginal = np.column_stack([
        rng.standard_normal(10000),
        rng.standard_normal(10000),
        rng.standard_normal(10000),
        rng.standard_normal(10000),
        np.sqrt(T) * rng.standard_normal(10000),
    ])

    beta0 = rng.standard_normal(k)
    root = rng.standard_normal(k)
    paths = np.cumsum(rng.standard_normal((T, k)), axis=0)
    successive = []
    for s in range(n * thin):
        y = np.einsum('tk,tk->t', z, beta0 + root * paths) + rng.standard_normal(T)
        system = EquationSystem(1, z, y, 2, 1)
        paths = ffbs_draw(system, root, y - z @ beta0, obs, rng)
        beta0, root = draw_static_and_scales(system, paths, obs, prior, rng)
        if s % thin == 0:
            successive.append([beta0[0], beta0[1], root[0], root[1], paths[-1, 0]])
    successive = np.array(successive)

    for col in range(marginal.shape[1]):
        assert stats.ks_2samp(marginal[:, col], successive[:, col]).pvalue > 0.01

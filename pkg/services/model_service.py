"""
CryptoTVP - Model Service
Assembles the Gibbs sweep of every model family, runs chains and turns the
retained draws into one-step-ahead predictive mixtures.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from kernels import GaussianMixture, NumericalError, mixture_logpdf, mixture_marginal, sample_mvn_precision
from services.model_spec import ModelSpec
from services.shrinkage import (
    MinnesotaData,
    MinnesotaState,
    NgState,
    SsvsState,
    adapt_minnesota_step,
    triangular_ols,
    update_all_local_scales,
    update_globals,
    update_minnesota,
    update_ssvs,
)
from services.state_space import (
    CoefficientState,
    draw_static_and_scales,
    equation_from_design,
    equation_loglik,
    ffbs_draw,
    fitted_values,
    lagged_design,
    reduced_form_residuals,
)
from services.volatility import (
    ADAPT_EVERY,
    SvState,
    TailState,
    adapt_step,
    log_square_residuals,
    sample_dof,
    sample_phi,
    sample_sv_params,
    sample_sv_path,
)
from utils import format_elapsed, make_generator

logger = logging.getLogger(__name__)

MIN_EXTRA_ROWS = 10
INITIAL_SCALE_ROOT = 0.01
INITIAL_DOF = 10.0


class SamplerError(RuntimeError):
    """A chain diverged or a factorisation failed; carries the sweep index."""

    def __init__(self, message, sweep=None, window=None):
        super().__init__(message)
        self.sweep = sweep
        self.window = window


@dataclass
class PosteriorDraw:
    """Full latent state after one retained sweep."""

    sweep: int
    sv: SvState
    coefficients: List[CoefficientState] = field(default_factory=list)
    tail: Optional[TailState] = None
    ng: Optional[NgState] = None
    ssvs: Optional[SsvsState] = None
    minnesota: Optional[MinnesotaState] = None
    ar: Optional[np.ndarray] = None

    @property
    def m(self):
        return self.sv.mu.shape[0]


@dataclass
class PredictiveDensity:
    """One-step-ahead predictive mixture of y_{T+1}, one equally weighted component per draw."""

    mixture: GaussianMixture
    model_tag: str
    names: Sequence[str]
    forecast_date: Optional[str] = None

    @property
    def n_components(self):
        return self.mixture.n_components

    def mean(self):
        return self.mixture.mean()

    def covariance(self):
        return self.mixture.covariance()

    def marginal(self, keep):
        keep = list(keep)
        return PredictiveDensity(mixture_marginal(self.mixture, keep), self.model_tag,
                                 [self.names[i] for i in keep], self.forecast_date)


# ============================================================================
# Chain internals
# ============================================================================
class _Chain:
    """Mutable sampler state of one chain on one estimation window."""

    def __init__(self, values, spec: ModelSpec, rng):
        self.spec = spec
        self.family = spec.family
        self.rng = rng
        self.p = spec.p
        self.values = np.asarray(values, dtype=float)
        self.T, self.m = self.values.shape
        if self.T <= spec.p + MIN_EXTRA_ROWS:
            raise ValueError(f"panel length {self.T} must exceed p + {MIN_EXTRA_ROWS} = {spec.p + MIN_EXTRA_ROWS}")
        self.Y = self.values[self.p:]
        self.n = self.Y.shape[0]

        if self.family.univariate:
            self._init_univariate()
        else:
            self._init_var()

        phi = np.ones((self.n, self.m))
        dof = np.full(self.m, spec.dof_fixed if spec.dof_fixed is not None else INITIAL_DOF)
        self.tail = TailState(phi, dof) if self.family.t_errors else None
        self.sv = SvState.initial(log_square_residuals(self.eta))

    # ------------------------------------------------------------------
    def _init_univariate(self):
        self.X = None
        self.lag1 = self.values[self.p - 1:-1]
        self.ar = np.zeros((self.m, 2))
        if self.family.prior == "ar":
            for j in range(self.m):
                Z = np.column_stack([np.ones(self.n), self.lag1[:, j]])
                self.ar[j] = np.linalg.lstsq(Z, self.Y[:, j], rcond=None)[0]
        self.eta = self._univariate_residuals()
        self.coefficients = []

    def _univariate_residuals(self):
        return self.Y - self.ar[:, 0] - self.ar[:, 1] * self.lag1

    def _init_var(self):
        spec = self.spec
        self.X = lagged_design(self.values, self.p)
        fits = triangular_ols(self.values, self.p)
        tvp = self.family.time_varying
        self.coefficients = []
        for coef, _ in fits:
            k = coef.shape[0]
            root = np.full(k, INITIAL_SCALE_ROOT) if tvp else np.zeros(k)
            paths = np.zeros((self.n if tvp else 1, k))
            self.coefficients.append(CoefficientState(coef.copy(), root, paths))

        prior = self.family.prior
        self.ng = NgState.initial(self.m, self.p, tvp) if prior == "ng" else None
        self.ssvs = SsvsState.from_ols([se for _, se in fits], spec.ssvs) if prior == "ssvs" else None
        if prior == "minnesota":
            self.minnesota_data = MinnesotaData.from_values(self.values, self.p)
            self.minnesota = MinnesotaState.initial(spec.minnesota, self.minnesota_data)
        else:
            self.minnesota = None
        self.ar = None

        self.eps = np.zeros((self.n, self.m))
        self.eta = np.zeros((self.n, self.m))
        for i in range(1, self.m + 1):
            system = self._system(i)
            state = self.coefficients[i - 1]
            self.eps[:, i - 1] = reduced_form_residuals(system, state)
            self.eta[:, i - 1] = system.response - system.regressors @ state.beta0

    def _system(self, i):
        return equation_from_design(self.X, self.Y[:, i - 1], i, self.eps[:, :i - 1].T, self.m, self.p)

    def _obs_variances(self, j):
        var = np.exp(self.sv.h[:, j])
        if self.tail is not None:
            var = var * self.tail.phi[:, j]
        return var

    def _prior(self, i):
        """Prior (variances, means) of equation i's static regression (0-based i)."""
        prior = self.family.prior
        k = self.m * self.p + i
        if prior == "ng":
            return self.ng.prior_variances(i), None
        if prior == "flat":
            return np.full(2 * k, self.spec.flat_variance), None
        if prior == "ssvs":
            return self.ssvs.prior_variances(i), None
        mean, variance = self.minnesota.prior(i, self.m, self.p, self.spec.minnesota.covariance_variance)
        return variance, mean

    # ------------------------------------------------------------------
    def _sv_block(self, j, eta_j):
        phi_j = None if self.tail is None else self.tail.phi[:, j]
        sub = self.sv.column(j)
        sub.h = sample_sv_path(log_square_residuals(eta_j, phi_j), sub, self.rng)
        sample_sv_params(sub.h, sub, self.spec.sv, self.rng)
        self.sv.assign(j, sub)

    def _var_sweep(self):
        tvp = self.family.time_varying
        for i in range(1, self.m + 1):
            j = i - 1
            system = self._system(i)
            state = self.coefficients[j]

            # 1. normalized state paths
            if tvp:
                baseline_fit = system.response - system.regressors @ state.beta0
                state.paths = ffbs_draw(system, state.sqrt_theta, baseline_fit, self._obs_variances(j), self.rng)

            # 2. log-volatilities of this equation
            eta = system.response - fitted_values(system, state)
            self._sv_block(j, eta)

            # 3. baselines and scale roots
            variances, means = self._prior(j)
            beta0, root = draw_static_and_scales(system, state.paths if tvp else None, self._obs_variances(j),
                                                 variances, self.rng, means)
            state = CoefficientState(beta0, root, state.paths if tvp else np.zeros((1, system.k)))
            self.coefficients[j] = state
            self.eta[:, j] = system.response - fitted_values(system, state)
            self.eps[:, j] = reduced_form_residuals(system, state)

        # 4-5. shrinkage hierarchy
        prior = self.family.prior
        if prior == "ng":
            betas = [c.beta0 for c in self.coefficients]
            roots = [c.sqrt_theta for c in self.coefficients]
            update_all_local_scales(self.ng, betas, roots, self.spec.ng, self.rng)
            update_globals(self.ng, self.spec.ng, self.rng)
        elif prior == "ssvs":
            for j, state in enumerate(self.coefficients):
                update_ssvs(state.beta0, j, self.ssvs, self.rng)
        elif prior == "minnesota" and self.spec.minnesota.estimate:
            update_minnesota(self.minnesota, self.minnesota_data, self.spec.minnesota, self.rng)

    def _univariate_sweep(self):
        for j in range(self.m):
            if self.family.prior == "ar":
                Z = np.column_stack([np.ones(self.n), self.lag1[:, j]])
                weights = 1.0 / np.exp(self.sv.h[:, j])
                precision = (Z * weights[:, None]).T @ Z + np.eye(2) / self.spec.ar_variance
                linear = (Z * weights[:, None]).T @ self.Y[:, j]
                self.ar[j], _ = sample_mvn_precision(precision, linear, self.rng, f"AR coefficients of series {j + 1}")
            eta = self.Y[:, j] - self.ar[j, 0] - self.ar[j, 1] * self.lag1[:, j]
            self.eta[:, j] = eta
            self._sv_block(j, eta)

    def _tail_block(self):
        # 6-7. latent scales and degrees of freedom
        self.tail.phi = np.asarray(sample_phi(self.eta, self.sv.h, self.tail.dof, self.rng)).reshape(self.n, self.m)
        if self.spec.dof_fixed is None:
            self.tail.dof = sample_dof(self.tail.phi, self.spec.dof, self.tail.dof, self.rng)

    def sweep(self, index):
        if self.family.univariate:
            self._univariate_sweep()
        else:
            self._var_sweep()
        if self.tail is not None:
            self._tail_block()
        if not (np.all(np.isfinite(self.eta)) and np.all(np.isfinite(self.sv.h))):
            raise SamplerError(f"non-finite likelihood at sweep {index}", sweep=index)

    def adapt(self):
        adapt_step(self.sv)
        if self.minnesota is not None:
            adapt_minnesota_step(self.minnesota)

    def snapshot(self, index, keep_paths):
        return PosteriorDraw(
            sweep=index,
            sv=self.sv.snapshot(keep_paths),
            coefficients=[c.snapshot(keep_paths) for c in self.coefficients],
            tail=None if self.tail is None else self.tail.snapshot(keep_paths),
            ng=None if getattr(self, "ng", None) is None else self.ng.copy(),
            ssvs=None if getattr(self, "ssvs", None) is None else self.ssvs.copy(),
            minnesota=None if getattr(self, "minnesota", None) is None else self.minnesota.copy(),
            ar=None if self.ar is None or self.family.prior != "ar" else self.ar.copy(),
        )


def _tail_values(panel):
    return panel.values if hasattr(panel, "values") else np.asarray(panel, dtype=float)


# ============================================================================
# Service
# ============================================================================
class ModelService:
    """Estimation and prediction for every model family."""

    @staticmethod
    def run_chain(panel, spec: ModelSpec, rng=None) -> List[PosteriorDraw]:
        """
        Run one chain and return the post-burn-in, thinned draws.
        Deterministic given spec.seed (or the supplied generator).
        """
        rng = make_generator(spec.seed) if rng is None else rng
        values = _tail_values(panel)
        chain = _Chain(values, spec, rng)
        settings = spec.mcmc
        draws = []
        started = time.perf_counter()
        logger.info(f"Starting {spec.tag} chain: T={chain.T}, m={chain.m}, "
                    f"{settings.iterations} iterations ({settings.burn_in} burn-in)")

        for s in range(settings.iterations):
            try:
                chain.sweep(s)
            except NumericalError as e:
                logger.error(f"{spec.tag} chain failed at sweep {s}: {e}", exc_info=True)
                raise SamplerError(f"{e} (sweep {s})", sweep=s) from e
            if s < settings.burn_in:
                if (s + 1) % ADAPT_EVERY == 0:
                    chain.adapt()
            elif (s - settings.burn_in) % settings.thin == 0:
                draws.append(chain.snapshot(s, spec.keep_paths))

        logger.info(f"Finished {spec.tag} chain in {format_elapsed(time.perf_counter() - started)}; "
                    f"{len(draws)} draws retained")
        return draws

    @staticmethod
    def thin_for_prediction(draws, max_components):
        if len(draws) <= max_components:
            return list(draws)
        step = math.ceil(len(draws) / max_components)
        return list(draws[::step])

    @staticmethod
    def predict_one_step(draws: Sequence[PosteriorDraw], panel, spec: ModelSpec, rng=None,
                         forecast_date=None, names=None) -> PredictiveDensity:
        """
        Predictive mixture of y_{T+1} given the training panel: coefficients and
        log-volatilities are propagated one step with simulated innovations.
        """
        if not draws:
            raise ValueError("predict_one_step needs at least one posterior draw")
        rng = make_generator(spec.seed + 1) if rng is None else rng
        values = _tail_values(panel)
        names = names or getattr(panel, "names", None) or tuple(f"y{j + 1}" for j in range(values.shape[1]))
        used = ModelService.thin_for_prediction(draws, spec.mcmc.max_components)

        means, covs = [], []
        for draw in used:
            mean, cov = ModelService._draw_component(draw, values, spec, rng)
            means.append(mean)
            covs.append(cov)
        mixture = GaussianMixture.equal_weights(np.array(means), np.array(covs))
        return PredictiveDensity(mixture, spec.tag, tuple(names), forecast_date)

    @staticmethod
    def _draw_component(draw: PosteriorDraw, values, spec: ModelSpec, rng):
        m = values.shape[1]
        sv = draw.sv
        h_last = sv.h[-1]
        h_next = sv.mu + sv.rho * (h_last - sv.mu) + sv.varsigma * rng.standard_normal(m)
        variances = np.exp(h_next)
        if draw.tail is not None:
            dof = draw.tail.dof
            variances = variances / rng.gamma(dof / 2.0, 2.0 / dof)

        if spec.family.univariate:
            mean = np.zeros(m) if draw.ar is None or spec.family.prior != "ar" else draw.ar[:, 0] + draw.ar[:, 1] * values[-1]
            return mean, np.diag(variances)

        p = spec.p
        mp = m * p
        x_next = values[::-1][:p].reshape(-1)
        A = np.empty((m, mp))
        U_inv = np.eye(m)
        for i, coef in enumerate(draw.coefficients):
            beta = coef.beta0 + coef.sqrt_theta * coef.paths[-1]
            if spec.family.time_varying:
                beta = beta + coef.sqrt_theta * rng.standard_normal(coef.k)
            A[i] = beta[:mp]
            U_inv[i, :i] = beta[mp:]
        U = solve_triangular(U_inv, np.eye(m), lower=True, unit_diagonal=True)
        cov = (U * variances) @ U.T
        return A @ x_next, 0.5 * (cov + cov.T)

    @staticmethod
    def joint_and_marginal_logscore(density: PredictiveDensity, realized, targets):
        """Joint log score over the targets and one marginal log score per target."""
        realized = np.asarray(realized, dtype=float).reshape(-1)
        if realized.shape[0] != density.mixture.dim:
            raise ValueError(f"dimension mismatch: realized has {realized.shape[0]} entries, "
                             f"density has {density.mixture.dim}")
        if not np.all(np.isfinite(realized)):
            raise ValueError("realized values must be finite")
        targets = list(targets)
        joint = mixture_logpdf(realized[targets], mixture_marginal(density.mixture, targets))
        marginals = [mixture_logpdf(realized[[j]], mixture_marginal(density.mixture, [j])) for j in targets]
        return joint, marginals

    @staticmethod
    def log_likelihood(panel, spec: ModelSpec, draw: PosteriorDraw):
        """Conditional log likelihood of the estimation sample given one full draw (full paths required)."""
        values = _tail_values(panel)
        p = spec.p
        X = lagged_design(values, p)
        Y = values[p:]
        n, m = Y.shape
        phi = np.ones((n, m)) if draw.tail is None else draw.tail.phi
        variances = phi * np.exp(draw.sv.h)
        eps = np.zeros((n, m))
        total = 0.0
        for i, coef in enumerate(draw.coefficients, start=1):
            system = equation_from_design(X, Y[:, i - 1], i, eps[:, :i - 1].T, m, p)
            total += equation_loglik(system, coef, variances[:, i - 1])
            eps[:, i - 1] = reduced_form_residuals(system, coef)
        return total

"""
CryptoTVP - Evaluation Service
Expanding-window forecast harness and forecast scoring: joint and marginal
log predictive scores, RMSE, cumulative log predictive Bayes factors, PIT
normalized errors and the mean / variance / persistence tests on them.
"""

import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
import statsmodels.api as sm
from scipy import stats

from kernels import mixture_cdf_univariate, mixture_marginal
from services.model_service import MIN_EXTRA_ROWS, ModelService, PredictiveDensity, SamplerError
from utils import derive_window_seed, make_generator

logger = logging.getLogger(__name__)

PIT_CLAMP = 1e-12
MIN_PIT_LENGTH = 30


@dataclass
class ForecastRecord:
    """One hold-out date: the predictive density and the realized values on the same coordinates."""

    window_index: int
    forecast_date: str
    model_tag: str
    density: PredictiveDensity
    realized: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.realized = np.asarray(self.realized, dtype=float).reshape(-1)
        if self.realized.shape[0] != self.density.mixture.dim:
            raise ValueError(f"realized vector has {self.realized.shape[0]} entries, "
                             f"density has {self.density.mixture.dim}")


@dataclass(frozen=True)
class PitTests:
    mean: float
    mean_p: float
    variance: float
    variance_p: float
    persistence: float
    persistence_p: float

    def as_dict(self):
        return {
            "mean": self.mean, "mean_p": self.mean_p,
            "variance": self.variance, "variance_p": self.variance_p,
            "persistence": self.persistence, "persistence_p": self.persistence_p,
        }


@dataclass
class EvalReport:
    model_tag: str
    dates: List[str]
    target_names: List[str]
    joint_scores: np.ndarray
    marginal_scores: np.ndarray
    rmse: np.ndarray
    pit: np.ndarray
    tests: Dict[str, Optional[PitTests]] = field(default_factory=dict)

    @property
    def joint_lps(self):
        return float(self.joint_scores.sum())

    @property
    def marginal_lps(self):
        return self.marginal_scores.sum(axis=0)

    def __len__(self):
        return len(self.dates)


# ============================================================================
# Expanding-window harness
# ============================================================================
def window_spec(spec, window_index):
    """Per-window chain spec: derived seed, terminal states only."""
    seed = derive_window_seed(spec.seed, window_index, spec.tag)
    return spec.with_updates(seed=seed, keep_paths=False)


def forecast_window(panel, spec, holdout, window_index, targets):
    """Estimate on all rows before the hold-out date of window_index and forecast that date."""
    row = panel.T - holdout + window_index
    train = panel.head(row)
    chain_spec = window_spec(spec, window_index)
    rng = make_generator(chain_spec.seed)
    try:
        draws = ModelService.run_chain(train, chain_spec, rng)
        density = ModelService.predict_one_step(draws, train, chain_spec, rng,
                                                forecast_date=str(panel.dates[row]), names=panel.names)
    except Exception as e:
        raise SamplerError(f"{spec.tag} failed at window {window_index}: {e}", window=window_index) from e
    targets = list(targets)
    return ForecastRecord(window_index, str(panel.dates[row]), spec.tag, density.marginal(targets),
                          panel.values[row, targets], chain_spec.seed)


def expanding_window_run(panel, spec, holdout, jobs=1, targets=None, skip: Iterable[int] = (),
                         on_record: Optional[Callable[[ForecastRecord], None]] = None) -> List[ForecastRecord]:
    """
    One-step forecasts for the last `holdout` dates, each re-estimated on every
    earlier observation. Records keep the target-marginal density only.
    Results do not depend on jobs or completion order.
    """
    if holdout < 1:
        raise ValueError("holdout must be at least 1")
    min_train = spec.p + MIN_EXTRA_ROWS + 1
    if panel.T - holdout < min_train:
        raise ValueError(f"panel length {panel.T} leaves fewer than {min_train} training rows for holdout {holdout}")
    targets = list(panel.target_indices if targets is None else targets)
    skip = set(skip)
    windows = [w for w in range(holdout) if w not in skip]
    logger.info(f"Expanding-window run for {spec.tag}: {len(windows)} of {holdout} windows, jobs={jobs}")

    records = []
    if jobs <= 1 or len(windows) <= 1:
        for w in windows:
            record = forecast_window(panel, spec, holdout, w, targets)
            if on_record is not None:
                on_record(record)
            records.append(record)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            futures = {executor.submit(forecast_window, panel, spec, holdout, w, targets): w for w in windows}
            for future in as_completed(futures):
                w = futures[future]
                try:
                    record = future.result()
                except Exception as e:
                    logger.error(f"Window {w} of {spec.tag} failed: {e}", exc_info=True)
                    for other in futures:
                        other.cancel()
                    raise
                if on_record is not None:
                    on_record(record)
                records.append(record)

    records.sort(key=lambda r: r.window_index)
    logger.info(f"Completed {len(records)} windows for {spec.tag}")
    return records


# ============================================================================
# Scores
# ============================================================================
def pit_z_series(records: Sequence[ForecastRecord], target):
    """Phi^-1 of the predictive CDF at the realized value, CDF clipped to [1e-12, 1 - 1e-12]."""
    z = np.empty(len(records))
    for t, record in enumerate(records):
        marginal = mixture_marginal(record.density.mixture, [target])
        u = mixture_cdf_univariate(marginal, record.realized[target])
        z[t] = stats.norm.ppf(np.clip(u, PIT_CLAMP, 1.0 - PIT_CLAMP))
    return z


def _normal_p(t_stat):
    return float(2.0 * stats.norm.sf(abs(t_stat)))


def pit_tests(z) -> PitTests:
    """
    OLS tests on PIT normalized errors with asymptotic normal p-values:
    z on a constant (H0: 0), z^2 on a constant (H0: 1), and the AR(1) slope of z (H0: 0).
    """
    z = np.asarray(z, dtype=float)
    if z.shape[0] < MIN_PIT_LENGTH:
        raise ValueError(f"PIT tests need at least {MIN_PIT_LENGTH} observations, got {z.shape[0]}")
    if np.ptp(z) == 0:
        raise ValueError("degenerate series: PIT errors are constant")

    ones = np.ones(z.shape[0])
    mean_fit = sm.OLS(z, ones).fit()
    var_fit = sm.OLS(z ** 2, ones).fit()
    ar_fit = sm.OLS(z[1:], sm.add_constant(z[:-1], has_constant="add")).fit()

    mean = float(mean_fit.params[0])
    variance = float(var_fit.params[0])
    slope = float(ar_fit.params[1])
    return PitTests(
        mean=mean,
        mean_p=_normal_p(mean / mean_fit.bse[0]),
        variance=variance,
        variance_p=_normal_p((variance - 1.0) / var_fit.bse[0]),
        persistence=slope,
        persistence_p=_normal_p(slope / ar_fit.bse[1]),
    )


def score(records: Sequence[ForecastRecord], targets=None) -> EvalReport:
    """Fold the records into log scores, RMSE and PIT diagnostics."""
    if not records:
        raise ValueError("cannot score an empty record list")
    dim = records[0].density.mixture.dim
    targets = list(range(dim) if targets is None else targets)
    n = len(records)

    joint = np.empty(n)
    marginal = np.empty((n, len(targets)))
    sq_err = np.empty((n, len(targets)))
    for t, record in enumerate(records):
        joint[t], marginal[t] = ModelService.joint_and_marginal_logscore(record.density, record.realized, targets)
        sq_err[t] = (record.realized[targets] - record.density.mean()[targets]) ** 2

    names = [records[0].density.names[j] for j in targets]
    pit = np.column_stack([pit_z_series(records, j) for j in targets])
    tests = {}
    for col, name in enumerate(names):
        try:
            tests[name] = pit_tests(pit[:, col])
        except ValueError as e:
            logger.warning(f"PIT tests skipped for {name}: {e}")
            tests[name] = None

    return EvalReport(
        model_tag=records[0].model_tag,
        dates=[r.forecast_date for r in records],
        target_names=names,
        joint_scores=joint,
        marginal_scores=marginal,
        rmse=np.sqrt(sq_err.mean(axis=0)),
        pit=pit,
        tests=tests,
    )


def bayes_factor_series(report_a: EvalReport, report_b: EvalReport, target=None):
    """Cumulative log predictive Bayes factor of a over b, joint or for one target column."""
    if list(report_a.dates) != list(report_b.dates):
        raise ValueError("reports cover different dates")
    if target is None:
        diff = report_a.joint_scores - report_b.joint_scores
    else:
        diff = report_a.marginal_scores[:, target] - report_b.marginal_scores[:, target]
    return np.cumsum(diff)


def bayes_factor_frame(reports: Dict[str, EvalReport], baseline: str):
    """Per-date cumulative log BFs of every model against the baseline (joint and per target)."""
    if baseline not in reports:
        raise ValueError(f"baseline model {baseline} has no report")
    base = reports[baseline]
    frame = pd.DataFrame({"date": base.dates})
    for tag, report in reports.items():
        if tag == baseline:
            continue
        frame[f"{tag}_joint"] = bayes_factor_series(report, base)
        for col, name in enumerate(report.target_names):
            frame[f"{tag}_{name}"] = bayes_factor_series(report, base, col)
    return frame

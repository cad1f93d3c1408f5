"""
CryptoTVP - Data Service
Loads, validates and transforms price/predictor panels, writes them back in
the documented CSV dialect, and simulates synthetic panels from the model
equations for sampler validation.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from services.model_spec import ModelFamily, ModelSpec
from utils import make_generator

logger = logging.getLogger(__name__)

MIN_SIMULATION_LENGTH = 50
DEFAULT_START_DATE = "2016-11-22"


@dataclass(frozen=True)
class Panel:
    """
    Dated T x m matrix of series. The first p rows condition the lags of the
    estimation system; target_indices point at the crypto-return columns.
    """

    dates: np.ndarray
    values: np.ndarray
    names: Tuple[str, ...]
    target_indices: Tuple[int, ...] = ()

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]").reshape(-1)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        names = tuple(str(n) for n in self.names)
        targets = tuple(int(i) for i in self.target_indices) or tuple(range(min(3, values.shape[1])))

        if values.shape[1] < 1:
            raise ValueError("panel needs at least one series")
        if values.shape != (dates.shape[0], len(names)):
            raise ValueError(f"panel shape mismatch: {values.shape} values, {dates.shape[0]} dates, "
                             f"{len(names)} names")
        if dates.shape[0] > 1 and np.any(np.diff(dates).astype(np.int64) <= 0):
            raise ValueError("non-monotone dates")
        if not np.all(np.isfinite(values)):
            raise ValueError("panel contains missing or non-finite values")
        if len(set(targets)) != len(targets) or any(i < 0 or i >= len(names) for i in targets):
            raise ValueError(f"target indices {targets} must be distinct and within 0..{len(names) - 1}")

        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "target_indices", targets)

    @property
    def T(self):
        return self.values.shape[0]

    @property
    def m(self):
        return self.values.shape[1]

    @property
    def target_names(self):
        return [self.names[i] for i in self.target_indices]

    def head(self, rows):
        """First `rows` observations (expanding-window training sample)."""
        return Panel(self.dates[:rows], self.values[:rows], self.names, self.target_indices)

    def log_returns(self):
        """Panel of log returns; the first date is dropped."""
        return Panel(self.dates[1:], to_log_returns(self.values), self.names, self.target_indices)

    def to_frame(self):
        frame = pd.DataFrame(self.values, columns=list(self.names))
        frame.insert(0, "date", pd.to_datetime(self.dates).strftime("%Y-%m-%d"))
        return frame


@dataclass(frozen=True)
class PanelSchema:
    """Column mapping of a panel CSV."""

    date_column: str
    value_columns: Sequence[str]
    target_columns: Sequence[str] = field(default_factory=tuple)


# ============================================================================
# CSV ingestion
# ============================================================================
def load_panel(path, schema: PanelSchema) -> Panel:
    """
    Read a comma-separated, ISO-dated panel with a mandatory header row.
    Unsorted rows are sorted; duplicated dates and missing cells are errors.
    """
    if not schema.date_column or not schema.value_columns:
        raise ValueError("schema must name a date column and at least one value column")
    try:
        frame = pd.read_csv(path, comment="#", dtype={schema.date_column: str},
                            float_precision="round_trip")
    except FileNotFoundError:
        raise
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ValueError(f"malformed CSV {path}: {e}") from e

    wanted = [schema.date_column, *schema.value_columns]
    unknown = [c for c in [*wanted, *schema.target_columns] if c not in frame.columns]
    if unknown:
        raise ValueError(f"unknown column(s) in schema: {', '.join(unknown)}")
    missing_targets = [c for c in schema.target_columns if c not in schema.value_columns]
    if missing_targets:
        raise ValueError(f"target column(s) not among value columns: {', '.join(missing_targets)}")

    frame = frame[wanted]
    if frame.isna().any().any():
        bad = frame.columns[frame.isna().any()].tolist()
        raise ValueError(f"missing cells in column(s): {', '.join(bad)}")

    try:
        dates = pd.to_datetime(frame[schema.date_column], format="%Y-%m-%d")
        values = frame[list(schema.value_columns)].astype(float).to_numpy()
    except (ValueError, TypeError) as e:
        raise ValueError(f"malformed CSV {path}: {e}") from e

    if dates.duplicated().any():
        raise ValueError(f"non-monotone dates: duplicated {dates[dates.duplicated()].iloc[0].date()}")
    if not dates.is_monotonic_increasing:
        logger.warning(f"Panel {path} was not sorted by date; sorting")
        order = np.argsort(dates.to_numpy(), kind="stable")
        dates = dates.iloc[order]
        values = values[order]

    targets = tuple(list(schema.value_columns).index(c) for c in schema.target_columns)
    panel = Panel(dates.to_numpy(), values, tuple(schema.value_columns), targets)
    logger.info(f"Loaded panel {path}: T={panel.T}, m={panel.m}")
    return panel


def save_panel(panel: Panel, path, header_comment: Optional[str] = None):
    """Write a panel in the dialect load_panel reads back bit-exactly."""
    with open(path, "w", newline="") as handle:
        if header_comment:
            handle.write(f"# {header_comment}\n")
        panel.to_frame().to_csv(handle, index=False, float_format=None)


def to_log_returns(prices) -> np.ndarray:
    """Row t holds ln(p_{t+1}) - ln(p_t)."""
    prices = np.asarray(prices, dtype=float)
    if prices.ndim == 1:
        prices = prices[:, None]
    if prices.shape[0] < 2:
        raise ValueError("need at least two price observations")
    if np.any(prices <= 0) or not np.all(np.isfinite(prices)):
        raise ValueError("nonpositive price")
    return np.diff(np.log(prices), axis=0)


def describe_panel(panel: Panel):
    """
    Descriptive plot data: target log returns and their squares by date, and
    the lower Cholesky factor of the empirical correlation matrix.
    """
    frame = pd.DataFrame({"date": pd.to_datetime(panel.dates).strftime("%Y-%m-%d")})
    for i in panel.target_indices:
        name = panel.names[i]
        frame[name] = panel.values[:, i]
        frame[f"{name}_sq"] = panel.values[:, i] ** 2

    corr = np.corrcoef(panel.values, rowvar=False) if panel.m > 1 else np.ones((1, 1))
    chol = np.linalg.cholesky(corr + 1e-12 * np.eye(panel.m))
    cholesky = pd.DataFrame(chol, index=list(panel.names), columns=list(panel.names))
    return {"returns": frame, "cholesky": cholesky}


# ============================================================================
# Synthetic panels
# ============================================================================
@dataclass
class DgpTruth:
    """Every latent of a simulated panel (ground truth for recovery checks)."""

    family: str
    p: int
    beta0: List[np.ndarray]
    sqrt_theta: List[np.ndarray]
    beta_paths: List[np.ndarray]
    h: np.ndarray
    phi: np.ndarray
    mu: np.ndarray
    rho: np.ndarray
    varsigma: np.ndarray
    dof: Optional[np.ndarray] = None

    def __post_init__(self):
        if np.any(np.abs(self.rho) >= 1):
            raise ValueError("volatility persistence must satisfy |rho| < 1")
        if self.dof is not None and np.any((self.dof <= 2) | (self.dof > 20)):
            raise ValueError("degrees of freedom must lie in (2, 20]")
        if self.h.shape != self.phi.shape:
            raise ValueError("h and phi paths must share a shape")

    def to_dict(self):
        return {
            "family": self.family,
            "p": self.p,
            "beta0": [b.tolist() for b in self.beta0],
            "sqrt_theta": [s.tolist() for s in self.sqrt_theta],
            "beta_paths": [b.tolist() for b in self.beta_paths],
            "h": self.h.tolist(),
            "phi": self.phi.tolist(),
            "mu": self.mu.tolist(),
            "rho": self.rho.tolist(),
            "varsigma": self.varsigma.tolist(),
            "dof": None if self.dof is None else self.dof.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        arr = np.asarray
        return cls(
            family=data["family"],
            p=int(data["p"]),
            beta0=[arr(b, dtype=float) for b in data["beta0"]],
            sqrt_theta=[arr(s, dtype=float) for s in data["sqrt_theta"]],
            beta_paths=[arr(b, dtype=float).reshape(-1, len(b0)) for b, b0 in zip(data["beta_paths"], data["beta0"])],
            h=arr(data["h"], dtype=float),
            phi=arr(data["phi"], dtype=float),
            mu=arr(data["mu"], dtype=float),
            rho=arr(data["rho"], dtype=float),
            varsigma=arr(data["varsigma"], dtype=float),
            dof=None if data.get("dof") is None else arr(data["dof"], dtype=float),
        )

    def to_json(self, path, extra: Optional[dict] = None):
        payload = self.to_dict()
        if extra:
            payload.update(extra)
        with open(path, "w") as handle:
            json.dump(payload, handle, sort_keys=True)

    @classmethod
    def from_json(cls, path):
        with open(path) as handle:
            return cls.from_dict(json.load(handle))


def _true_coefficients(spec: ModelSpec, m: int, rng):
    """Baseline coefficients and state scales for every equation."""
    settings = spec.dgp
    mp = m * spec.p
    beta0, sqrt_theta = [], []
    for i in range(m):
        k = mp + i
        b = np.zeros(k)
        for lag in range(1, spec.p + 1):
            block = slice((lag - 1) * m, lag * m)
            b[block] = rng.normal(0.0, settings.cross_sd, m) / lag ** 2
            b[(lag - 1) * m + i] = settings.own_lag / lag ** 2
        b[mp:] = rng.normal(0.0, settings.covariance_sd, i)

        s = np.zeros(k)
        if spec.family.time_varying and settings.tvp_scale > 0:
            active = rng.random(k) < settings.tvp_share
            s[active] = settings.tvp_scale
        beta0.append(b)
        sqrt_theta.append(s)
    return beta0, sqrt_theta


def simulate_dgp(spec: ModelSpec, T: int, seed: int, m: int = 3):
    """
    Draw a panel exactly from the model equations.

    Latent h and phi cover all T rows; coefficient paths cover the T - p rows
    of the estimation system. Identical seeds give identical output.
    """
    if spec.family.univariate:
        raise ValueError(f"{spec.tag} is not a generative VAR family")
    if T < MIN_SIMULATION_LENGTH:
        raise ValueError(f"simulation length must be at least {MIN_SIMULATION_LENGTH}")
    settings = spec.dgp
    if abs(settings.rho) >= 1:
        raise ValueError("nonstationary volatility parameters requested (|rho| >= 1)")
    if spec.family.t_errors and not 2 < settings.dof <= 20:
        raise ValueError("degrees of freedom must lie in (2, 20]")

    rng = make_generator(seed)
    p = spec.p
    mp = m * p
    beta0, sqrt_theta = _true_coefficients(spec, m, rng)

    mu = np.full(m, settings.mu)
    rho = np.full(m, settings.rho)
    varsigma = np.full(m, settings.varsigma)
    h = np.empty((T, m))
    h[0] = mu + varsigma / np.sqrt(1.0 - rho ** 2) * rng.standard_normal(m)
    for t in range(1, T):
        h[t] = mu + rho * (h[t - 1] - mu) + varsigma * rng.standard_normal(m)

    if spec.family.t_errors:
        dof = np.full(m, settings.dof)
        phi = 1.0 / rng.gamma(dof / 2.0, 2.0 / dof, size=(T, m))
    else:
        dof = None
        phi = np.ones((T, m))

    eta = np.sqrt(phi * np.exp(h)) * rng.standard_normal((T, m))
    y = np.zeros((T, m))
    y[:p] = eta[:p]

    t_eff = T - p
    beta_paths = []
    for i in range(m):
        walk = np.cumsum(rng.standard_normal((t_eff, mp + i)), axis=0)
        beta_paths.append(beta0[i] + walk * sqrt_theta[i])

    for t in range(p, T):
        x = y[t - p:t][::-1].reshape(-1)
        eps = np.zeros(m)
        for i in range(m):
            beta = beta_paths[i][t - p]
            z = np.concatenate([x, -eps[:i]])
            y[t, i] = beta @ z + eta[t, i]
            eps[i] = y[t, i] - beta[:mp] @ x

    names = tuple(f"y{j + 1}" for j in range(m))
    dates = pd.date_range(DEFAULT_START_DATE, periods=T, freq="D").to_numpy()
    panel = Panel(dates, y, names, tuple(range(min(3, m))))
    truth = DgpTruth(spec.tag, p, beta0, sqrt_theta, beta_paths, h, phi, mu, rho, varsigma, dof)
    logger.info(f"Simulated {spec.tag} panel: T={T}, m={m}, seed={seed}")
    return panel, truth

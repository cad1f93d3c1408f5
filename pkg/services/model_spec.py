"""
CryptoTVP - Model Specification
Model family tags and every hyperparameter a chain needs. Defaults follow
the benchmark setup: kappa = 0.1, c0 = 1.5, d0 = 1, a0 = b0 = 0.01, one lag,
30,000 iterations with 15,000 discarded as burn-in.
"""

from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Optional


class ModelFamily(str, Enum):
    """The nine-model comparison set (minus the external threshold model)."""

    T_TVP_NG = "tTvpNg"
    TVP_NG = "TvpNg"
    TVP_FLAT = "TvpFlat"
    NG_VAR = "NgVar"
    MINN_VAR = "MinnVar"
    SSVS_VAR = "SsvsVar"
    RW_SV = "RwSv"
    AR_SV = "ArSv"

    @classmethod
    def parse(cls, tag):
        if isinstance(tag, cls):
            return tag
        try:
            return cls(tag)
        except ValueError:
            known = ", ".join(f.value for f in cls)
            raise ValueError(f"Unknown model family '{tag}' (known: {known})") from None

    @property
    def time_varying(self):
        return self in (ModelFamily.T_TVP_NG, ModelFamily.TVP_NG, ModelFamily.TVP_FLAT)

    @property
    def t_errors(self):
        return self is ModelFamily.T_TVP_NG

    @property
    def univariate(self):
        return self in (ModelFamily.RW_SV, ModelFamily.AR_SV)

    @property
    def prior(self):
        return {
            ModelFamily.T_TVP_NG: "ng",
            ModelFamily.TVP_NG: "ng",
            ModelFamily.NG_VAR: "ng",
            ModelFamily.TVP_FLAT: "flat",
            ModelFamily.MINN_VAR: "minnesota",
            ModelFamily.SSVS_VAR: "ssvs",
            ModelFamily.AR_SV: "ar",
            ModelFamily.RW_SV: "none",
        }[self]

    @property
    def label(self):
        return {
            ModelFamily.T_TVP_NG: "t-TVP NG",
            ModelFamily.TVP_NG: "TVP NG",
            ModelFamily.TVP_FLAT: "TVP",
            ModelFamily.NG_VAR: "NG-VAR",
            ModelFamily.MINN_VAR: "Minn-VAR",
            ModelFamily.SSVS_VAR: "SSVS",
            ModelFamily.RW_SV: "RW-SV",
            ModelFamily.AR_SV: "AR-SV",
        }[self]


@dataclass(frozen=True)
class NgHyper:
    kappa: float = 0.1
    c0: float = 1.5
    d0: float = 1.0
    a0: float = 0.01
    b0: float = 0.01


@dataclass(frozen=True)
class SvPrior:
    """mu ~ N(mu_mean, mu_sd^2), (rho+1)/2 ~ Beta(rho_a, rho_b), varsigma^2 ~ Gamma(var_shape, var_rate)."""

    mu_mean: float = 0.0
    mu_sd: float = 10.0
    rho_a: float = 25.0
    rho_b: float = 5.0
    var_shape: float = 0.5
    var_rate: float = 0.5


@dataclass(frozen=True)
class DofPrior:
    lower: float = 2.0
    upper: float = 20.0


@dataclass(frozen=True)
class SsvsSettings:
    spike_scale: float = 0.1
    slab_scale: float = 10.0
    inclusion: float = 0.5


@dataclass(frozen=True)
class MinnesotaSettings:
    lambda1: float = 0.2
    lambda2: float = 0.5
    own_lag_mean: float = 0.0
    hyper_shape: float = 1.0
    hyper_rate: float = 1.0
    covariance_variance: float = 100.0
    estimate: bool = True


@dataclass(frozen=True)
class McmcSettings:
    iterations: int = 30000
    burn_in: int = 15000
    thin: int = 1
    max_components: int = 1000


@dataclass(frozen=True)
class DgpSettings:
    """True parameter recipe used by the synthetic-panel generator."""

    mu: float = -2.0
    rho: float = 0.95
    varsigma: float = 0.2
    dof: float = 5.0
    own_lag: float = 0.3
    cross_sd: float = 0.05
    covariance_sd: float = 0.3
    tvp_scale: float = 0.01
    tvp_share: float = 0.5


@dataclass(frozen=True)
class ModelSpec:
    family: ModelFamily
    p: int = 1
    ng: NgHyper = field(default_factory=NgHyper)
    sv: SvPrior = field(default_factory=SvPrior)
    dof: DofPrior = field(default_factory=DofPrior)
    ssvs: SsvsSettings = field(default_factory=SsvsSettings)
    minnesota: MinnesotaSettings = field(default_factory=MinnesotaSettings)
    flat_variance: float = 1.0
    ar_variance: float = 100.0
    mcmc: McmcSettings = field(default_factory=McmcSettings)
    dgp: DgpSettings = field(default_factory=DgpSettings)
    seed: int = 0
    dof_fixed: Optional[float] = None
    keep_paths: bool = True

    def __post_init__(self):
        object.__setattr__(self, "family", ModelFamily.parse(self.family))
        if self.p < 1:
            raise ValueError("lag order p must be at least 1")
        if not 0 <= self.mcmc.burn_in < self.mcmc.iterations:
            raise ValueError("burn-in must be nonnegative and smaller than the number of iterations")
        if self.mcmc.thin < 1 or self.mcmc.max_components < 1:
            raise ValueError("thinning and max_components must be positive")
        if not self.dof.lower < self.dof.upper:
            raise ValueError("degrees-of-freedom bounds must satisfy lower < upper")
        if self.dof_fixed is not None and not self.dof.lower < self.dof_fixed <= self.dof.upper:
            raise ValueError("dof_fixed must lie inside the degrees-of-freedom prior support")

    @property
    def tag(self):
        return self.family.value

    def with_updates(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        data = asdict(self)
        data["family"] = self.family.value
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        nested = {
            "ng": NgHyper, "sv": SvPrior, "dof": DofPrior, "ssvs": SsvsSettings,
            "minnesota": MinnesotaSettings, "mcmc": McmcSettings, "dgp": DgpSettings,
        }
        for key, kind in nested.items():
            if key in data and isinstance(data[key], dict):
                data[key] = kind(**data[key])
        return cls(**data)

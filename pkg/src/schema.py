from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import Config


class StrictModel(BaseModel):
    """Base for every config model: unknown keys are errors, values are immutable"""
    model_config = ConfigDict(extra="forbid", frozen=True)


# ---------------------------------------------------------------------------
# Model parameters
# ---------------------------------------------------------------------------

class ThetaLogisticParams(StrictModel):
    """Static parameter theta = (r, zeta, K) of the log-theta-logistic model"""
    r: float = Field(default=0.3, lt=2.69, description="growth rate")
    zeta: float = Field(default=1.0, allow_inf_nan=False, description="shape")
    K: float = Field(default=500.0, gt=0, description="carrying capacity")


class LinearGaussianParams(StrictModel):
    """x_n = ar_coeff * x_{n-1} + N(0, state_var); y_n = x_n + N(0, obs_var)"""
    ar_coeff: float = Field(default=0.9, allow_inf_nan=False)
    state_var: float = Field(default=1.0, gt=0)
    # obs_var == 0 is accepted for simulation only, the density is degenerate
    obs_var: float = Field(default=1.0, ge=0)
    init_mean: float = Field(default=0.0, allow_inf_nan=False)
    init_var: float = Field(default=1.0, gt=0)

    @property
    def stationary_variance(self) -> float:
        if abs(self.ar_coeff) >= 1:
            return float("inf")
        return self.state_var / (1.0 - self.ar_coeff ** 2)


class SwitchingParams(StrictModel):
    """Near-linear for small |a|, strongly non-linear for large |a|"""
    a: float = Field(default=0.0, allow_inf_nan=False)
    ar_coeff: float = Field(default=0.5, allow_inf_nan=False)
    state_var: float = Field(default=1.0, gt=0)
    obs_var: float = Field(default=0.1, gt=0)
    init_var: float = Field(default=1.0, gt=0)


class ModelName(str, Enum):
    THETA_LOGISTIC = "theta_logistic"
    LINEAR_GAUSSIAN = "linear_gaussian"
    SWITCHING = "switching"


class ModelConfig(StrictModel):
    """Which model to build, its simulation parameters, and its prior box"""
    name: ModelName = ModelName.THETA_LOGISTIC
    theta_logistic: ThetaLogisticParams = ThetaLogisticParams()
    linear_gaussian: LinearGaussianParams = LinearGaussianParams()
    switching: SwitchingParams = SwitchingParams()
    # Parameters inferred by the chain; None means the model's default set
    free_params: Optional[tuple[str, ...]] = None
    # Uniform prior box per free parameter, overriding the model defaults
    prior_bounds: dict[str, tuple[float, float]] = Field(default_factory=dict)
    # Standard deviation of the theta-logistic initial state around ln K
    init_sd: float = Field(default=0.5, gt=0)
    # Use the locally optimal proposal where the model provides one
    guided_proposal: bool = False

    @field_validator("prior_bounds")
    @classmethod
    def check_bounds(cls, v):
        for name, (low, high) in v.items():
            if not low < high:
                raise ValueError(f"prior bounds for '{name}' must satisfy low < high")
        return v


class DataConfig(StrictModel):
    """Dataset to condition on: simulated from the model or read from CSV"""
    T: int = Field(default=100, ge=1)
    seed: int = 1
    path: Optional[str] = None


# ---------------------------------------------------------------------------
# Filter / PRC / ABC
# ---------------------------------------------------------------------------

class ThresholdPolicy(str, Enum):
    DISABLED = "disabled"
    FIXED = "fixed"
    QUANTILE = "quantile"


class RejectionScope(str, Enum):
    MOVE_ONLY = "move_only"
    ANCESTOR_AND_MOVE = "ancestor_and_move"


class PrcConfig(StrictModel):
    """Partial rejection control of particle moves"""
    threshold_policy: ThresholdPolicy = ThresholdPolicy.DISABLED
    c: float = Field(default=0.0, ge=0, description="fixed threshold c_n")
    alpha: float = Field(default=0.1, ge=0, lt=1, description="quantile level")
    rejection_scope: RejectionScope = RejectionScope.MOVE_ONLY
    max_attempts: int = Field(default=1000, ge=1)
    r_estimation_draws: int = Field(default=100, ge=0)
    # Set when the filter output never feeds a PMMH acceptance ratio
    pure_filter: bool = False


class AbcKernel(str, Enum):
    INDICATOR = "indicator"
    GAUSSIAN = "gaussian"


class Distance(str, Enum):
    ABSOLUTE = "absolute"
    EUCLIDEAN = "euclidean"


class AbcConfig(StrictModel):
    """ABC approximation of the local likelihood"""
    epsilon: float = Field(default=0.2, gt=0)
    n_pseudo: int = Field(default=10, ge=1)
    kernel: AbcKernel = AbcKernel.GAUSSIAN
    distance: Distance = Distance.ABSOLUTE


class ResamplingScheme(str, Enum):
    MULTINOMIAL = "multinomial"
    SYSTEMATIC = "systematic"


class FilterConfig(StrictModel):
    n_particles: int = Field(default=Config.DEFAULT_PARTICLES, ge=1)
    resampling_scheme: ResamplingScheme = ResamplingScheme.MULTINOMIAL
    prc: Optional[PrcConfig] = None
    abc: Optional[AbcConfig] = None


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------

class ProposalKind(str, Enum):
    RANDOM_WALK = "random_walk"
    ADAPTIVE_METROPOLIS = "adaptive_metropolis"


class ProposalConfig(StrictModel):
    """Random-walk proposal for theta, optionally adaptive after am_start"""
    kind: ProposalKind = ProposalKind.ADAPTIVE_METROPOLIS
    # Diagonal of the initial covariance Sigma_0, one entry per free parameter
    rw_variances: Optional[tuple[float, ...]] = None
    am_start: int = Field(default=5000, ge=1)
    am_beta: float = Field(default=0.05, gt=0, lt=1)
    # None means 2.38^2 / d and 0.1^2 / d respectively
    am_scale: Optional[float] = Field(default=None, gt=0)
    am_safety_scale: Optional[float] = Field(default=None, gt=0)

    @field_validator("rw_variances")
    @classmethod
    def check_variances(cls, v):
        if v is not None and any(x < 0 for x in v):
            raise ValueError("rw_variances must be non-negative")
        return v


class Algorithm(str, Enum):
    PMMH = "pmmh"
    PG = "pg"
    HYBRID = "hybrid"


class InitPathKind(str, Enum):
    FILTER = "filter"
    CONSTANT = "constant"


class ChainConfig(StrictModel):
    algorithm: Algorithm = Algorithm.PMMH
    n_iters: int = Field(default=10000, ge=1)
    filter: FilterConfig = FilterConfig()
    proposal: ProposalConfig = ProposalConfig()
    mix_prob: float = Field(default=0.1, ge=0, le=1)
    path_thin: int = Field(default=10, ge=1)
    init_theta: Optional[tuple[float, ...]] = None
    init_path: InitPathKind = InitPathKind.FILTER
    init_path_value: float = 0.0
    init_retries: int = Field(default=10, ge=1)
    # Iterations at which the MMSE path RMSE is reported
    rmse_checkpoints: tuple[int, ...] = ()


class OracleCheckConfig(StrictModel):
    """Sizes of the unbiasedness and PMMH-exactness acceptance suites"""
    unbiased_T: int = Field(default=25, ge=1)
    unbiased_particles: int = Field(default=100, ge=1)
    unbiased_runs: int = Field(default=500, ge=2)
    ks_T: int = Field(default=50, ge=1)
    ks_particles: int = Field(default=200, ge=1)
    ks_iters: int = Field(default=50000, ge=10)
    ks_burn_in: float = Field(default=0.2, ge=0, lt=1)
    ks_thin: int = Field(default=10, ge=1)
    ks_threshold: float = Field(default=0.05, gt=0)
    ks_proposal_variance: float = Field(default=0.01, gt=0)


class ExperimentConfig(StrictModel):
    model: ModelConfig = ModelConfig()
    data: DataConfig = DataConfig()
    chain: ChainConfig = ChainConfig()
    oracle: OracleCheckConfig = OracleCheckConfig()
    seed: Optional[int] = None

    @model_validator(mode="after")
    def check_abc_algorithm(self):
        if self.chain.algorithm != Algorithm.PMMH and self.chain.filter.abc is not None:
            raise ValueError("ABC filtering is only supported with the pmmh algorithm")
        return self

"""State-space models consumed by the filters and samplers.

A model is a parametric family indexed by a free-parameter vector ``theta``.
Parameters that are not free stay fixed at the values the model was built
with. All densities are evaluated in log space; samplers take an explicit
``numpy.random.Generator`` so callers own every random stream.
"""
from abc import ABC, abstractmethod
import logging
import math

import numpy as np
from scipy.stats import norm

from errors import ModelError
from schema import LinearGaussianParams, SwitchingParams, ThetaLogisticParams
from utils import make_rng

logger = logging.getLogger(__name__)

THETA_LOGISTIC_STATE_VAR = 0.01
THETA_LOGISTIC_OBS_VAR = 0.04
THETA_LOGISTIC_R_MAX = 2.69


class StateSpaceModel(ABC):
    """Abstract base class for scalar-state state-space models"""

    state_dim = 1
    obs_dim = 1
    # Every parameter of the model, in theta order when all are free
    param_names: tuple[str, ...] = ()
    default_free: tuple[str, ...] = ()
    default_bounds: dict[str, tuple[float, float]] = {}

    def __init__(
        self,
        fixed: dict[str, float],
        free_params: tuple[str, ...] | None = None,
        prior_bounds: dict[str, tuple[float, float]] | None = None,
    ):
        self.fixed = dict(fixed)
        self.free_params = tuple(free_params) if free_params else self.default_free
        unknown = [p for p in self.free_params if p not in self.param_names]
        if unknown:
            raise ModelError(f"Unknown free parameters {unknown}; valid: {list(self.param_names)}")

        bounds = dict(self.default_bounds)
        for name, box in (prior_bounds or {}).items():
            if name not in self.free_params:
                raise ModelError(f"Prior bounds given for non-free parameter '{name}'")
            bounds[name] = tuple(box)
        missing = [p for p in self.free_params if p not in bounds]
        if missing:
            raise ModelError(f"No prior bounds for free parameters {missing}")
        self.prior_bounds = {p: bounds[p] for p in self.free_params}
        self._lower = np.array([self.prior_bounds[p][0] for p in self.free_params], dtype=float)
        self._upper = np.array([self.prior_bounds[p][1] for p in self.free_params], dtype=float)
        self._log_prior_const = -float(np.sum(np.log(self._upper - self._lower)))

    @property
    def theta_dim(self) -> int:
        return len(self.free_params)

    @property
    def is_bootstrap(self) -> bool:
        """True when the proposal is the transition, so weights reduce to g"""
        return True

    def params(self, theta) -> dict[str, float]:
        full = dict(self.fixed)
        full.update(zip(self.free_params, np.asarray(theta, dtype=float).tolist()))
        return full

    def default_theta(self) -> np.ndarray:
        return np.array([self.fixed[p] for p in self.free_params], dtype=float)

    # -- prior ---------------------------------------------------------------

    def params_valid(self, params: dict[str, float]) -> bool:
        """Structural constraints beyond the prior box"""
        return True

    def in_support(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.theta_dim,) or not np.all(np.isfinite(theta)):
            return False
        if np.any(theta <= self._lower) or np.any(theta >= self._upper):
            return False
        return self.params_valid(self.params(theta))

    def prior_logpdf(self, theta) -> float:
        """Uniform box prior: constant inside the support, -inf outside"""
        if not self.in_support(theta):
            return -np.inf
        return self._log_prior_const

    def sample_prior(self, rng: np.random.Generator) -> np.ndarray:
        while True:
            theta = rng.uniform(self._lower, self._upper)
            if self.in_support(theta):
                return theta

    # -- densities and samplers ---------------------------------------------

    @abstractmethod
    def sample_initial(self, theta, size: int, rng: np.random.Generator) -> np.ndarray:
        pass

    @abstractmethod
    def logpdf_initial(self, theta, x: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def sample_transition(self, theta, x_prev: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        pass

    @abstractmethod
    def logpdf_transition(self, theta, x_prev: np.ndarray, x: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def sample_observation(self, theta, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        pass

    @abstractmethod
    def logpdf_observation(self, theta, x: np.ndarray, y: float) -> np.ndarray:
        pass

    # Proposals default to the bootstrap choice q = f (and q_1 = mu)
    def sample_initial_proposal(self, theta, y: float, size: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample_initial(theta, size, rng)

    def logpdf_initial_proposal(self, theta, y: float, x: np.ndarray) -> np.ndarray:
        return self.logpdf_initial(theta, x)

    def sample_proposal(self, theta, x_prev: np.ndarray, y: float, rng: np.random.Generator) -> np.ndarray:
        return self.sample_transition(theta, x_prev, rng)

    def logpdf_proposal(self, theta, x_prev: np.ndarray, y: float, x: np.ndarray) -> np.ndarray:
        return self.logpdf_transition(theta, x_prev, x)

    # -- whole-trajectory helpers -------------------------------------------

    def log_joint(self, theta, path: np.ndarray, y: np.ndarray) -> float:
        """ln p(theta) + ln mu(x_1) + sum ln f(x_n|x_{n-1}) + sum ln g(y_n|x_n)"""
        log_prior = self.prior_logpdf(theta)
        if not np.isfinite(log_prior):
            return -np.inf
        path = np.asarray(path, dtype=float)
        y = np.asarray(y, dtype=float)
        with np.errstate(over='ignore', invalid='ignore'):
            total = log_prior + float(self.logpdf_initial(theta, path[:1])[0])
            if path.size > 1:
                total += float(np.sum(self.logpdf_transition(theta, path[:-1], path[1:])))
            total += float(np.sum(self.logpdf_observation(theta, path, y)))
        return total if not math.isnan(total) else -np.inf

    def simulate(self, theta, T: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        x = np.empty(T)
        x[0] = self.sample_initial(theta, 1, rng)[0]
        for n in range(1, T):
            x[n] = self.sample_transition(theta, x[n - 1:n], rng)[0]
        y = self.sample_observation(theta, x, rng)
        return x, y


class ThetaLogisticModel(StateSpaceModel):
    """Log-transformed theta-logistic population dynamics.

    x_n | x_{n-1} ~ N(x_{n-1} + r (1 - (exp(x_{n-1}) / K)^zeta), 0.01)
    y_n | x_n     ~ N(x_n, 0.04)
    x_1           ~ N(ln K, init_sd^2)
    """

    param_names = ("r", "zeta", "K")
    default_free = ("r", "zeta", "K")
    default_bounds = {"r": (0.0, THETA_LOGISTIC_R_MAX), "zeta": (-10.0, 10.0), "K": (0.0, 5000.0)}

    def __init__(self, params: ThetaLogisticParams, init_sd: float = 0.5, **kwargs):
        super().__init__(params.model_dump(), **kwargs)
        self.init_sd = init_sd
        self.state_sd = math.sqrt(THETA_LOGISTIC_STATE_VAR)
        self.obs_sd = math.sqrt(THETA_LOGISTIC_OBS_VAR)

    def params_valid(self, params):
        return params["K"] > 0 and params["r"] < THETA_LOGISTIC_R_MAX

    def transition_mean(self, theta, x_prev: np.ndarray) -> np.ndarray:
        p = self.params(theta)
        # (exp(x)/K)^zeta evaluated as exp(zeta (x - ln K)) to keep the fixed point exact
        with np.errstate(over='ignore', invalid='ignore'):
            return x_prev + p["r"] * (1.0 - np.exp(p["zeta"] * (x_prev - math.log(p["K"]))))

    def sample_initial(self, theta, size, rng):
        return rng.normal(math.log(self.params(theta)["K"]), self.init_sd, size=size)

    def logpdf_initial(self, theta, x):
        return norm.logpdf(x, loc=math.log(self.params(theta)["K"]), scale=self.init_sd)

    def sample_transition(self, theta, x_prev, rng):
        return self.transition_mean(theta, x_prev) + self.state_sd * rng.standard_normal(np.shape(x_prev))

    def logpdf_transition(self, theta, x_prev, x):
        return norm.logpdf(x, loc=self.transition_mean(theta, x_prev), scale=self.state_sd)

    def sample_observation(self, theta, x, rng):
        return x + self.obs_sd * rng.standard_normal(np.shape(x))

    def logpdf_observation(self, theta, x, y):
        return norm.logpdf(y, loc=x, scale=self.obs_sd)


class LinearGaussianModel(StateSpaceModel):
    """Scalar AR(1) state observed in Gaussian noise, conjugate throughout"""

    param_names = ("ar_coeff", "state_var", "obs_var", "init_mean", "init_var")
    default_free = ("ar_coeff",)
    default_bounds = {
        "ar_coeff": (-1.0, 1.0),
        "state_var": (0.0, 10.0),
        "obs_var": (0.0, 10.0),
        "init_mean": (-10.0, 10.0),
        "init_var": (0.0, 10.0),
    }

    def __init__(self, params: LinearGaussianParams, guided: bool = False, **kwargs):
        super().__init__(params.model_dump(), **kwargs)
        self.guided = guided

    @property
    def is_bootstrap(self):
        return not self.guided

    def params_valid(self, params):
        return params["state_var"] > 0 and params["obs_var"] >= 0 and params["init_var"] > 0

    def lg_params(self, theta) -> LinearGaussianParams:
        return LinearGaussianParams(**self.params(theta))

    def _obs_sd(self, p) -> float:
        if p["obs_var"] <= 0:
            raise ModelError("Observation density is degenerate when obs_var == 0")
        return math.sqrt(p["obs_var"])

    def sample_initial(self, theta, size, rng):
        p = self.params(theta)
        return rng.normal(p["init_mean"], math.sqrt(p["init_var"]), size=size)

    def logpdf_initial(self, theta, x):
        p = self.params(theta)
        return norm.logpdf(x, loc=p["init_mean"], scale=math.sqrt(p["init_var"]))

    def sample_transition(self, theta, x_prev, rng):
        p = self.params(theta)
        return p["ar_coeff"] * x_prev + math.sqrt(p["state_var"]) * rng.standard_normal(np.shape(x_prev))

    def logpdf_transition(self, theta, x_prev, x):
        p = self.params(theta)
        return norm.logpdf(x, loc=p["ar_coeff"] * x_prev, scale=math.sqrt(p["state_var"]))

    def sample_observation(self, theta, x, rng):
        p = self.params(theta)
        if p["obs_var"] == 0:
            return np.array(x, dtype=float, copy=True)
        return x + math.sqrt(p["obs_var"]) * rng.standard_normal(np.shape(x))

    def logpdf_observation(self, theta, x, y):
        p = self.params(theta)
        return norm.logpdf(y, loc=x, scale=self._obs_sd(p))

    # Locally optimal proposal: prior (mean m, var v) times N(y; x, obs_var)
    def _posterior(self, p, prior_mean, prior_var, y):
        post_var = 1.0 / (1.0 / prior_var + 1.0 / p["obs_var"])
        return post_var * (prior_mean / prior_var + y / p["obs_var"]), post_var

    def sample_initial_proposal(self, theta, y, size, rng):
        if not self.guided:
            return super().sample_initial_proposal(theta, y, size, rng)
        p = self.params(theta)
        mean, var = self._posterior(p, p["init_mean"], p["init_var"], y)
        return rng.normal(mean, math.sqrt(var), size=size)

    def logpdf_initial_proposal(self, theta, y, x):
        if not self.guided:
            return super().logpdf_initial_proposal(theta, y, x)
        p = self.params(theta)
        mean, var = self._posterior(p, p["init_mean"], p["init_var"], y)
        return norm.logpdf(x, loc=mean, scale=math.sqrt(var))

    def sample_proposal(self, theta, x_prev, y, rng):
        if not self.guided:
            return super().sample_proposal(theta, x_prev, y, rng)
        p = self.params(theta)
        mean, var = self._posterior(p, p["ar_coeff"] * x_prev, p["state_var"], y)
        return mean + math.sqrt(var) * rng.standard_normal(np.shape(x_prev))

    def logpdf_proposal(self, theta, x_prev, y, x):
        if not self.guided:
            return super().logpdf_proposal(theta, x_prev, y, x)
        p = self.params(theta)
        mean, var = self._posterior(p, p["ar_coeff"] * x_prev, p["state_var"], y)
        return norm.logpdf(x, loc=mean, scale=math.sqrt(var))


class SwitchingModel(StateSpaceModel):
    """x_n = ar_coeff x + a * 25 x / (1 + x^2) + noise, observed in Gaussian noise.

    Almost linear in x_n while |a| is small, strongly non-linear elsewhere.
    """

    param_names = ("a", "ar_coeff", "state_var", "obs_var", "init_var")
    default_free = ("a",)
    default_bounds = {"a": (-2.0, 2.0), "ar_coeff": (-1.0, 1.0), "state_var": (0.0, 10.0),
                      "obs_var": (0.0, 10.0), "init_var": (0.0, 10.0)}

    def __init__(self, params: SwitchingParams, **kwargs):
        super().__init__(params.model_dump(), **kwargs)

    def transition_mean(self, theta, x_prev):
        p = self.params(theta)
        return p["ar_coeff"] * x_prev + p["a"] * 25.0 * x_prev / (1.0 + x_prev ** 2)

    def sample_initial(self, theta, size, rng):
        return rng.normal(0.0, math.sqrt(self.params(theta)["init_var"]), size=size)

    def logpdf_initial(self, theta, x):
        return norm.logpdf(x, loc=0.0, scale=math.sqrt(self.params(theta)["init_var"]))

    def sample_transition(self, theta, x_prev, rng):
        sd = math.sqrt(self.params(theta)["state_var"])
        return self.transition_mean(theta, x_prev) + sd * rng.standard_normal(np.shape(x_prev))

    def logpdf_transition(self, theta, x_prev, x):
        sd = math.sqrt(self.params(theta)["state_var"])
        return norm.logpdf(x, loc=self.transition_mean(theta, x_prev), scale=sd)

    def sample_observation(self, theta, x, rng):
        sd = math.sqrt(self.params(theta)["obs_var"])
        return x + sd * rng.standard_normal(np.shape(x))

    def logpdf_observation(self, theta, x, y):
        return norm.logpdf(y, loc=x, scale=math.sqrt(self.params(theta)["obs_var"]))


def theta_logistic_model(
    params: ThetaLogisticParams | None = None,
    init_sd: float = 0.5,
    free_params: tuple[str, ...] | None = None,
    prior_bounds: dict[str, tuple[float, float]] | None = None,
) -> ThetaLogisticModel:
    return ThetaLogisticModel(params or ThetaLogisticParams(), init_sd=init_sd,
                              free_params=free_params, prior_bounds=prior_bounds)


def linear_gaussian_model(
    params: LinearGaussianParams | None = None,
    guided: bool = False,
    free_params: tuple[str, ...] | None = None,
    prior_bounds: dict[str, tuple[float, float]] | None = None,
) -> LinearGaussianModel:
    return LinearGaussianModel(params or LinearGaussianParams(), guided=guided,
                               free_params=free_params, prior_bounds=prior_bounds)


def prior_logpdf(model: StateSpaceModel, theta) -> float:
    return model.prior_logpdf(theta)


def simulate(model: StateSpaceModel, theta, T: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Draw (x_{1:T}, y_{1:T}) from the model; a pure function of (theta, T, seed)"""
    if T < 1:
        raise ModelError(f"T must be >= 1, got {T}")
    if not model.in_support(theta):
        raise ModelError(f"Simulation parameters {list(np.asarray(theta))} lie outside the prior support")
    rng = make_rng(seed)
    x, y = model.simulate(np.asarray(theta, dtype=float), T, rng)
    logger.info(f"Simulated {T} timesteps from {model.__class__.__name__}")
    return x, y

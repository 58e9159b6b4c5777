from functools import lru_cache
import logging

from errors import ConfigError, ModelError
from models import LinearGaussianModel, StateSpaceModel, SwitchingModel, ThetaLogisticModel
from schema import ModelConfig, ModelName

logger = logging.getLogger(__name__)

model_type_map = {
    'theta_logistic': ModelName.THETA_LOGISTIC,
    'linear_gaussian': ModelName.LINEAR_GAUSSIAN,
    'switching': ModelName.SWITCHING,
}


def get_model(config: ModelConfig) -> StateSpaceModel:
    """Build (or reuse) the state-space model described by a ModelConfig.

    Models are immutable after construction, so equal configs share one
    instance.
    """
    return _build_model(config.model_dump_json())


@lru_cache(maxsize=8)
def _build_model(config_json: str) -> StateSpaceModel:
    config = ModelConfig.model_validate_json(config_json)
    model_type = model_type_map.get(config.name.value)
    if not model_type:
        raise ConfigError(f"Invalid model: {config.name}. Valid options: {list(model_type_map.keys())}",
                          field="model.name")

    logger.info(f"Initializing model: {model_type.value}")
    common = dict(free_params=config.free_params, prior_bounds=config.prior_bounds or None)
    try:
        if model_type == ModelName.THETA_LOGISTIC:
            model = ThetaLogisticModel(config.theta_logistic, init_sd=config.init_sd, **common)
        elif model_type == ModelName.LINEAR_GAUSSIAN:
            model = LinearGaussianModel(config.linear_gaussian, guided=config.guided_proposal, **common)
        elif model_type == ModelName.SWITCHING:
            model = SwitchingModel(config.switching, **common)
        else:
            raise ConfigError(f"Unsupported model: {model_type}", field="model.name")
    except ModelError as e:
        logger.error(f"Failed to build model {model_type.value}: {e}")
        raise ConfigError(e.detail, field="model") from e

    logger.info(f"Model {model_type.value} initialized with free parameters {list(model.free_params)}")
    return model

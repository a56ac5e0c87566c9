from app.errors import ConfigError
from app.flow.analytic import AnalyticVelocityModel
from app.flow.base import VelocityModel
from app.flow.toy_dit import init_toy_dit
from app.models.latent import LatentGrid, ModelConfig


def get_model(config: ModelConfig, target: LatentGrid | None = None) -> VelocityModel:
    """
    Model loader / factory.

    This is the single place that knows about concrete velocity models.
    The analytic oracle needs the edit target it reconstructs.
    """
    config.validate()
    if config.kind == "toy-dit":
        return init_toy_dit(config)
    if config.kind == "analytic":
        if target is None:
            raise ConfigError("analytic model needs an edit target latent")
        return AnalyticVelocityModel(target, config)

    raise ConfigError(f"Unknown model kind='{config.kind}'. Expected: analytic, toy-dit")

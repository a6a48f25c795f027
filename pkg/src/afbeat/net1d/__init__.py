"""Net1D beat classifier implemented on numpy."""

from afbeat.net1d.config import Net1dConfig, reduced_config, stage_lengths
from afbeat.net1d.model import (
    ForwardTrace,
    LossValue,
    ParameterCount,
    backward,
    build_model,
    count_parameters,
    cross_entropy,
    default_cam_layer,
    forward,
    layer_names,
    mean_loss,
    predict_proba,
)
from afbeat.net1d.ops import se_scale

__all__ = [
    "ForwardTrace", "LossValue", "Net1dConfig", "ParameterCount", "backward", "build_model",
    "count_parameters", "cross_entropy", "default_cam_layer", "forward", "layer_names", "mean_loss",
    "predict_proba", "reduced_config", "se_scale", "stage_lengths",
]

"""DRNet: a two-branch coarse-to-fine depth decoder on a micro residual encoder, with its own numpy autodiff core."""
from .backbone import BackboneConfig
from .config import RunConfig, load_config, parse_config
from .decoder import DecoderConfig, DepthPyramid, DRNet, FullResNet, drnet_forward, fullres_forward
from .losses import LossConfig, evaluate_metrics, total_loss
from .tensor import Parameter, Tensor, backward, finite_diff_check, no_grad
from .train import TrainConfig, build_model

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig",
    "DecoderConfig",
    "DepthPyramid",
    "DRNet",
    "FullResNet",
    "LossConfig",
    "Parameter",
    "RunConfig",
    "Tensor",
    "TrainConfig",
    "backward",
    "build_model",
    "drnet_forward",
    "evaluate_metrics",
    "finite_diff_check",
    "fullres_forward",
    "load_config",
    "no_grad",
    "parse_config",
    "total_loss",
]

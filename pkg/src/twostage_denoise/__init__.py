"""Two-stage progressive residual dense attention denoiser on a small numpy autodiff core."""

__version__ = "0.1.0"

from .blocks import hdrdam, rdam
from .checkpoint import load_checkpoint, restore_params, save_checkpoint
from .losses import LossConfig, charbonnier_edge_loss, mse_loss, total_loss
from .metrics import evaluate_dir, psnr, ssim
from .network import ModelConfig, build, forward, param_count
from .tensor import Tensor, backward, no_grad
from .trainer import Schedule, TrainConfig, lr_at, train

__all__ = [
    "ModelConfig",
    "Tensor",
    "TrainConfig",
    "Schedule",
    "LossConfig",
    "build",
    "forward",
    "param_count",
    "rdam",
    "hdrdam",
    "mse_loss",
    "charbonnier_edge_loss",
    "total_loss",
    "psnr",
    "ssim",
    "evaluate_dir",
    "lr_at",
    "train",
    "backward",
    "no_grad",
    "save_checkpoint",
    "load_checkpoint",
    "restore_params",
]

"""Self-organized operational layers for single-image super-resolution.

A small NCHW autograd engine with a compiled convolution core, SOL / SOR
building blocks, EDSR / self-organized / hybrid networks, a DIV2K-style data
pipeline, Adam training with bit-exact checkpoints, and PSNR / SSIM metrics.
"""

from . import backend
from .autograd import Tape, Tensor, backward, finite_diff_check
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .data import ChannelMeans, DataError, ImageRecord, bicubic_resize, load_dataset, load_png, \
    save_png
from .layers import ConvParams, LayerSpec, SolParams, init_params
from .metrics import EvalReport, evaluate, evaluate_bicubic, psnr, ssim
from .models import Model, ModelSpec, build_model, count_params, load_partial, model_forward
from .training import AdamState, NumericError, TrainConfig, adam_step, lr_at, train

__version__ = "0.1.0"

__all__ = [
    "AdamState", "ChannelMeans", "Checkpoint", "CheckpointError", "ConvParams", "DataError",
    "EvalReport", "ImageRecord", "LayerSpec", "Model", "ModelSpec", "NumericError", "SolParams",
    "Tape", "Tensor", "TrainConfig", "adam_step", "backend", "backward", "bicubic_resize",
    "build_model", "count_params", "evaluate", "evaluate_bicubic", "finite_diff_check",
    "init_params", "load_checkpoint", "load_dataset", "load_partial", "load_png", "lr_at",
    "model_forward", "psnr", "save_checkpoint", "save_png", "ssim", "train",
]

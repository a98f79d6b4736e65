"""Knowledge-distilled bidirectional state-space (ViM) classifiers for low-resolution images."""

from .checkpoint import Checkpoint, load_model, read_checkpoint, save_checkpoint, write_checkpoint
from .distill import DistillConfig, DistillLosses, loss_ce, loss_hsd, loss_ld, loss_total
from .encoder import selective_scan, vim_block
from .estimators import BicubicResizer, DistilledVimClassifier, SuperResolver, VimClassifier
from .exceptions import (
    CheckpointError, ConfigError, ContractError, DomainError, ImageIOError, ShapeError, VimdError,
)
from .network import TOY, VIM_TINY, HiddenStates, VimConfig, VimModel, flops_estimate, param_count, predict
from .optim import AdamW, cosine_lr
from .sr import SrGenerator, bicubic_resize, load_image, save_image, sr_generate
from .tensor import Tensor, backward, no_grad
from .training import TrainConfig, evaluate_top1, train_student, train_teacher

__all__ = [
    "AdamW", "BicubicResizer", "Checkpoint", "CheckpointError", "ConfigError", "ContractError",
    "DistillConfig", "DistillLosses", "DistilledVimClassifier", "DomainError", "HiddenStates",
    "ImageIOError", "ShapeError", "SrGenerator", "SuperResolver", "TOY", "Tensor", "TrainConfig",
    "VIM_TINY", "VimClassifier", "VimConfig", "VimModel", "VimdError", "backward", "bicubic_resize",
    "cosine_lr", "evaluate_top1", "flops_estimate", "load_image", "load_model", "loss_ce", "loss_hsd",
    "loss_ld", "loss_total", "no_grad", "param_count", "predict", "read_checkpoint", "save_checkpoint",
    "save_image", "selective_scan", "sr_generate", "train_student", "train_teacher", "vim_block",
    "write_checkpoint",
]

"""Self-contained sub-manifold sparse convolution engine with reverse-mode
gradients, plus the hierarchical quality-regression network and trainer."""

from .tensor import SparseTensor, KernelMap, KERNEL_OFFSETS, voxelize, build_kernel_map
from .layers import (
    conv_forward, conv_backward, bn_forward, bn_backward,
    global_pool, global_pool_backward,
)
from .model import (
    ModelConfig, Model, RESIDUAL_VARIANTS, init_model, forward, backward,
    param_count, save_checkpoint, load_checkpoint, CheckpointError,
)
from .train import (
    TrainConfig, TrainSample, LossPoint, TrainResult,
    smooth_l1, augment, sgd_step, train, predict,
)

__all__ = [
    "SparseTensor", "KernelMap", "KERNEL_OFFSETS", "voxelize", "build_kernel_map",
    "conv_forward", "conv_backward", "bn_forward", "bn_backward",
    "global_pool", "global_pool_backward",
    "ModelConfig", "Model", "RESIDUAL_VARIANTS", "init_model", "forward", "backward",
    "param_count", "save_checkpoint", "load_checkpoint", "CheckpointError",
    "TrainConfig", "TrainSample", "LossPoint", "TrainResult",
    "smooth_l1", "augment", "sgd_step", "train", "predict",
]

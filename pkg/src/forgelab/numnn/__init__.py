from .params import ParamStore, Adam
from .layers import (
    Linear,
    Conv2d,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
    bilinear_resize,
    bilinear_resize_backward,
    global_avg_pool,
    global_avg_pool_backward,
    l2_normalize,
    l2_normalize_backward,
    kaiming_uniform,
)
from .gradcheck import grad_check, GradCheckReport
from .checkpoint import save_checkpoint, load_checkpoint, CheckpointError

__all__ = [
    "ParamStore",
    "Adam",
    "Linear",
    "Conv2d",
    "relu",
    "relu_backward",
    "sigmoid",
    "sigmoid_backward",
    "bilinear_resize",
    "bilinear_resize_backward",
    "global_avg_pool",
    "global_avg_pool_backward",
    "l2_normalize",
    "l2_normalize_backward",
    "kaiming_uniform",
    "grad_check",
    "GradCheckReport",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]

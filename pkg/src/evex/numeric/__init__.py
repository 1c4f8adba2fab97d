from .tensor import (
    Tensor,
    ShapeError,
    add,
    backward,
    concat,
    cross_entropy,
    embedding,
    gelu,
    grad_enabled,
    layernorm,
    log_softmax,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    scale,
    softmax,
    sub,
    tensor_sum,
    transpose,
)
from .checks import directional_difference_check, finite_difference_check
from .io import load_tensors, save_tensors, tensors_bytes

__all__ = [
    "Tensor",
    "ShapeError",
    "add",
    "backward",
    "concat",
    "cross_entropy",
    "embedding",
    "directional_difference_check",
    "finite_difference_check",
    "gelu",
    "grad_enabled",
    "layernorm",
    "load_tensors",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "save_tensors",
    "scale",
    "softmax",
    "sub",
    "tensor_sum",
    "tensors_bytes",
    "transpose",
]

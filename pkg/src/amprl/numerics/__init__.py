"""Dense float64 tensors, reverse-mode autodiff, Adam, and checkpoint I/O."""
from .tensor import (
    Tensor,
    causal_mask,
    clamp,
    embedding,
    exp,
    gather_last,
    gelu,
    grad_check,
    layer_norm,
    log,
    log_softmax,
    matmul,
    minimum,
    relu,
    sigmoid,
    softmax,
    tensor,
)
from .optim import Adam
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Tensor",
    "tensor",
    "matmul",
    "softmax",
    "log_softmax",
    "layer_norm",
    "embedding",
    "gather_last",
    "causal_mask",
    "clamp",
    "minimum",
    "relu",
    "gelu",
    "sigmoid",
    "log",
    "exp",
    "grad_check",
    "Adam",
    "save_checkpoint",
    "load_checkpoint",
]

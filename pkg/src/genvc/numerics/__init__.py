"""numpy-backed tensors with taped reverse-mode differentiation."""

from genvc.numerics.gradcheck import grad_check
from genvc.numerics.init import fanin_uniform, he_uniform, ones, small_uniform, zeros
from genvc.numerics.ops import (
    absolute,
    attention,
    clamp_min,
    conv1d,
    conv_transpose1d,
    cross_entropy_rows,
    embedding,
    exp,
    frame_signal,
    gelu,
    layer_norm,
    leaky_relu,
    log,
    log_softmax,
    matmul,
    relu,
    softmax,
    softmax_xent,
    sqrt,
    tanh,
)
from genvc.numerics.optim import Adam, decayed_lr
from genvc.numerics.tensor import Parameter, Tensor, concat, grad_enabled, no_grad

__all__ = [
    "Adam",
    "Parameter",
    "Tensor",
    "absolute",
    "attention",
    "clamp_min",
    "concat",
    "conv1d",
    "conv_transpose1d",
    "cross_entropy_rows",
    "decayed_lr",
    "embedding",
    "exp",
    "fanin_uniform",
    "he_uniform",
    "frame_signal",
    "gelu",
    "grad_check",
    "grad_enabled",
    "layer_norm",
    "leaky_relu",
    "log",
    "log_softmax",
    "matmul",
    "no_grad",
    "ones",
    "relu",
    "small_uniform",
    "softmax",
    "softmax_xent",
    "sqrt",
    "tanh",
    "zeros",
]

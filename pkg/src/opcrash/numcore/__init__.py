"""Dense tensor arithmetic with reverse-mode differentiation and byte tracking."""
from .functional import gelu, l2norm, layer_norm, linear, softmax, softmax_array
from .gradcheck import check_gradients, numeric_grad, relative_error
from .memory import MemoryScope, track_memory
from .nn import MLP, LayerNorm, Linear, Module, mlp_apply, parameter, xavier_uniform
from .tensor import (
    DimensionError,
    NumericError,
    Tensor,
    add,
    backward,
    concat,
    default_dtype,
    div,
    exp,
    getitem,
    grad_enabled,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    power,
    precision,
    reshape,
    sigmoid,
    stack,
    sub,
    tanh,
    transpose,
    tsum,
)

__all__ = [
    "DimensionError", "NumericError", "Tensor", "MemoryScope", "Module", "Linear", "LayerNorm", "MLP",
    "add", "sub", "mul", "div", "neg", "power", "exp", "log", "tanh", "sigmoid", "matmul", "tsum", "mean",
    "reshape", "transpose", "getitem", "concat", "stack", "backward", "no_grad", "grad_enabled",
    "precision", "default_dtype", "softmax", "softmax_array", "gelu", "layer_norm", "l2norm", "linear",
    "mlp_apply", "parameter", "xavier_uniform", "check_gradients", "numeric_grad", "relative_error",
    "track_memory",
]

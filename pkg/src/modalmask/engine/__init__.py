from .tensor import (
    Parameter,
    ShapeMismatch,
    Tensor,
    add,
    backward,
    clip,
    concat,
    conv2d,
    embedding,
    exp,
    layer_norm,
    log,
    matmul,
    maxpool2,
    mul,
    neg,
    relu,
    reshape,
    safe_softmax,
    sigmoid,
    stack,
    swap_last2,
    tmean,
    transpose,
    tsum,
)
from .gradcheck import NonFiniteEvaluation, finite_diff_check
from .kernels import USE_NUMBA

__all__ = [
    "Parameter",
    "ShapeMismatch",
    "Tensor",
    "add",
    "backward",
    "clip",
    "concat",
    "conv2d",
    "embedding",
    "exp",
    "layer_norm",
    "log",
    "matmul",
    "maxpool2",
    "mul",
    "neg",
    "relu",
    "reshape",
    "safe_softmax",
    "sigmoid",
    "stack",
    "swap_last2",
    "tmean",
    "transpose",
    "tsum",
    "NonFiniteEvaluation",
    "finite_diff_check",
    "USE_NUMBA",
]

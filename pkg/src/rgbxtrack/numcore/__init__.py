"""Minimal float64 tensor library with reverse-mode differentiation."""
from .functional import scaled_attention, softmax_rows
from .gradcheck import grad_check, grad_check_many, numeric_grad
from .layers import MLP, Attention, FeedForward, LayerNorm, Linear, Module, param
from .tensor import (
    Tape,
    Tensor,
    abs_,
    add,
    as_tensor,
    backward,
    clip,
    concat,
    div,
    exp,
    expand,
    gather_rows,
    gelu,
    grad_enabled,
    index,
    layer_norm,
    log,
    matmul,
    maximum,
    mean,
    minimum,
    mul,
    no_grad,
    power,
    relu,
    reshape,
    sigmoid,
    softmax,
    sqrt,
    sub,
    swapaxes,
    tanh,
    tensor,
    transpose,
    tsum,
)

__all__ = [name for name in dir() if not name.startswith("_")]

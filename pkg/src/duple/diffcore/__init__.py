"""Minimal float64 differentiable compute: tensors, ops, params, gradient checks."""
from . import kernels
from .gradcheck import grad_check
from .params import ParamStore, load_checkpoint, param_rng, save_checkpoint, update_params
from .tensor import (
    ShapeError,
    Tensor,
    add,
    amax,
    as_tensor,
    concat,
    conv1d,
    conv2d,
    cosine_similarity,
    cross_entropy,
    div,
    exp,
    getitem,
    linear,
    log,
    log_softmax,
    log_sum_exp,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softmax,
    softplus,
    sqrt,
    square,
    stack,
    sub,
    tanh,
    transpose,
    tsum,
)

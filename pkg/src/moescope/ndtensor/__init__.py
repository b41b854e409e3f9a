"""Minimal float64 tensor library with reverse-mode differentiation."""
from .functional import (
    BatchNormState,
    as_param,
    batchnorm,
    batchnorm1d,
    batchnorm2d,
    conv2d,
    gap,
    keep_topk,
    l2norm,
    linear,
    log_softmax_masked,
    normalize_rows,
    relu,
    softmax_masked,
    softplus,
    topk_indices,
)
from .kernels import BACKEND
from .tensor import (
    Node,
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    div,
    exp,
    expand,
    gather,
    grad_enabled,
    log,
    mask_fill,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    reshape,
    scale_rows,
    scatter_rows,
    sqrt,
    square,
    sub,
    take_rows,
    transpose,
    tsum,
)

"""Tensor arithmetic, seeded RNG and reverse-mode differentiation."""

from .autograd import (
    Graph,
    GradcheckResult,
    Node,
    add,
    backward,
    broadcast_to,
    clamp,
    concat,
    conv2d,
    detach,
    graph_of,
    record,
    unbroadcast,
    div,
    exp,
    getitem,
    gradcheck,
    gradcheck_all,
    l2_normalize,
    leaky_relu,
    log,
    matmul,
    mean,
    mul,
    relative_error,
    relu,
    reshape,
    sigmoid,
    softmax,
    square,
    sub,
    sum_,
    transpose,
    upsample2x,
    value,
)
from .rng import Rng
from .tensor import as_tensor, decode_ltsr, encode_ltsr, load_ltsr, save_ltsr

__all__ = [name for name in dir() if not name.startswith("_")]

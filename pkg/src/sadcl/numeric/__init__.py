from .gradcheck import GradCheckReport, check_gradients, relative_error
from .rng import RngState, seeded_rng
from .tensor import (
    ACTIVATIONS,
    PRECISIONS,
    Parameter,
    Tensor,
    add,
    as_tensor,
    backward,
    broadcast_to,
    clip,
    concat,
    div,
    exp,
    gelu,
    get_dtype,
    l2_normalize,
    layer_norm,
    log,
    masked_logsumexp,
    matmul,
    mean,
    mul,
    no_grad,
    precision,
    relu,
    reshape,
    set_precision,
    sigmoid,
    softmax,
    sub,
    sum_,
    take,
    transpose,
    zero_grad,
)

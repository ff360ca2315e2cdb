from .tensor import (
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    as_tensor,
    backward,
    default_dtype,
    grad,
    precision,
)
from .ops import (
    CATALOG,
    FORBIDDEN,
    CatalogError,
    UnknownOperatorError,
    avg_pool,
    concat,
    conv2d,
    forward_op,
    reduce_max,
    reduce_mean,
    reduce_min,
    reduce_sum,
    register,
    reshape,
    softmax,
    stop_gradient,
    upsample,
)
from . import ops
from .optim import Adam, AdamState, adam_step
from .gradcheck import GradCheckResult, check_gradients

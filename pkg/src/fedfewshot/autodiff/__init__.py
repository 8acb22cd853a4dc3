from . import functional
from .optim import SGD, Adam, make_optimizer
from .tensor import (
    Tensor,
    as_tensor,
    default_dtype,
    get_default_dtype,
    is_grad_enabled,
    no_grad,
    set_debug,
)

__all__ = [
    "Adam",
    "SGD",
    "Tensor",
    "as_tensor",
    "default_dtype",
    "functional",
    "get_default_dtype",
    "is_grad_enabled",
    "make_optimizer",
    "no_grad",
    "set_debug",
]

from . import ops
from .gradcheck import GradCheckReport, grad_check
from .tensor import (
    BackwardError,
    DimensionError,
    NonFiniteError,
    Tape,
    Tensor,
    backward,
    current_tape,
    is_grad_enabled,
    no_grad,
    sabotage,
)

__all__ = [
    "BackwardError",
    "DimensionError",
    "GradCheckReport",
    "NonFiniteError",
    "Tape",
    "Tensor",
    "backward",
    "current_tape",
    "grad_check",
    "is_grad_enabled",
    "no_grad",
    "ops",
    "sabotage",
]

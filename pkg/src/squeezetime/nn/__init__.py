from . import ops
from .gradcheck import GradCheckError, GradCheckResult, grad_check, relative_error
from .ops import ShapeError
from .tape import GradTape, Var

__all__ = [
    "ops",
    "GradTape",
    "Var",
    "ShapeError",
    "GradCheckError",
    "GradCheckResult",
    "grad_check",
    "relative_error",
]

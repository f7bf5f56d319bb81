"""Minimal dense-tensor engine with reverse-mode differentiation."""

from . import ops
from .gradcheck import gradcheck, relative_error
from .module import BatchNorm2d, LayerNorm, Linear, Module, Parameter
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    get_default_dtype,
    grad_enabled,
    no_grad,
    set_default_dtype,
    tensor,
)

__all__ = [
    "BatchNorm2d", "LayerNorm", "Linear", "Module", "NonFiniteError", "Parameter",
    "ShapeError", "Tensor", "get_default_dtype", "grad_enabled", "gradcheck",
    "no_grad", "ops", "relative_error", "set_default_dtype", "tensor",
]

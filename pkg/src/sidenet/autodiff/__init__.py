"""Reverse-mode autodiff substrate: tensors, tape, ops, optimizer."""

from . import functional
from .gradcheck import gradcheck, numeric_gradient
from .optim import AdamW, adamw_step, scalar_adamw
from .tensor import (
    Graph,
    Tensor,
    active_graph,
    backward,
    constant,
    default_dtype,
    finite_checks,
    no_grad,
    parameter,
    precision,
)

__all__ = [
    "AdamW", "Graph", "Tensor", "active_graph", "adamw_step", "backward",
    "constant", "default_dtype", "finite_checks", "functional", "gradcheck",
    "no_grad", "numeric_gradient", "parameter", "precision", "scalar_adamw",
]

"""Minimal reverse-mode autodiff over numpy, sized to the avatar pipeline."""

from . import ops
from .checkpoint import CheckpointError
from .gradcheck import CATALOG, grad_check, register
from .nn import Module, Parameter
from .optim import Adam
from .record import Record
from .tensor import NonFiniteError, Tensor, finite_checks, grad, is_grad_enabled, no_grad

__all__ = [
    "Adam",
    "CATALOG",
    "CheckpointError",
    "Module",
    "NonFiniteError",
    "Parameter",
    "Record",
    "Tensor",
    "finite_checks",
    "grad",
    "grad_check",
    "is_grad_enabled",
    "no_grad",
    "ops",
    "register",
]

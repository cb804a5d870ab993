"""Canonical and meta-autoencoders with a Gauss-Newton encoder."""

from . import ops
from .tape import Tape, Var, evaluate, grad_check

__version__ = "0.1.0"

__all__ = ["Tape", "Var", "evaluate", "grad_check", "ops", "__version__"]

"""Tabular data synthesis with tensor-contraction and transformer VAEs."""

from .tensor import Tensor, Tape, ShapeError, backward
from .kernels import active_backend, set_backend

__version__ = "0.1.0"

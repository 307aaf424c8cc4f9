from .tensor import (
    NonFiniteError,
    Parameter,
    Tensor,
    debug_checks,
    debug_checks_enabled,
    graph_node,
    no_grad,
)
from . import layers, ops

__all__ = [
    "NonFiniteError",
    "Parameter",
    "Tensor",
    "debug_checks",
    "debug_checks_enabled",
    "graph_node",
    "layers",
    "no_grad",
    "ops",
]

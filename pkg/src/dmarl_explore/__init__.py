"""Multi-agent grid exploration with sequential clipped policy updates."""

from .core import (
    FREE,
    N_ACTIONS,
    OCCUPIED,
    UNKNOWN,
    Action,
    CellState,
    ExplorationError,
    GridMap,
    cells_for_range,
)

__version__ = "0.1.0"

__all__ = [
    "FREE",
    "OCCUPIED",
    "UNKNOWN",
    "N_ACTIONS",
    "Action",
    "CellState",
    "ExplorationError",
    "GridMap",
    "cells_for_range",
    "__version__",
]

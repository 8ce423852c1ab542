"""Shared grid types: cell states, the square occupancy grid and the action set."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

FREE = 0
OCCUPIED = 1
UNKNOWN = 2

_TO_CHAR = {FREE: ".", OCCUPIED: "#", UNKNOWN: "?"}
_FROM_CHAR = {v: k for k, v in _TO_CHAR.items()}


class ExplorationError(Exception):
    """Base class for every error raised by this package."""


class CellState(enum.IntEnum):
    FREE = FREE
    OCCUPIED = OCCUPIED
    UNKNOWN = UNKNOWN


class Action(enum.IntEnum):
    UP = 0
    UP_RIGHT = 1
    RIGHT = 2
    DOWN_RIGHT = 3
    DOWN = 4
    DOWN_LEFT = 5
    LEFT = 6
    UP_LEFT = 7
    STAY = 8
    COMM = 9

    @property
    def is_move(self) -> bool:
        return self.value < 8


N_ACTIONS = len(Action)

# (drow, dcol); row 0 is the top edge so Up decreases the row index
MOVE_DELTAS = {
    Action.UP: (-1, 0),
    Action.UP_RIGHT: (-1, 1),
    Action.RIGHT: (0, 1),
    Action.DOWN_RIGHT: (1, 1),
    Action.DOWN: (1, 0),
    Action.DOWN_LEFT: (1, -1),
    Action.LEFT: (0, -1),
    Action.UP_LEFT: (-1, -1),
    Action.STAY: (0, 0),
    Action.COMM: (0, 0),
}


def cells_for_range(distance: float, cell_len: float) -> int:
    """Padding in cells for a world-unit range (round half up)."""
    return int(math.floor(distance / cell_len + 0.5))


@dataclass
class GridMap:
    """Square n x n grid of tri-state cells with cell side ``cell_len`` meters."""

    cells: np.ndarray
    cell_len: float

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.uint8)
        if cells.ndim != 2 or cells.shape[0] != cells.shape[1]:
            raise ValueError(f"grid must be square, got shape {cells.shape}")
        if cells.shape[0] < 1:
            raise ValueError("grid must have at least one cell")
        if not self.cell_len > 0:
            raise ValueError(f"cell length must be positive, got {self.cell_len}")
        if cells.size and cells.max() > UNKNOWN:
            raise ValueError("cell values must be in {0, 1, 2}")
        self.cells = cells
        self.cell_len = float(self.cell_len)

    @classmethod
    def filled(cls, n: int, cell_len: float, value: int) -> "GridMap":
        return cls(np.full((n, n), value, dtype=np.uint8), cell_len)

    @classmethod
    def unknown(cls, n: int, cell_len: float) -> "GridMap":
        return cls.filled(n, cell_len, UNKNOWN)

    @property
    def n(self) -> int:
        return self.cells.shape[0]

    def copy(self) -> "GridMap":
        return GridMap(self.cells.copy(), self.cell_len)

    def known_mask(self) -> np.ndarray:
        return self.cells != UNKNOWN

    def known_count(self) -> int:
        return int(np.count_nonzero(self.cells != UNKNOWN))

    def count(self, value: int) -> int:
        return int(np.count_nonzero(self.cells == value))

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.n and 0 <= col < self.n

    def __eq__(self, other):
        if not isinstance(other, GridMap):
            return NotImplemented
        return self.cell_len == other.cell_len and np.array_equal(self.cells, other.cells)

    def to_text(self) -> str:
        lines = [f"{self.n} {self.cell_len!r}"]
        lut = np.array([_TO_CHAR[FREE], _TO_CHAR[OCCUPIED], _TO_CHAR[UNKNOWN]])
        for row in self.cells:
            lines.append("".join(lut[row]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GridMap":
        lines = [ln.rstrip("\r") for ln in text.strip("\n").split("\n")]
        try:
            n_str, l_str = lines[0].split()
            n, cell_len = int(n_str), float(l_str)
        except (ValueError, IndexError) as exc:
            raise ValueError(f"bad grid header: {lines[:1]!r}") from exc
        rows = lines[1:]
        if len(rows) != n:
            raise ValueError(f"expected {n} grid rows, found {len(rows)}")
        cells = np.empty((n, n), dtype=np.uint8)
        for i, row in enumerate(rows):
            if len(row) != n:
                raise ValueError(f"row {i} has {len(row)} cells, expected {n}")
            try:
                cells[i] = [_FROM_CHAR[ch] for ch in row]
            except KeyError as exc:
                raise ValueError(f"unknown cell character {exc.args[0]!r} in row {i}") from None
        return cls(cells, cell_len)

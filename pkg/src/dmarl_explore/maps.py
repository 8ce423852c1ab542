"""Per-agent maps (agent-specific, collaborative, transmission), sensing and observation encoding."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .core import UNKNOWN, GridMap, cells_for_range

TR_EMPTY = 0
TR_PEER = 1
TR_SELF = 2


@dataclass
class AgentMaps:
    agent_specific: GridMap
    collaborative: GridMap
    transmission: np.ndarray

    @classmethod
    def blank(cls, n: int, cell_len: float) -> "AgentMaps":
        return cls(
            GridMap.unknown(n, cell_len),
            GridMap.unknown(n, cell_len),
            np.zeros((n, n), dtype=np.int8),
        )

    def copy(self) -> "AgentMaps":
        return AgentMaps(self.agent_specific.copy(), self.collaborative.copy(), self.transmission.copy())


@dataclass
class AgentState:
    id: int
    position: tuple
    maps: AgentMaps
    # discoveries since the last communication with each peer, indexed by peer id
    discoveries_since_comm: np.ndarray = field(default=None)
    prev_step_gain: int = 0

    @classmethod
    def spawn(cls, agent_id: int, position, n: int, cell_len: float, n_agents: int) -> "AgentState":
        return cls(
            id=agent_id,
            position=(int(position[0]), int(position[1])),
            maps=AgentMaps.blank(n, cell_len),
            discoveries_since_comm=np.zeros(n_agents, dtype=np.int64),
        )

    def copy(self) -> "AgentState":
        return AgentState(
            self.id, self.position, self.maps.copy(), self.discoveries_since_comm.copy(), self.prev_step_gain
        )


def window_bounds(position, pad: int, n: int):
    r, c = position
    return max(r - pad, 0), min(r + pad + 1, n), max(c - pad, 0), min(c + pad + 1, n)


def detect_and_update(agent: AgentState, arena_map: GridMap, r_d: float) -> int:
    """Copy the square detection window from ground truth into both map layers.

    Returns the number of collaborative cells that went from Unknown to known;
    peer discovery counters grow by that amount and ``prev_step_gain`` is set to it.
    """
    pad = cells_for_range(r_d, arena_map.cell_len)
    r0, r1, c0, c1 = window_bounds(agent.position, pad, arena_map.n)
    truth = arena_map.cells[r0:r1, c0:c1]
    co = agent.maps.collaborative.cells[r0:r1, c0:c1]
    gain = int(np.count_nonzero(co == UNKNOWN))
    co[...] = truth
    agent.maps.agent_specific.cells[r0:r1, c0:c1] = truth
    agent.discoveries_since_comm += gain
    agent.discoveries_since_comm[agent.id] = 0
    agent.prev_step_gain = gain
    return gain


def build_transmission_map(positions, self_id: int, r_c: float, n: int, cell_len: float) -> np.ndarray:
    """2 at the agent's own cell, 1 at each peer within the square comm range, 0 elsewhere."""
    pad = cells_for_range(r_c, cell_len)
    tr = np.zeros((n, n), dtype=np.int8)
    sr, sc = positions[self_id]
    for j, (r, c) in enumerate(positions):
        if j != self_id and max(abs(r - sr), abs(c - sc)) <= pad:
            tr[r, c] = TR_PEER
    tr[sr, sc] = TR_SELF
    return tr


def encode_observation(agent: AgentState) -> np.ndarray:
    """3 x n x n float64 tensor, channels [agent_specific, collaborative, transmission], each divided by 2."""
    m = agent.maps
    obs = np.stack([m.agent_specific.cells, m.collaborative.cells, m.transmission]).astype(np.float64)
    obs *= 0.5
    return obs


def decode_observation(obs: np.ndarray):
    raw = np.rint(np.asarray(obs) * 2.0).astype(np.int16)
    return raw[0].astype(np.uint8), raw[1].astype(np.uint8), raw[2].astype(np.int8)


def observation_to_csv(obs: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["channel", "row", "col", "value"])
    for ch in range(obs.shape[0]):
        for r in range(obs.shape[1]):
            for c in range(obs.shape[2]):
                w.writerow([ch, r, c, repr(float(obs[ch, r, c]))])
    return buf.getvalue()

"""Communication networks among agents that chose Comm, and the collaborative-map merge."""

from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import OCCUPIED, UNKNOWN, ExplorationError, GridMap, cells_for_range


class ConflictingKnownStates(ExplorationError):
    pass


@dataclass(frozen=True)
class CommNetwork:
    members: tuple

    def __len__(self):
        return len(self.members)


@dataclass
class CommOutcome:
    gains: list
    networks: list


def form_networks(positions, comm_choices, r_c: float, cell_len: float) -> list:
    """Connected components over communicating agents; edge iff Chebyshev distance <= comm padding.

    Agents that did not choose Comm are excluded entirely and never relay.
    Networks come back ordered by their smallest member, members sorted.
    """
    pad = cells_for_range(r_c, cell_len)
    talkers = [i for i, choice in enumerate(comm_choices) if choice]
    unvisited = set(talkers)
    networks = []
    for root in talkers:
        if root not in unvisited:
            continue
        unvisited.discard(root)
        component = [root]
        queue = deque([root])
        while queue:
            i = queue.popleft()
            ri, ci = positions[i]
            for j in sorted(unvisited):
                rj, cj = positions[j]
                if max(abs(ri - rj), abs(ci - cj)) <= pad:
                    unvisited.discard(j)
                    component.append(j)
                    queue.append(j)
        networks.append(CommNetwork(tuple(sorted(component))))
    return networks


def merge_network(maps, conflict: str = "raise") -> GridMap:
    """Cell-wise union of collaborative maps.

    ``conflict="raise"`` treats disagreeing known cells as a simulator bug;
    ``conflict="occupied"`` resolves them to Occupied (used for sensed maps).
    """
    if not maps:
        raise ValueError("cannot merge an empty set of maps")
    n, cell_len = maps[0].n, maps[0].cell_len
    for m in maps[1:]:
        if m.n != n or m.cell_len != cell_len:
            raise ValueError("maps in a network must share size and cell length")
    merged = maps[0].cells.copy()
    for m in maps[1:]:
        other = m.cells
        both = (merged != UNKNOWN) & (other != UNKNOWN)
        clash = both & (merged != other)
        if clash.any():
            if conflict == "raise":
                r, c = np.argwhere(clash)[0]
                raise ConflictingKnownStates(
                    f"cell ({r}, {c}) is {merged[r, c]} in one map and {other[r, c]} in another"
                )
            merged[clash] = OCCUPIED
        fill = merged == UNKNOWN
        merged[fill] = other[fill]
    return GridMap(merged, cell_len)


def resolve_communication(agents, comm_choices, r_c: float, conflict: str = "raise") -> CommOutcome:
    """Merge collaborative maps within every network of two or more members (mutates ``agents``)."""
    cell_len = agents[0].maps.collaborative.cell_len if agents else 1.0
    positions = [a.position for a in agents]
    networks = form_networks(positions, comm_choices, r_c, cell_len)
    gains = [0] * len(agents)
    for net in networks:
        if len(net) < 2:
            continue
        merged = merge_network([agents[i].maps.collaborative for i in net.members], conflict)
        merged_known = merged.known_count()
        for i in net.members:
            gains[i] = merged_known - agents[i].maps.collaborative.known_count()
            agents[i].maps.collaborative = merged.copy()
            for j in net.members:
                agents[i].discoveries_since_comm[j] = 0
    return CommOutcome(gains, networks)


def comm_log_csv(events) -> str:
    """CSV of (step, members, gains) with ';'-joined member ids and per-member gains."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "members", "gains"])
    for step, members, member_gains in events:
        w.writerow([step, ";".join(map(str, members)), ";".join(map(str, member_gains))])
    return buf.getvalue()

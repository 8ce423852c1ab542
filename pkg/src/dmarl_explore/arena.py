"""Ground-truth arena, initial placement and the deterministic joint transition."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .comms import resolve_communication
from .core import (
    FREE,
    MOVE_DELTAS,
    N_ACTIONS,
    OCCUPIED,
    UNKNOWN,
    Action,
    ExplorationError,
    GridMap,
    cells_for_range,
)
from .maps import TR_PEER, AgentState, build_transmission_map, detect_and_update, encode_observation
from .rewards import RewardConfig, RewardContext, reward_terms

GENERATION_ATTEMPTS = 1000


class GenerationFailed(ExplorationError):
    pass


class TooManyAgents(ExplorationError):
    pass


class ActionCountMismatch(ExplorationError):
    pass


class SteppedTerminalState(ExplorationError):
    pass


class Terminal(str, enum.Enum):
    NONE = "none"
    SUCCESS = "success"
    COLLISION = "collision"
    STEP_CAP = "step_cap"


@dataclass
class Arena:
    map: GridMap
    seed: int | None = None

    def __post_init__(self):
        if self.map.n < 3:
            raise ValueError(f"arena side must be at least 3 cells, got {self.map.n}")
        if (self.map.cells == UNKNOWN).any():
            raise ValueError("ground-truth arenas cannot contain Unknown cells")

    @property
    def n(self) -> int:
        return self.map.n

    @property
    def cell_len(self) -> float:
        return self.map.cell_len

    @property
    def free_mask(self) -> np.ndarray:
        return self.map.cells == FREE

    @property
    def free_count(self) -> int:
        return self.map.count(FREE)

    def is_connected(self) -> bool:
        return free_space_connected(self.map.cells)

    def to_text(self) -> str:
        return self.map.to_text()

    @classmethod
    def from_text(cls, text: str, seed: int | None = None) -> "Arena":
        return cls(GridMap.from_text(text), seed)


def free_space_connected(cells: np.ndarray) -> bool:
    free = cells == FREE
    total = int(np.count_nonzero(free))
    if total == 0:
        return True
    r, c = np.argwhere(free)[0]
    return kernels.flood_fill_count(free.view(np.uint8), int(r), int(c)) == total


def generate_arena(
    n: int,
    cell_len: float,
    obstacle_count: int,
    max_obstacle_side: int,
    seed: int,
    min_free: int = 1,
) -> Arena:
    """Drop axis-aligned rectangular obstacles one by one, rejecting any that disconnect free space."""
    if n < 3:
        raise ValueError(f"n must be >= 3, got {n}")
    if obstacle_count < 0:
        raise ValueError("obstacle_count must be >= 0")
    if obstacle_count and max_obstacle_side < 1:
        raise ValueError("max_obstacle_side must be >= 1")
    rng = np.random.default_rng(seed)
    cells = np.zeros((n, n), dtype=np.uint8)
    placed = 0
    attempts = 0
    side_cap = min(max_obstacle_side, n)
    while placed < obstacle_count:
        if attempts >= GENERATION_ATTEMPTS:
            raise GenerationFailed(
                f"placed {placed}/{obstacle_count} obstacles in {GENERATION_ATTEMPTS} attempts (seed={seed})"
            )
        attempts += 1
        h = int(rng.integers(1, side_cap + 1))
        w = int(rng.integers(1, side_cap + 1))
        r = int(rng.integers(0, n - h + 1))
        c = int(rng.integers(0, n - w + 1))
        trial = cells.copy()
        trial[r : r + h, c : c + w] = OCCUPIED
        if np.count_nonzero(trial == FREE) < min_free or not free_space_connected(trial):
            continue
        cells = trial
        placed += 1
    return Arena(GridMap(cells, cell_len), seed)


def sample_initial_positions(arena: Arena, n_agents: int, seed) -> list:
    """Distinct Free cells drawn uniformly without replacement; ``seed`` may be an int or a Generator."""
    free = np.argwhere(arena.free_mask)
    if n_agents > len(free):
        raise TooManyAgents(f"{n_agents} agents but only {len(free)} free cells")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = rng.choice(len(free), size=n_agents, replace=False)
    return [(int(free[i, 0]), int(free[i, 1])) for i in idx]


@dataclass(frozen=True)
class EnvConfig:
    n: int = 50
    cell_len: float = 0.5
    r_d: float = 1.0
    r_c: float = 5.0
    n_agents: int = 4
    step_cap: int = 200
    p_threshold: float = 0.9
    collision_terminates: bool = True
    reward: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("n must be >= 3")
        if self.n_agents < 1:
            raise ValueError("need at least one agent")
        if self.reward.study_case == 4 and self.n_agents < 2:
            raise ValueError("study case 4 needs at least two agents")
        if self.reward.r_d != self.r_d or self.reward.cell_len != self.cell_len:
            object.__setattr__(self, "reward", replace(self.reward, r_d=self.r_d, cell_len=self.cell_len))

    @property
    def detect_pad(self) -> int:
        return cells_for_range(self.r_d, self.cell_len)

    @property
    def comm_pad(self) -> int:
        return cells_for_range(self.r_c, self.cell_len)


@dataclass
class JointState:
    arena: Arena
    agents: list
    t: int = 0
    terminal: Terminal = Terminal.NONE

    @property
    def positions(self) -> list:
        return [a.position for a in self.agents]

    def copy(self) -> "JointState":
        return JointState(self.arena, [a.copy() for a in self.agents], self.t, self.terminal)


@dataclass
class StepEvents:
    moved: list
    collided: list
    communicated: list
    gains: list
    comm_gains: list
    networks: list
    terminal: Terminal
    contexts: list
    rewards: list
    reward_terms: list


def known_free_fraction(agent: AgentState, arena: Arena) -> float:
    total = arena.free_count
    if total == 0:
        return 1.0
    co = agent.maps.collaborative.cells
    return np.count_nonzero((co == FREE) & arena.free_mask) / total


def coverage(state: JointState) -> float:
    """Best per-agent fraction of the arena's Free cells known in the collaborative map."""
    return max(known_free_fraction(a, state.arena) for a in state.agents)


def _refresh_transmission(agents, cfg: EnvConfig):
    positions = [a.position for a in agents]
    for a in agents:
        a.maps.transmission = build_transmission_map(positions, a.id, cfg.r_c, cfg.n, cfg.cell_len)


def reset(arena: Arena, positions, cfg: EnvConfig) -> JointState:
    """Spawn agents, run the initial detection and build transmission maps."""
    if arena.n != cfg.n or arena.cell_len != cfg.cell_len:
        raise ValueError(f"arena is {arena.n}x{arena.n} @ {arena.cell_len}, config expects {cfg.n} @ {cfg.cell_len}")
    if len(positions) != cfg.n_agents:
        raise ValueError(f"expected {cfg.n_agents} positions, got {len(positions)}")
    if len(set(map(tuple, positions))) != len(positions):
        raise ValueError("initial positions must be distinct")
    agents = []
    for i, pos in enumerate(positions):
        if arena.map.cells[pos[0], pos[1]] != FREE:
            raise ValueError(f"agent {i} spawns on a non-free cell {pos}")
        agent = AgentState.spawn(i, pos, cfg.n, cfg.cell_len, cfg.n_agents)
        detect_and_update(agent, arena.map, cfg.r_d)
        agent.prev_step_gain = 0
        agents.append(agent)
    _refresh_transmission(agents, cfg)
    return JointState(arena, agents, 0)


def resolve_moves(arena: Arena, positions, actions):
    """Return (targets, collided) applying the conflict rules to a joint action.

    A mover collides when its target is off-grid or Occupied, shared with another
    mover, swapped with another mover, or held by an agent that ends up not moving.
    Conflicts cascade until no new collision appears.
    """
    n = arena.n
    k = len(positions)
    targets = []
    collided = [False] * k
    for i, a in enumerate(actions):
        dr, dc = MOVE_DELTAS[Action(a)]
        r, c = positions[i][0] + dr, positions[i][1] + dc
        targets.append((r, c))
        if Action(a).is_move and not (0 <= r < n and 0 <= c < n and arena.map.cells[r, c] == FREE):
            collided[i] = True
    movers = [i for i in range(k) if Action(actions[i]).is_move]
    for i in movers:
        for j in movers:
            if i < j and targets[i] == targets[j]:
                collided[i] = collided[j] = True
            if i != j and targets[i] == positions[j] and targets[j] == positions[i]:
                collided[i] = collided[j] = True
    changed = True
    while changed:
        changed = False
        stationary = {positions[j] for j in range(k) if not Action(actions[j]).is_move or collided[j]}
        for i in movers:
            if not collided[i] and targets[i] in stationary:
                collided[i] = True
                changed = True
    return targets, collided


def step(state: JointState, joint_action, cfg: EnvConfig):
    """Advance one synchronized step; returns (next_state, events). The input state is not mutated."""
    if len(joint_action) != len(state.agents):
        raise ActionCountMismatch(f"{len(joint_action)} actions for {len(state.agents)} agents")
    if state.terminal != Terminal.NONE:
        raise SteppedTerminalState(f"state is terminal ({state.terminal.value})")
    actions = [Action(int(a)) for a in joint_action]
    nxt = state.copy()
    agents = nxt.agents
    arena = nxt.arena
    positions = state.positions
    prev_gains = [a.prev_step_gain for a in state.agents]

    targets, collided = resolve_moves(arena, positions, actions)
    moved = [False] * len(agents)
    for i, a in enumerate(actions):
        if a.is_move and not collided[i]:
            agents[i].position = targets[i]
            moved[i] = True

    gains = [detect_and_update(agent, arena.map, cfg.r_d) for agent in agents]
    n_unknown = [agent.maps.collaborative.count(UNKNOWN) for agent in agents]
    d_before = [agent.discoveries_since_comm.copy() for agent in agents]

    comm_choices = [a == Action.COMM for a in actions]
    outcome = resolve_communication(agents, comm_choices, cfg.r_c)
    _refresh_transmission(agents, cfg)

    network_of = {}
    for net in outcome.networks:
        for m in net.members:
            network_of[m] = net
    w = [1 if (comm_choices[i] and len(network_of[i]) >= 2) else 0 for i in range(len(agents))]

    if any(collided) and cfg.collision_terminates:
        terminal = Terminal.COLLISION
    elif coverage(nxt) >= cfg.p_threshold:
        terminal = Terminal.SUCCESS
    elif state.t + 1 >= cfg.step_cap:
        terminal = Terminal.STEP_CAP
    else:
        terminal = Terminal.NONE
    nxt.t = state.t + 1
    nxt.terminal = terminal

    n = cfg.n
    contexts = []
    for i, agent in enumerate(agents):
        peers = []
        for j in range(len(agents)):
            if j == i:
                continue
            same = 1 if (i in network_of and network_of.get(j) is network_of[i]) else 0
            peers.append((w[j], same, int(d_before[i][j])))
        r, c = agent.position
        contexts.append(
            RewardContext(
                action=int(actions[i]),
                collided=collided[i],
                gain=gains[i],
                comm_gain=outcome.gains[i],
                comm_indicator=w[i],
                n_unknown=n_unknown[i],
                prev_step_gain=prev_gains[i],
                peers=peers,
                n_agents=len(agents),
                n=n,
                position_unchanged=agent.position == positions[i],
                near_boundary=r == 0 or c == 0 or r == n - 1 or c == n - 1,
            )
        )
    terms = [reward_terms(ctx, cfg.reward) for ctx in contexts]
    events = StepEvents(
        moved=moved,
        collided=collided,
        communicated=[bool(x) for x in w],
        gains=gains,
        comm_gains=list(outcome.gains),
        networks=outcome.networks,
        terminal=terminal,
        contexts=contexts,
        rewards=[t["total"] for t in terms],
        reward_terms=terms,
    )
    return nxt, events


def action_mask(agent: AgentState) -> np.ndarray:
    """Allowed actions from the agent's own maps.

    A move is masked when it leaves the grid, enters a cell known Occupied in
    the collaborative map, or lands within one cell of a peer visible in the
    transmission map (so simultaneous moves can never collide). Stay and Comm
    are always allowed.
    """
    co = agent.maps.collaborative.cells
    tr = agent.maps.transmission
    n = co.shape[0]
    peers = np.argwhere(tr == TR_PEER)
    allowed = np.ones(N_ACTIONS, dtype=bool)
    r0, c0 = agent.position
    for a in range(8):
        dr, dc = MOVE_DELTAS[Action(a)]
        r, c = r0 + dr, c0 + dc
        if not (0 <= r < n and 0 <= c < n) or co[r, c] == OCCUPIED:
            allowed[a] = False
            continue
        if len(peers) and np.max(np.abs(peers - (r, c)), axis=1).min() <= 1:
            allowed[a] = False
    return allowed


def state_tensor(state: JointState, step_cap: int) -> np.ndarray:
    """Critic input: [union of collaborative maps / 2, agent-position plane, t / step_cap plane]."""
    n = state.arena.n
    union = np.full((n, n), UNKNOWN, dtype=np.uint8)
    for a in state.agents:
        co = a.maps.collaborative.cells
        fill = union == UNKNOWN
        union[fill] = co[fill]
    pos = np.zeros((n, n), dtype=np.float64)
    for r, c in state.positions:
        pos[r, c] = 1.0
    progress = np.full((n, n), state.t / float(step_cap), dtype=np.float64)
    return np.stack([union.astype(np.float64) * 0.5, pos, progress])


def observations(state: JointState) -> list:
    return [encode_observation(a) for a in state.agents]

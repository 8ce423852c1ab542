"""Continuous-space deployment: unicycle robots driving cell to cell under trained policies.

World frame: x runs along grid columns and y along grid rows, so the robot at
(x, y) sits in cell (floor(y / l), floor(x / l)). Sensing is a deterministic
ray caster with perfect localization; its occupancy-probability output goes
through the same thresholding a SLAM occupancy grid would.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from . import neuralnet as nn
from .arena import Arena, EnvConfig, action_mask, known_free_fraction, resolve_moves
from .comms import resolve_communication
from .core import FREE, OCCUPIED, UNKNOWN, Action, ExplorationError, GridMap, cells_for_range
from .maps import AgentState, build_transmission_map, encode_observation, window_bounds
from .metrics import jaccard_table

OCC_UNKNOWN = -1
OCC_THRESHOLD = 50

# Starting (x, y) positions in meters of tb1..tb4 per setup
SETUPS = {
    1: [(1.25, 1.25), (1.25, 23.75), (23.75, 1.25), (23.75, 23.75)],
    2: [(16.75, 6.25), (11.75, 23.25), (11.75, 4.25), (5.75, 2.25)],
    3: [(10.25, 20.75), (6.75, 15.25), (4.25, 14.75), (3.75, 2.25)],
    4: [(15.25, 23.25), (0.75, 7.75), (17.75, 10.75), (7.25, 21.75)],
}


class NavigationTimeout(ExplorationError):
    pass


def normalize_angle(a: float) -> float:
    """Wrap into [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass
class Pose:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        self.theta = normalize_angle(self.theta)


@dataclass(frozen=True)
class ControllerGains:
    zeta: float = 0.01
    gamma: float = 0.1
    k_v: float = 1.0
    k_w: float = 0.4

    def __post_init__(self):
        if min(self.zeta, self.gamma, self.k_v, self.k_w) <= 0:
            raise ValueError("controller gains must be positive")


def controller_step(pose: Pose, target, gains: ControllerGains = ControllerGains()):
    """Rotate-then-drive point controller; final heading is ignored. Returns (v, omega)."""
    e_x = target[0] - pose.x
    e_y = target[1] - pose.y
    dist = math.sqrt(e_x * e_x + e_y * e_y)
    if dist <= gains.zeta:
        return 0.0, 0.0
    e_theta = normalize_angle(math.atan2(e_y, e_x) - pose.theta)
    if abs(e_theta) > gains.gamma:
        return 0.0, gains.k_w * e_theta
    return gains.k_v * dist, 0.0


def integrate(pose: Pose, v: float, omega: float, dt: float) -> Pose:
    return Pose(
        pose.x + v * math.cos(pose.theta) * dt,
        pose.y + v * math.sin(pose.theta) * dt,
        pose.theta + omega * dt,
    )


def cell_center(row: int, col: int, cell_len: float):
    return ((col + 0.5) * cell_len, (row + 0.5) * cell_len)


def pose_cell(pose: Pose, cell_len: float):
    return int(math.floor(pose.y / cell_len)), int(math.floor(pose.x / cell_len))


def raycast_sense(pose: Pose, arena_map: GridMap, sensor_range: float, r_d: float, n_rays: int = 360) -> np.ndarray:
    """Occupancy-probability grid (-1 unknown, 0 free, 100 hit) restricted to the detection window."""
    occ = (arena_map.cells == OCCUPIED).view(np.uint8)
    seen = kernels.raycast(occ, pose.x, pose.y, pose.theta, arena_map.cell_len, sensor_range, n_rays)
    out = np.full(seen.shape, OCC_UNKNOWN, dtype=np.int16)
    n = arena_map.n
    row, col = pose_cell(pose, arena_map.cell_len)
    if not (0 <= row < n and 0 <= col < n):
        return out
    pad = cells_for_range(r_d, arena_map.cell_len)
    r0, r1, c0, c1 = window_bounds((row, col), pad, n)
    out[r0:r1, c0:c1] = seen[r0:r1, c0:c1]
    return out


def update_agent_specific(slam: np.ndarray, maps, peer_cells=()) -> int:
    """Threshold occupancy probabilities into both map layers.

    -1 < p < 50 -> Free; p >= 50 -> Free when a peer robot stands there, else
    Occupied; p == -1 leaves the cell alone. Returns the number of collaborative
    cells that went from Unknown to known.
    """
    slam = np.asarray(slam)
    peer = np.zeros(slam.shape, dtype=bool)
    for r, c in peer_cells:
        peer[r, c] = True
    free = (slam > OCC_UNKNOWN) & (slam < OCC_THRESHOLD)
    high = slam >= OCC_THRESHOLD
    new_free = free | (high & peer)
    new_occ = high & ~peer
    co = maps.collaborative.cells
    gain = int(np.count_nonzero((co == UNKNOWN) & (new_free | new_occ)))
    for layer in (maps.agent_specific.cells, co):
        layer[new_free] = FREE
        layer[new_occ] = OCCUPIED
    return gain


def default_deploy_arena() -> Arena:
    """25 m x 25 m walled square at l = 0.5 with six box obstacles clear of every setup's start cell."""
    cells = np.zeros((50, 50), dtype=np.uint8)
    for r0, r1, c0, c1 in [
        (8, 14, 8, 16),
        (20, 25, 20, 30),
        (33, 39, 36, 45),
        (30, 43, 26, 29),
        (14, 19, 40, 47),
        (34, 38, 3, 11),
    ]:
        cells[r0:r1, c0:c1] = OCCUPIED
    return Arena(GridMap(cells, 0.5), seed=None)


def setup_poses(setup: int, arena: Arena) -> list:
    if setup not in SETUPS:
        raise ValueError(f"setup must be one of {sorted(SETUPS)}, got {setup}")
    poses = [Pose(x, y, 0.0) for x, y in SETUPS[setup]]
    for k, p in enumerate(poses):
        r, c = pose_cell(p, arena.cell_len)
        if not (0 <= r < arena.n and 0 <= c < arena.n) or arena.map.cells[r, c] != FREE:
            raise ValueError(f"setup {setup}: tb{k + 1} start {p.x, p.y} is not in free space")
    return poses


@dataclass(frozen=True)
class DeploymentConfig:
    dt: float = 0.05
    nav_budget: float = 30.0
    sensor_range: float = 3.5
    n_rays: int = 360
    rho: float = 0.9
    step_cap: int = 1000
    mask_invalid: bool = True
    greedy: bool = True
    seed: int = 0
    gains: ControllerGains = field(default_factory=ControllerGains)

    def __post_init__(self):
        if self.dt <= 0 or self.nav_budget <= 0:
            raise ValueError("dt and nav_budget must be positive")


@dataclass
class DeploymentResult:
    steps: int
    terminal: str
    coverage_free: float
    coverage_all: float
    pairwise: dict
    agents: list
    poses: list
    trace: list  # rows: step, agent, x, y, theta, action, commands, gain, comm_gain, timeout
    cells: list  # per step (after movement), list of agent cells; index 0 = start
    coverage: list
    comm_events: list
    barrier_log: list  # (phase, step, agent) in execution order


TRACE_COLUMNS = ["step", "agent", "x", "y", "theta", "action", "commands", "gain", "comm_gain", "timeout"]


def navigate(poses, targets, arena_map: GridMap, cfg: DeploymentConfig):
    """Drive every robot with a target concurrently until all arrive or the budget runs out.

    Returns (poses, commands, arrived, collided).
    """
    poses = list(poses)
    k = len(poses)
    active = [t is not None for t in targets]
    arrived = [not a for a in active]
    collided = [False] * k
    commands = [0] * k
    ticks = int(round(cfg.nav_budget / cfg.dt))
    n, l = arena_map.n, arena_map.cell_len
    for _ in range(ticks):
        if not any(active):
            break
        for i in range(k):
            if not active[i]:
                continue
            v, w = controller_step(poses[i], targets[i], cfg.gains)
            if v == 0.0 and w == 0.0:
                active[i] = False
                arrived[i] = True
                continue
            commands[i] += 1
            poses[i] = integrate(poses[i], v, w, cfg.dt)
            r, c = pose_cell(poses[i], l)
            if not (0 <= r < n and 0 <= c < n) or arena_map.cells[r, c] == OCCUPIED:
                collided[i] = True
                active[i] = False
        if any(collided):
            break
    for i in range(k):
        if active[i] and controller_step(poses[i], targets[i], cfg.gains) == (0.0, 0.0):
            arrived[i] = True
    return poses, commands, arrived, collided


def run_deployment(actors, arena: Arena, poses, env_cfg: EnvConfig, cfg: DeploymentConfig) -> DeploymentResult:
    """Lockstep execution: choose actions, drive, sense, communicate, check the discovery ratio."""
    n, l = arena.n, arena.cell_len
    k = len(poses)
    if len(actors) != k:
        raise ValueError(f"{len(actors)} actors for {k} robots")
    for a in actors:
        nn.check_shapes(a, n, 10, "actor")
    rng = np.random.default_rng(cfg.seed)
    poses = [Pose(p.x, p.y, p.theta) for p in poses]
    agents = [AgentState.spawn(i, pose_cell(p, l), n, l, k) for i, p in enumerate(poses)]
    total_cells = n * n

    def sense_all():
        cells_now = [a.position for a in agents]
        gains = []
        for i, a in enumerate(agents):
            slam = raycast_sense(poses[i], arena.map, cfg.sensor_range, env_cfg.r_d, cfg.n_rays)
            peers = [c for j, c in enumerate(cells_now) if j != i]
            g = update_agent_specific(slam, a.maps, peers)
            a.discoveries_since_comm += g
            a.discoveries_since_comm[a.id] = 0
            a.prev_step_gain = g
            gains.append(g)
        return gains

    def refresh_transmission():
        pos = [a.position for a in agents]
        for a in agents:
            a.maps.transmission = build_transmission_map(pos, a.id, env_cfg.r_c, n, l)

    def ratios():
        free = max(known_free_fraction(a, arena) for a in agents)
        known = max(a.maps.collaborative.known_count() for a in agents) / total_cells
        return free, known

    sense_all()
    refresh_transmission()
    trace, barrier, comm_events = [], [], []
    cells_hist = [[a.position for a in agents]]
    rho_j, known_j = ratios()
    coverage = [rho_j]
    terminal = "none"
    j = 0
    while True:
        if rho_j >= cfg.rho:
            terminal = "success"
            break
        if j >= cfg.step_cap:
            terminal = "step_cap"
            break
        j += 1
        actions = []
        for i, a in enumerate(agents):
            barrier.append(("act", j, i))
            mask = action_mask(a) if cfg.mask_invalid else None
            out = nn.policy(actors[i], encode_observation(a), mask)
            act, _ = nn.sample_action(out, rng, greedy=cfg.greedy)
            actions.append(Action(act))
        cur = [a.position for a in agents]
        targets_cells, blocked = resolve_moves(arena, cur, actions)
        agent_conflict = False
        targets = []
        for i, act in enumerate(actions):
            if not act.is_move:
                targets.append(None)
                continue
            r, c = targets_cells[i]
            in_free = 0 <= r < n and 0 <= c < n and arena.map.cells[r, c] == FREE
            if blocked[i] and in_free:
                agent_conflict = True
            targets.append(cell_center(r, c, l))
        if agent_conflict:
            terminal = "collision"
            for i in range(k):
                barrier.append(("done", j, i))
            break
        poses, commands, arrived, collided = navigate(poses, targets, arena.map, cfg)
        timeouts = [targets[i] is not None and not arrived[i] and not collided[i] for i in range(k)]
        for i, a in enumerate(agents):
            if targets[i] is not None and arrived[i]:
                a.position = targets_cells[i]
        gains = sense_all()
        outcome = resolve_communication(agents, [act == Action.COMM for act in actions], env_cfg.r_c, conflict="occupied")
        for net in outcome.networks:
            if len(net) >= 2:
                comm_events.append((j, list(net.members), [outcome.gains[m] for m in net.members]))
        refresh_transmission()
        for i in range(k):
            p = poses[i]
            trace.append([j, i, p.x, p.y, p.theta, int(actions[i]), commands[i], gains[i], outcome.gains[i], int(timeouts[i])])
            barrier.append(("done", j, i))
        cells_hist.append([a.position for a in agents])
        rho_j, known_j = ratios()
        coverage.append(rho_j)
        if any(collided):
            terminal = "collision"
            break
    return DeploymentResult(
        steps=j,
        terminal=terminal,
        coverage_free=rho_j,
        coverage_all=known_j,
        pairwise=jaccard_table([a.maps.agent_specific for a in agents]),
        agents=agents,
        poses=poses,
        trace=trace,
        cells=cells_hist,
        coverage=coverage,
        comm_events=comm_events,
        barrier_log=barrier,
    )

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dmarl_explore import neuralnet as nn
from dmarl_explore.arena import Arena, EnvConfig
from dmarl_explore.core import FREE, OCCUPIED, UNKNOWN, GridMap
from dmarl_explore.deploy import (
    SETUPS,
    ControllerGains,
    DeploymentConfig,
    Pose,
    cell_center,
    controller_step,
    default_deploy_arena,
    integrate,
    navigate,
    normalize_angle,
    pose_cell,
    raycast_sense,
    run_deployment,
    setup_poses,
    update_agent_specific,
)
from dmarl_explore.evaluation import run_eval_episode
from dmarl_explore.maps import AgentState
from dmarl_explore.rewards import RewardConfig
from oracles import reference_raycast

GAINS = ControllerGains()


# ------------------------------------------------------------- controller


def test_controller_stops_inside_tolerance():
    assert controller_step(Pose(0.0, 0.0, 1.0), (0.005, 0.0), GAINS) == (0.0, 0.0)


def test_controller_rotates_when_heading_is_off():
    v, w = controller_step(Pose(0.0, 0.0, 0.0), (0.0, 1.0), GAINS)
    assert v == 0.0
    assert w == 0.4 * (math.pi / 2)


def test_controller_drives_when_aligned():
    assert controller_step(Pose(0.0, 0.0, 0.0), (1.0, 0.0), GAINS) == (1.0, 0.0)
    # within the heading tolerance the robot drives straight
    v, w = controller_step(Pose(0.0, 0.0, 0.05), (2.0, 0.0), GAINS)
    assert (v, w) == (2.0, 0.0)


def test_controller_is_periodic_in_heading():
    for th in np.linspace(-3, 3, 13):
        a = controller_step(Pose(0.1, 0.2, th), (0.75, 0.25), GAINS)
        b = controller_step(Pose(0.1, 0.2, th + 2 * math.pi), (0.75, 0.25), GAINS)
        assert a == pytest.approx(b, abs=1e-12)


def test_gains_must_be_positive():
    with pytest.raises(ValueError):
        ControllerGains(k_v=0.0)


@given(st.floats(-100, 100))
def test_normalize_angle_range(a):
    b = normalize_angle(a)
    assert -math.pi <= b < math.pi
    assert math.isclose(math.cos(a), math.cos(b), abs_tol=1e-9)


def test_integrate_wraps_heading():
    p = integrate(Pose(0.0, 0.0, 3.1), 0.0, 1.0, 0.1)
    assert p.theta == pytest.approx(3.2 - 2 * math.pi)
    q = integrate(Pose(1.0, 2.0, math.pi / 2), 2.0, 0.0, 0.5)
    assert (q.x, q.y) == pytest.approx((1.0, 3.0))


def test_closed_loop_converges_from_random_headings():
    g = np.random.default_rng(0)
    open_map = GridMap.filled(4, 0.5, FREE)
    cfg = DeploymentConfig()
    for th in g.uniform(-math.pi, math.pi, 100):
        start = Pose(0.25, 0.25, th)
        target = cell_center(0, 1, 0.5)
        (end,), (cmds,), (arrived,), (hit,) = navigate([start], [target], open_map, cfg)
        assert arrived and not hit
        assert math.dist((end.x, end.y), target) <= GAINS.zeta
        assert cmds * cfg.dt <= cfg.nav_budget


def test_off_center_start_reaches_adjacent_center():
    cfg = DeploymentConfig()
    (end,), _, (arrived,), _ = navigate([Pose(0.05, 0.0, 0.0)], [(0.75, 0.25)], GridMap.filled(4, 0.5, FREE), cfg)
    assert arrived and math.dist((end.x, end.y), (0.75, 0.25)) <= 0.01


def test_navigation_timeout_reports_not_arrived():
    cfg = DeploymentConfig(nav_budget=0.5)
    _, _, (arrived,), (hit,) = navigate([Pose(0.25, 0.25, math.pi)], [(1.75, 0.25)], GridMap.filled(4, 0.5, FREE), cfg)
    assert not arrived and not hit


def test_driving_into_obstacle_is_collision():
    m = GridMap.filled(4, 0.5, FREE)
    m.cells[0, 1] = OCCUPIED
    _, _, (arrived,), (hit,) = navigate([Pose(0.25, 0.25, 0.0)], [(0.75, 0.25)], m, DeploymentConfig())
    assert hit and not arrived


def test_pose_cell_and_cell_center_are_inverse():
    for r in range(5):
        for c in range(5):
            x, y = cell_center(r, c, 0.5)
            assert pose_cell(Pose(x, y), 0.5) == (r, c)


# ------------------------------------------------------------- occupancy bridge


def bridge(values, peers=()):
    agent = AgentState.spawn(0, (0, 0), 2, 0.5, 2)
    agent.maps.agent_specific.cells[:] = UNKNOWN
    agent.maps.collaborative.cells[:] = UNKNOWN
    agent.maps.agent_specific.cells[1, 1] = OCCUPIED
    agent.maps.collaborative.cells[1, 1] = OCCUPIED
    gain = update_agent_specific(np.array(values, dtype=np.int16).reshape(2, 2), agent.maps, peers)
    return agent.maps.agent_specific.cells.copy(), agent.maps.collaborative.cells.copy(), gain


def test_bridge_thresholds():
    own, col, gain = bridge([30, 50, 100, -1], peers=[(1, 0)])
    assert own[0, 0] == FREE
    assert own[0, 1] == OCCUPIED
    assert own[1, 0] == FREE
    assert own[1, 1] == OCCUPIED  # -1 leaves the cell as it was
    assert np.array_equal(own, col)
    assert gain == 3


def test_bridge_without_peer_marks_occupied():
    own, _, _ = bridge([0, 49, 100, 100])
    assert own.tolist() == [[FREE, FREE], [OCCUPIED, OCCUPIED]]


@given(st.integers(-1, 100), st.integers(-1, 100))
def test_bridge_is_monotone_in_probability(p, q):
    lo, hi = min(p, q), max(p, q)
    order = {UNKNOWN: -1, FREE: 0, OCCUPIED: 1}
    a, _, _ = bridge([lo, lo, lo, lo])
    b, _, _ = bridge([hi, hi, hi, hi])
    if lo > -1:
        assert order[int(a[0, 0])] <= order[int(b[0, 0])]


# ------------------------------------------------------------- sensing


@pytest.mark.parametrize("seed", range(4))
def test_raycast_sense_is_reference_cast_inside_window(seed):
    g = np.random.default_rng(seed)
    occ = (g.random((16, 16)) < 0.15).astype(np.uint8)
    r, c = 8, 8
    occ[r, c] = 0
    m = GridMap(np.where(occ, OCCUPIED, FREE).astype(np.uint8), 0.5)
    x, y = cell_center(r, c, 0.5)
    got = raycast_sense(Pose(x, y, 0.0), m, 3.5, 1.0, 360)
    ref = reference_raycast(occ, x, y, 0.5, 3.5, n_rays=360)
    window = np.zeros_like(occ, dtype=bool)
    window[r - 2 : r + 3, c - 2 : c + 3] = True
    assert np.array_equal(got[window], ref[window])
    assert np.all(got[~window] == -1)


def test_raycast_sense_off_grid_sees_nothing():
    m = GridMap.filled(6, 0.5, FREE)
    assert np.all(raycast_sense(Pose(-1.0, -1.0), m, 3.5, 1.0) == -1)


# ------------------------------------------------------------- setups and runs


def test_default_arena_and_setups():
    arena = default_deploy_arena()
    assert arena.n == 50 and arena.cell_len == 0.5
    assert arena.is_connected()
    for s in SETUPS:
        poses = setup_poses(s, arena)
        assert [(p.x, p.y) for p in poses] == SETUPS[s]
    with pytest.raises(ValueError):
        setup_poses(5, arena)
    blocked = Arena(GridMap.filled(50, 0.5, OCCUPIED))
    with pytest.raises(ValueError):
        setup_poses(1, blocked)


def small_world(n=8, n_agents=2, seed=0):
    arena = Arena(GridMap.filled(n, 0.5, FREE))
    g = np.random.default_rng(seed)
    actors = [nn.init_params(g, n, 10) for _ in range(n_agents)]
    return arena, actors


def test_zero_rho_stops_before_first_step():
    arena, actors = small_world()
    env = EnvConfig(n=8, n_agents=2, reward=RewardConfig(study_case=1))
    poses = [Pose(*cell_center(1, 1, 0.5)), Pose(*cell_center(6, 6, 0.5))]
    res = run_deployment(actors, arena, poses, env, DeploymentConfig(rho=0.0))
    assert res.steps == 0 and res.terminal == "success" and res.trace == []


def test_barrier_orders_every_step():
    arena, actors = small_world(n_agents=3)
    env = EnvConfig(n=8, n_agents=3, reward=RewardConfig(study_case=1))
    poses = [Pose(*cell_center(1, 1, 0.5)), Pose(*cell_center(6, 6, 0.5)), Pose(*cell_center(1, 6, 0.5))]
    res = run_deployment(actors, arena, poses, env, DeploymentConfig(rho=1.01, step_cap=5))
    log = res.barrier_log
    for j in range(1, res.steps + 1):
        idx = [i for i, (_, step, _) in enumerate(log) if step == j]
        phases = [log[i][0] for i in idx]
        assert phases == ["act"] * 3 + ["done"] * 3
        if j > 1:
            prev_done = max(i for i, (ph, step, _) in enumerate(log) if step == j - 1)
            assert prev_done < min(idx)
    assert len(res.trace) == 3 * res.steps


def test_deployment_matches_grid_rollout_in_open_space():
    n = 8
    arena, actors = small_world(n)
    cells = [(1, 2), (6, 5)]
    env = EnvConfig(n=n, n_agents=2, step_cap=15, p_threshold=1.01, reward=RewardConfig(study_case=4))
    grid = run_eval_episode(actors, arena, cells, env, greedy=True, mask_invalid=True)
    poses = [Pose(*cell_center(r, c, 0.5)) for r, c in cells]
    res = run_deployment(actors, arena, poses, env, DeploymentConfig(rho=1.01, step_cap=15))
    assert res.steps == 15
    assert [list(map(tuple, p)) for p in grid.trace.positions] == [list(map(tuple, p)) for p in res.cells]
    assert [row[5] for row in res.trace if row[1] == 0] == [a[0] for a in grid.trace.actions]
    assert not any(row[9] for row in res.trace)


def test_deployment_is_deterministic():
    arena, actors = small_world()
    env = EnvConfig(n=8, n_agents=2, reward=RewardConfig(study_case=1))
    poses = [Pose(*cell_center(1, 1, 0.5)), Pose(*cell_center(6, 6, 0.5))]
    a = run_deployment(actors, arena, poses, env, DeploymentConfig(rho=1.01, step_cap=6))
    b = run_deployment(actors, arena, poses, env, DeploymentConfig(rho=1.01, step_cap=6))
    assert a.trace == b.trace and a.cells == b.cells


def test_actor_count_must_match_robots():
    arena, actors = small_world()
    env = EnvConfig(n=8, n_agents=2, reward=RewardConfig(study_case=1))
    with pytest.raises(ValueError):
        run_deployment(actors[:1], arena, [Pose(0.25, 0.25), Pose(1.25, 1.25)], env, DeploymentConfig())

import copy

import numpy as np
import pytest

from dmarl_explore import neuralnet as nn
from dmarl_explore.arena import EnvConfig, generate_arena, sample_initial_positions
from dmarl_explore.evaluation import (
    ReplayDivergence,
    dumps_record,
    env_config_dict,
    env_config_from_dict,
    load_record,
    render_pgm,
    replay,
    run_eval_episode,
)
from dmarl_explore.rewards import RewardConfig

N = 7


@pytest.fixture(scope="module")
def world():
    env = EnvConfig(n=N, n_agents=2, step_cap=25, p_threshold=0.95, reward=RewardConfig(study_case=4))
    g = np.random.default_rng(0)
    actors = [nn.init_params(g, N, 10) for _ in range(2)]
    arena = generate_arena(N, 0.5, 2, 2, seed=3, min_free=2)
    positions = sample_initial_positions(arena, 2, 3)
    ep = run_eval_episode(actors, arena, positions, env, greedy=False, seed=11)
    return env, actors, arena, positions, ep


def test_env_config_round_trip():
    env = EnvConfig(n=9, n_agents=3, step_cap=7, reward=RewardConfig(study_case=2, r_col=-5.0))
    assert env_config_from_dict(env_config_dict(env)) == env


def test_record_round_trips_through_json(world):
    *_, ep = world
    text = dumps_record(ep.record)
    assert load_record(text) == ep.record
    assert dumps_record(load_record(text)) == text


def test_replay_with_actors_reproduces_episode(world):
    env, actors, *_, ep = world
    states = []
    final = replay(load_record(dumps_record(ep.record)), actors, on_step=states.append)
    assert len(states) == len(ep.record["steps"]) + 1
    assert final.terminal.value == ep.trace.terminal


def test_replay_without_actors_feeds_recorded_actions(world):
    *_, ep = world
    replay(ep.record)


def test_corrupted_action_diverges_at_that_step(world):
    *_, ep = world
    rec = copy.deepcopy(ep.record)
    k = min(3, len(rec["steps"]) - 1)
    a = rec["steps"][k]["actions"]
    a[0] = 8 if a[0] != 8 else 0
    with pytest.raises(ReplayDivergence) as err:
        replay(rec, world[1])
    assert err.value.step == rec["steps"][k]["t"]
    assert err.value.field == "actions"


def test_corrupted_digest_is_detected(world):
    *_, ep = world
    rec = copy.deepcopy(ep.record)
    rec["steps"][0]["digest"] = "0" * 16
    with pytest.raises(ReplayDivergence) as err:
        replay(rec)
    assert err.value.field == "digest" and err.value.step == 1


def test_truncated_record_is_detected(world):
    *_, ep = world
    rec = copy.deepcopy(ep.record)
    if len(rec["steps"]) < 2:
        pytest.skip("episode too short to truncate")
    rec["steps"] = rec["steps"][:-1]
    with pytest.raises(ReplayDivergence):
        replay(rec)


def test_load_record_rejects_other_documents():
    with pytest.raises(ValueError):
        load_record('{"format": "other"}')
    with pytest.raises(ValueError):
        load_record('{"format": "dmarl-trace", "version": 99}')


def test_eval_episode_is_deterministic(world):
    env, actors, arena, positions, ep = world
    again = run_eval_episode(actors, arena, positions, env, greedy=False, seed=11)
    assert dumps_record(again.record) == dumps_record(ep.record)


def test_trace_coverage_has_one_entry_per_step(world):
    *_, ep = world
    assert len(ep.trace.coverage) == len(ep.record["steps"]) + 1
    assert len(ep.trace.positions) == len(ep.trace.coverage)


def test_render_pgm():
    cells = np.array([[0, 1, 2], [2, 1, 0]], dtype=np.uint8)
    data = render_pgm(cells, [(1, 2)])
    header = b"P5\n3 2\n255\n"
    assert data.startswith(header)
    assert list(data[len(header):]) == [255, 0, 128, 128, 0, 64]

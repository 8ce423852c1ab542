"""Greedy evaluation episodes, JSON episode traces, and trace replay."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import neuralnet as nn
from .arena import Arena, EnvConfig, Terminal, action_mask, coverage, reset, step
from .core import ExplorationError
from .maps import encode_observation
from .metrics import EpisodeTrace, MetricsReport, report
from .rewards import RewardConfig

TRACE_FORMAT = "dmarl-trace"
TRACE_VERSION = 1


class ReplayDivergence(ExplorationError):
    def __init__(self, step: int, field: str, expected, actual):
        super().__init__(f"replay diverged at step {step} in '{field}': recorded {expected!r}, got {actual!r}")
        self.step = step
        self.field = field


def env_config_dict(cfg: EnvConfig) -> dict:
    return asdict(cfg)


def env_config_from_dict(d: dict) -> EnvConfig:
    d = dict(d)
    d["reward"] = RewardConfig(**d.get("reward", {}))
    return EnvConfig(**d)


def state_digest(state) -> str:
    h = hashlib.sha256()
    h.update(np.int64(state.t).tobytes())
    for a in state.agents:
        h.update(np.asarray(a.position, dtype=np.int64).tobytes())
        h.update(a.maps.agent_specific.cells.tobytes())
        h.update(a.maps.collaborative.cells.tobytes())
        h.update(np.ascontiguousarray(a.maps.transmission, dtype=np.int8).tobytes())
    return h.hexdigest()[:16]


def choose_actions(actors, state, rng, greedy: bool, mask_invalid: bool) -> list:
    acts = []
    for k, agent in enumerate(state.agents):
        mask = action_mask(agent) if mask_invalid else None
        out = nn.policy(actors[k], encode_observation(agent), mask)
        a, _ = nn.sample_action(out, rng, greedy=greedy)
        acts.append(int(a))
    return acts


@dataclass
class EvalEpisode:
    trace: EpisodeTrace
    record: dict
    report: MetricsReport


def _step_record(state, ev, actions) -> dict:
    return dict(
        t=state.t,
        actions=[int(a) for a in actions],
        positions=[list(map(int, p)) for p in state.positions],
        gains=[int(g) for g in ev.gains],
        comm_gains=[int(g) for g in ev.comm_gains],
        terminal=state.terminal.value,
        digest=state_digest(state),
    )


def run_eval_episode(actors, arena: Arena, positions, env_cfg: EnvConfig, greedy: bool = True,
                     mask_invalid: bool = True, seed: int = 0, policy_info: dict | None = None) -> EvalEpisode:
    """Roll one episode with fixed actors; returns the metrics trace and a replayable record."""
    rng = np.random.default_rng(seed)
    state = reset(arena, positions, env_cfg)
    cov = [coverage(state)]
    steps, comm_events, joint_actions, joint_pos = [], [], [], [list(state.positions)]
    while state.terminal == Terminal.NONE:
        acts = choose_actions(actors, state, rng, greedy, mask_invalid)
        state, ev = step(state, acts, env_cfg)
        cov.append(coverage(state))
        for net in ev.networks:
            if len(net) >= 2:
                comm_events.append((state.t, list(net.members), [ev.comm_gains[m] for m in net.members]))
        joint_actions.append(acts)
        joint_pos.append(list(state.positions))
        steps.append(_step_record(state, ev, acts))
    trace = EpisodeTrace(
        coverage=cov,
        comm_events=comm_events,
        agent_specific=[a.maps.agent_specific.cells.copy() for a in state.agents],
        terminal=state.terminal.value,
        actions=joint_actions,
        positions=joint_pos,
    )
    policy = dict(greedy=greedy, mask_invalid=mask_invalid, seed=seed)
    if policy_info:
        policy.update(policy_info)
    record = dict(
        format=TRACE_FORMAT,
        version=TRACE_VERSION,
        env=env_config_dict(env_cfg),
        arena=arena.to_text(),
        positions=[list(map(int, p)) for p in positions],
        policy=policy,
        steps=steps,
    )
    return EvalEpisode(trace, record, report(trace, env_cfg.p_threshold))


def dumps_record(record: dict) -> str:
    return json.dumps(record, indent=1, sort_keys=True) + "\n"


def load_record(text: str) -> dict:
    rec = json.loads(text)
    if rec.get("format") != TRACE_FORMAT:
        raise ValueError("not an episode trace")
    if rec.get("version") != TRACE_VERSION:
        raise ValueError(f"unsupported trace version {rec.get('version')}")
    return rec


def replay(record: dict, actors=None, on_step=None):
    """Re-simulate a recorded episode and check it step by step.

    With ``actors`` the actions are recomputed from the policy and compared with
    the recorded ones; without them the recorded actions are fed back. Raises
    ``ReplayDivergence`` at the first mismatch. Returns the final state.
    """
    env_cfg = env_config_from_dict(record["env"])
    arena = Arena.from_text(record["arena"])
    state = reset(arena, [tuple(p) for p in record["positions"]], env_cfg)
    if on_step is not None:
        on_step(state)
    pol = record.get("policy", {})
    rng = np.random.default_rng(pol.get("seed", 0))
    for rec in record["steps"]:
        t = rec["t"]
        if state.terminal != Terminal.NONE:
            raise ReplayDivergence(t, "terminal", "running", state.terminal.value)
        if actors is not None:
            acts = choose_actions(actors, state, rng, pol.get("greedy", True), pol.get("mask_invalid", True))
            if acts != rec["actions"]:
                raise ReplayDivergence(t, "actions", rec["actions"], acts)
        else:
            acts = rec["actions"]
        state, ev = step(state, acts, env_cfg)
        got = _step_record(state, ev, acts)
        for key in ("positions", "gains", "comm_gains", "terminal", "digest"):
            if got[key] != rec[key]:
                raise ReplayDivergence(t, key, rec[key], got[key])
        if on_step is not None:
            on_step(state)
    if state.terminal == Terminal.NONE and record["steps"]:
        raise ReplayDivergence(record["steps"][-1]["t"], "terminal", record["steps"][-1]["terminal"], "none")
    return state


def render_pgm(cells: np.ndarray, positions=()) -> bytes:
    """Binary PGM (P5), one pixel per cell: free white, occupied black, unknown grey, agents mid-dark."""
    lut = np.array([255, 0, 128], dtype=np.uint8)
    img = lut[np.asarray(cells, dtype=np.intp)]
    for r, c in positions:
        img[r, c] = 64
    n_rows, n_cols = img.shape
    return f"P5\n{n_cols} {n_rows}\n255\n".encode("ascii") + img.tobytes()

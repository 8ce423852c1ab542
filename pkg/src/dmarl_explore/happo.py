"""Sequential per-agent clipped policy updates with a shared critic.

One iteration: collect episodes under the joint policy, estimate advantages
with GAE on the shared critic, draw a random agent order, update each actor
against the running advantage multiplier, then regress the critic.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from . import neuralnet as nn
from .arena import (
    EnvConfig,
    Terminal,
    action_mask,
    generate_arena,
    reset,
    sample_initial_positions,
    state_tensor,
    step,
)
from .core import N_ACTIONS, ExplorationError
from .maps import encode_observation

log = logging.getLogger(__name__)


class NonFiniteLoss(ExplorationError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    n_agents: int = 4
    n_e: int = 10000
    n_s: int = 200
    n_b: int = 1
    clip_eps: float = 0.2
    epochs: int = 5
    lr: float = 5e-4
    critic_lr: float = 5e-4
    gamma: float = 0.99
    lam: float = 0.95
    adv_norm: bool = True
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.0
    mask_invalid: bool = False
    checkpoint_every: int = 0
    critic_target: str = "gae"  # "gae": A + V, "returns": discounted rewards-to-go
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must be in (0, 1)")
        if not (0.0 < self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ValueError("gamma must be in (0, 1] and lam in [0, 1]")
        if self.n_e < 0 or self.n_s < 1 or self.n_b < 1 or self.epochs < 0:
            raise ValueError("n_e >= 0, n_s >= 1, n_b >= 1 and epochs >= 0 required")
        if self.critic_target not in ("gae", "returns"):
            raise ValueError("critic_target must be 'gae' or 'returns'")


@dataclass
class Episode:
    critic_inputs: np.ndarray  # T, 3, n, n
    values: np.ndarray  # T + 1, last entry is the bootstrap value (0 at termination)
    obs: np.ndarray  # N, T, 3, n, n
    actions: np.ndarray  # N, T
    log_probs: np.ndarray  # N, T
    masks: np.ndarray | None  # N, T, 10
    agent_rewards: np.ndarray  # N, T
    rewards: np.ndarray  # T (team reward)
    dones: np.ndarray  # T
    terminal: Terminal
    initial_positions: list
    arena_text: str

    @property
    def length(self) -> int:
        return len(self.rewards)


@dataclass
class TrajectoryBatch:
    episodes: list
    advantages: np.ndarray = None
    returns: np.ndarray = None
    multiplier: np.ndarray = None

    def cat(self, attr, axis=0):
        return np.concatenate([getattr(e, attr) for e in self.episodes], axis=axis)

    @property
    def size(self) -> int:
        return sum(e.length for e in self.episodes)


class ArenaSampler:
    """Fresh random arena plus uniform initial positions per episode."""

    def __init__(self, env_cfg: EnvConfig, obstacle_count: int, max_obstacle_side: int):
        self.env_cfg = env_cfg
        self.obstacle_count = obstacle_count
        self.max_obstacle_side = max_obstacle_side

    def __call__(self, rng):
        seed = int(rng.integers(0, 2**63 - 1))
        arena = generate_arena(
            self.env_cfg.n,
            self.env_cfg.cell_len,
            self.obstacle_count,
            self.max_obstacle_side,
            seed,
            min_free=self.env_cfg.n_agents,
        )
        return arena, sample_initial_positions(arena, self.env_cfg.n_agents, rng)


def team_reward(agent_rewards) -> float:
    return float(np.mean(agent_rewards))


def run_episode(arena, positions, actors, critic, env_cfg: EnvConfig, rng, mask_invalid: bool) -> Episode:
    state = reset(arena, positions, env_cfg)
    crit_in, vals, obs, acts, logps, masks, arew, rews, dones = [], [], [], [], [], [], [], [], []
    while True:
        s = state_tensor(state, env_cfg.step_cap)
        crit_in.append(s)
        vals.append(nn.value(critic, s))
        o_t, a_t, lp_t, m_t = [], [], [], []
        for k, agent in enumerate(state.agents):
            o = encode_observation(agent)
            m = action_mask(agent) if mask_invalid else None
            out = nn.policy(actors[k], o, m)
            a, lp = nn.sample_action(out, rng)
            o_t.append(o)
            a_t.append(a)
            lp_t.append(lp)
            m_t.append(m if m is not None else np.ones(N_ACTIONS, dtype=bool))
        state, ev = step(state, a_t, env_cfg)
        obs.append(o_t)
        acts.append(a_t)
        logps.append(lp_t)
        masks.append(m_t)
        arew.append(ev.rewards)
        rews.append(team_reward(ev.rewards))
        done = state.terminal != Terminal.NONE
        dones.append(1.0 if done else 0.0)
        if done:
            break
    vals.append(0.0)
    return Episode(
        critic_inputs=np.stack(crit_in),
        values=np.asarray(vals),
        obs=np.stack(obs, axis=1),
        actions=np.asarray(acts, dtype=np.int64).T,
        log_probs=np.asarray(logps).T,
        masks=np.stack(masks, axis=1) if mask_invalid else None,
        agent_rewards=np.asarray(arew).T,
        rewards=np.asarray(rews),
        dones=np.asarray(dones),
        terminal=state.terminal,
        initial_positions=list(positions),
        arena_text=arena.to_text(),
    )


def collect_trajectories(env_factory, actors, critic, env_cfg: EnvConfig, cfg: TrainConfig, env_rng, act_rng):
    """Run ``cfg.n_b`` episodes under the stochastic joint policy."""
    episodes = []
    for _ in range(cfg.n_b):
        arena, positions = env_factory(env_rng)
        episodes.append(run_episode(arena, positions, actors, critic, env_cfg, act_rng, cfg.mask_invalid))
    return TrajectoryBatch(episodes)


def compute_gae(values, rewards, dones, gamma: float, lam: float):
    """GAE over one sequence. ``values`` has T + 1 entries (the last is V(s_T))."""
    values = np.asarray(values, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    if values.shape[0] != rewards.shape[0] + 1:
        raise ValueError("values must have one more entry than rewards")
    return kernels.gae(rewards, values[:-1], values[1:], dones, gamma, lam)


def discounted_returns(rewards, dones, gamma: float, bootstrap: float = 0.0) -> np.ndarray:
    out = np.empty(len(rewards), dtype=np.float64)
    acc = bootstrap
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc * (1.0 - float(dones[t]))
        out[t] = acc
    return out


def compute_batch_advantages(batch: TrajectoryBatch, cfg: TrainConfig):
    advs, rets = [], []
    for ep in batch.episodes:
        a, r = compute_gae(ep.values, ep.rewards, ep.dones, cfg.gamma, cfg.lam)
        if cfg.critic_target == "returns":
            r = discounted_returns(ep.rewards, ep.dones, cfg.gamma, float(ep.values[-1]))
        advs.append(a)
        rets.append(r)
    batch.advantages = np.concatenate(advs)
    batch.returns = np.concatenate(rets)
    return batch


def agent_permutation(n_agents: int, rng) -> list:
    return [int(i) for i in rng.permutation(n_agents)]


def batched_log_probs(params, obs, actions, masks=None) -> np.ndarray:
    out = nn.policy(params, obs, masks)
    return out.log_probs[np.arange(len(actions)), actions]


def surrogate_objective(logp, old_logp, multiplier, clip_eps):
    """Mean clipped surrogate and the per-sample ratios."""
    ratio = np.exp(logp - old_logp)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    terms = np.minimum(ratio * multiplier, clipped * multiplier)
    return float(terms.mean()), ratio


def surrogate_grad(params, obs, actions, old_logp, multiplier, clip_eps, masks=None, entropy_coef=0.0):
    """Loss -(surrogate + entropy_coef * mean entropy) and its gradients."""
    logits, cache = nn.forward(params, obs)
    B = logits.shape[0]
    logp_all = nn.masked_log_softmax(logits, masks)
    probs = np.exp(logp_all)
    if masks is not None:
        probs = np.where(masks, probs, 0.0)
    idx = np.arange(B)
    logp = logp_all[idx, actions]
    surr, ratio = surrogate_objective(logp, old_logp, multiplier, clip_eps)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    active = (ratio * multiplier) <= (clipped * multiplier)
    weight = active * multiplier * ratio / B
    dlogits = probs * weight[:, None]
    dlogits[idx, actions] -= weight
    loss = -surr
    entropy = 0.0
    if entropy_coef:
        plogp = np.where(probs > 0, probs * logp_all, 0.0)
        ent = -plogp.sum(axis=1)
        entropy = float(ent.mean())
        loss -= entropy_coef * entropy
        # dH/dz_i = -p_i (log p_i + H)
        safe_logp = np.where(probs > 0, logp_all, 0.0)
        dH = -probs * (safe_logp + ent[:, None])
        dlogits -= entropy_coef * dH / B
    grads = nn.backward(params, obs, dlogits, cache)
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > clip_eps))
    return loss, grads, dict(surrogate=surr, entropy=entropy, clip_frac=clip_frac, ratio=ratio)


@dataclass
class UpdateStats:
    order: list
    surrogate_first: dict = field(default_factory=dict)
    surrogate_last: dict = field(default_factory=dict)
    clip_frac: dict = field(default_factory=dict)
    critic_loss_first: float = float("nan")
    critic_loss_last: float = float("nan")
    # multiplier after each agent's update, keyed by position in the order
    multipliers: list = field(default_factory=list)
    old_log_probs: dict = field(default_factory=dict)
    initial_ratios: dict = field(default_factory=dict)


def happo_update(actors, critic, batch: TrajectoryBatch, cfg: TrainConfig, rng, actor_opts, critic_opt):
    """Sequential actor updates in a random order, then critic regression.

    Returns (actors, critic, stats); ``actor_opts``/``critic_opt`` are Adam states mutated in place.
    """
    N = len(actors)
    adv = batch.advantages.astype(np.float64)
    if cfg.adv_norm and adv.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    order = agent_permutation(N, rng)
    stats = UpdateStats(order=order)
    M = adv.copy()
    actors = list(actors)
    all_obs = batch.cat("obs", axis=1)
    all_actions = batch.cat("actions", axis=1)
    all_masks = batch.cat("masks", axis=1) if batch.episodes[0].masks is not None else None
    for k in order:
        obs = all_obs[k]
        actions = all_actions[k]
        masks = all_masks[k] if all_masks is not None else None
        params = actors[k]
        old_logp = batched_log_probs(params, obs, actions, masks)
        stats.old_log_probs[k] = old_logp
        for epoch in range(cfg.epochs):
            loss, grads, info = surrogate_grad(
                params, obs, actions, old_logp, M, cfg.clip_eps, masks, cfg.entropy_coef
            )
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"agent {k} epoch {epoch}: surrogate loss {loss}")
            if epoch == 0:
                stats.surrogate_first[k] = info["surrogate"]
                stats.initial_ratios[k] = info["ratio"]
            stats.surrogate_last[k] = info["surrogate"]
            stats.clip_frac[k] = info["clip_frac"]
            grads = nn.clip_grads(grads, cfg.max_grad_norm)
            params = nn.adam_step(params, grads, cfg.lr, actor_opts[k])
        actors[k] = params
        new_logp = batched_log_probs(params, obs, actions, masks)
        M = np.exp(new_logp - old_logp) * M
        stats.multipliers.append(M.copy())
    states = batch.cat("critic_inputs")
    targets = batch.returns
    for epoch in range(cfg.epochs):
        loss, grads = nn.mse_grad(critic, states, targets)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"critic epoch {epoch}: loss {loss}")
        if epoch == 0:
            stats.critic_loss_first = loss
        grads = nn.clip_grads(grads, cfg.max_grad_norm)
        critic = nn.adam_step(critic, grads, cfg.critic_lr, critic_opt)
    if cfg.epochs:
        stats.critic_loss_last = float(np.mean((nn.value(critic, states) - targets) ** 2))
    return actors, critic, stats


def curve_columns(n_agents: int) -> list:
    cols = ["iteration", "mean_episode_reward", "mean_episode_length", "critic_loss_first", "critic_loss_last"]
    for k in range(n_agents):
        cols += [f"actor{k}_surrogate_first", f"actor{k}_surrogate_last", f"actor{k}_clip_frac"]
    return cols


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def curve_row(iteration, batch: TrajectoryBatch, stats: UpdateStats, n_agents: int) -> list:
    ep_rewards = [float(e.rewards.sum()) for e in batch.episodes]
    ep_lens = [e.length for e in batch.episodes]
    row = [iteration, float(np.mean(ep_rewards)), float(np.mean(ep_lens)), stats.critic_loss_first, stats.critic_loss_last]
    for k in range(n_agents):
        row += [
            stats.surrogate_first.get(k, float("nan")),
            stats.surrogate_last.get(k, float("nan")),
            stats.clip_frac.get(k, float("nan")),
        ]
    return [_fmt(x) for x in row]


def write_npz(path, arrays: dict) -> None:
    """Like ``np.savez`` but with fixed zip timestamps so equal inputs give equal bytes."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


@dataclass
class Trainer:
    """Training state: networks, optimizers, RNG streams and the learning curve so far."""

    env_cfg: EnvConfig
    cfg: TrainConfig
    actors: list
    critic: dict
    actor_opts: list
    critic_opt: nn.AdamState
    env_rng: np.random.Generator
    act_rng: np.random.Generator
    update_rng: np.random.Generator
    iteration: int = 0
    curve: list = field(default_factory=list)

    @classmethod
    def fresh(cls, env_cfg: EnvConfig, cfg: TrainConfig) -> "Trainer":
        if cfg.n_agents != env_cfg.n_agents:
            raise ValueError("TrainConfig.n_agents must match EnvConfig.n_agents")
        init_ss, env_ss, act_ss, upd_ss = np.random.SeedSequence(cfg.seed).spawn(4)
        init_rng = np.random.default_rng(init_ss)
        actors = [nn.init_params(init_rng, env_cfg.n, N_ACTIONS) for _ in range(cfg.n_agents)]
        critic = nn.init_params(init_rng, env_cfg.n, 1)
        return cls(
            env_cfg,
            cfg,
            actors,
            critic,
            [nn.AdamState.zeros_like(a) for a in actors],
            nn.AdamState.zeros_like(critic),
            np.random.default_rng(env_ss),
            np.random.default_rng(act_ss),
            np.random.default_rng(upd_ss),
        )

    def run_iteration(self, env_factory):
        batch = collect_trajectories(
            env_factory, self.actors, self.critic, self.env_cfg, self.cfg, self.env_rng, self.act_rng
        )
        compute_batch_advantages(batch, self.cfg)
        self.actors, self.critic, stats = happo_update(
            self.actors, self.critic, batch, self.cfg, self.update_rng, self.actor_opts, self.critic_opt
        )
        self.iteration += 1
        self.curve.append(curve_row(self.iteration, batch, stats, self.cfg.n_agents))
        return batch, stats

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(curve_columns(self.cfg.n_agents))
        w.writerows(self.curve)
        return buf.getvalue()

    def write_checkpoints(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        for k, a in enumerate(self.actors):
            nn.save_checkpoint(os.path.join(directory, f"actor_{k}.dmrl"), a)
        nn.save_checkpoint(os.path.join(directory, "critic.dmrl"), self.critic)

    def save_state(self, path) -> None:
        """Full-precision resume state (float64 params, Adam moments, RNG states, curve)."""
        arrays = {}
        nets = [("actor%d" % k, a, o) for k, (a, o) in enumerate(zip(self.actors, self.actor_opts))]
        nets.append(("critic", self.critic, self.critic_opt))
        adam_t = {}
        for tag, params, opt in nets:
            for name, arr in params.items():
                arrays[f"{tag}/p/{name}"] = arr
                arrays[f"{tag}/m/{name}"] = opt.m[name]
                arrays[f"{tag}/v/{name}"] = opt.v[name]
            adam_t[tag] = opt.t
        meta = dict(
            iteration=self.iteration,
            adam_t=adam_t,
            rng=[self.env_rng.bit_generator.state, self.act_rng.bit_generator.state, self.update_rng.bit_generator.state],
            curve=self.curve,
            train_config=asdict(self.cfg),
        )
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
        write_npz(path, arrays)

    @classmethod
    def load_state(cls, path, env_cfg: EnvConfig, cfg: TrainConfig) -> "Trainer":
        tr = cls.fresh(env_cfg, cfg)
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode("utf-8"))
            tags = ["actor%d" % k for k in range(cfg.n_agents)] + ["critic"]
            nets = []
            for tag in tags:
                p = {n: data[f"{tag}/p/{n}"].copy() for n in nn.PARAM_ORDER}
                opt = nn.AdamState(
                    {n: data[f"{tag}/m/{n}"].copy() for n in nn.PARAM_ORDER},
                    {n: data[f"{tag}/v/{n}"].copy() for n in nn.PARAM_ORDER},
                    meta["adam_t"][tag],
                )
                nets.append((p, opt))
        tr.actors = [p for p, _ in nets[:-1]]
        tr.actor_opts = [o for _, o in nets[:-1]]
        tr.critic, tr.critic_opt = nets[-1]
        for rng, st in zip((tr.env_rng, tr.act_rng, tr.update_rng), meta["rng"]):
            rng.bit_generator.state = st
        tr.iteration = meta["iteration"]
        tr.curve = [list(r) for r in meta["curve"]]
        return tr


def train(cfg: TrainConfig, env_cfg: EnvConfig, env_factory, out_dir=None, trainer: Trainer | None = None,
          progress=None) -> Trainer:
    """Run iterations until ``cfg.n_e`` is reached; writes curve, checkpoints and resume state to ``out_dir``.

    On an exception the current networks are written to ``out_dir/abort`` before re-raising.
    """
    tr = trainer if trainer is not None else Trainer.fresh(env_cfg, cfg)

    def flush():
        if out_dir is None:
            return
        with open(os.path.join(out_dir, "curve.csv"), "w", newline="") as fh:
            fh.write(tr.curve_csv())

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    try:
        while tr.iteration < cfg.n_e:
            tr.run_iteration(env_factory)
            if progress is not None:
                progress(tr)
            if out_dir is not None and cfg.checkpoint_every and tr.iteration % cfg.checkpoint_every == 0:
                tr.write_checkpoints(os.path.join(out_dir, "checkpoints", f"iter_{tr.iteration:06d}"))
                tr.save_state(os.path.join(out_dir, "resume.npz"))
                flush()
    except BaseException:
        if out_dir is not None:
            log.error("training aborted at iteration %d; writing abort checkpoint", tr.iteration)
            tr.write_checkpoints(os.path.join(out_dir, "abort"))
            tr.save_state(os.path.join(out_dir, "resume.npz"))
            flush()
        raise
    if out_dir is not None:
        tr.write_checkpoints(os.path.join(out_dir, "final"))
        tr.save_state(os.path.join(out_dir, "resume.npz"))
        flush()
    return tr

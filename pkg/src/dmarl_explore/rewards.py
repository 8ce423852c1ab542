"""Reward and penalty terms and the four study-case compositions."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .core import Action

STUDY_CASES = (1, 2, 3, 4)


@dataclass(frozen=True)
class RewardConfig:
    study_case: int = 4
    r_rep: float = -1.0
    r_bou: float = -1.0
    r_col: float = -10.0
    r_ndi: float = 0.2
    r_exp: float = 0.3
    r_d: float = 1.0
    cell_len: float = 0.5

    def __post_init__(self):
        if self.study_case not in STUDY_CASES:
            raise ValueError(f"study_case must be one of {STUDY_CASES}, got {self.study_case}")
        if not (self.r_d > 0 and self.cell_len > 0):
            raise ValueError("r_d and cell_len must be positive")

    @property
    def e_max(self) -> float:
        """Largest one-step knowledge gain, 4 r_d / l + 1."""
        return 4.0 * self.r_d / self.cell_len + 1.0


@dataclass
class RewardContext:
    action: int
    collided: bool = False
    gain: int = 0
    comm_gain: int = 0
    comm_indicator: int = 0
    n_unknown: int = 1
    prev_step_gain: int = 0
    # one (w_j, q_j, d_kj) triple per peer
    peers: list = field(default_factory=list)
    n_agents: int = 1
    n: int = 50
    position_unchanged: bool = False
    near_boundary: bool = False


def exploration_reward(ctx: RewardContext, cfg: RewardConfig) -> float:
    return ctx.gain / cfg.e_max


def communication_reward(ctx: RewardContext, cfg: RewardConfig) -> float:
    if not ctx.comm_indicator:
        return 0.0
    if cfg.study_case == 4:
        return ctx.comm_gain / cfg.e_max
    if ctx.n_unknown <= 0:
        return 0.0
    return ctx.comm_gain / ctx.n_unknown


def p_coefficient(ctx: RewardContext, cfg: RewardConfig) -> float:
    if cfg.study_case in (1, 2):
        return 1.0
    if cfg.study_case == 3:
        return ctx.prev_step_gain / cfg.e_max + 0.6
    if ctx.n_agents < 2:
        return 0.8
    total = sum(w * q * d for w, q, d in ctx.peers) / float(ctx.n * ctx.n)
    return total / (ctx.n_agents - 1) + 0.8


def reward_terms(ctx: RewardContext, cfg: RewardConfig) -> dict:
    """All terms and the total; terms absent from the study case are reported as 0."""
    case = cfg.study_case
    if ctx.collided:
        return dict(r_exp=0.0, r_com=0.0, p_k=0.0, r_rep=0.0, r_bou=0.0, r_ndi=0.0, total=cfg.r_col)
    r_exp = exploration_reward(ctx, cfg)
    r_com = communication_reward(ctx, cfg) if case >= 2 else 0.0
    p_k = p_coefficient(ctx, cfg)
    r_rep = cfg.r_rep if (ctx.position_unchanged and ctx.action != Action.COMM) else 0.0
    if case == 4:
        r_bou = 0.0
        r_ndi = 0.0
    else:
        r_bou = cfg.r_bou if ctx.near_boundary else 0.0
        r_ndi = -cfg.r_ndi if r_exp < cfg.r_exp else 0.0
    if case == 1:
        total = r_exp + r_rep + r_bou + r_ndi
    elif case == 2:
        total = r_exp + r_com + r_rep + r_bou + r_ndi
    elif case == 3:
        total = r_exp + p_k * r_com + r_rep + r_bou + r_ndi
    else:
        total = r_exp + p_k * r_com + r_rep
    return dict(r_exp=r_exp, r_com=r_com, p_k=p_k, r_rep=r_rep, r_bou=r_bou, r_ndi=r_ndi, total=total)


def step_reward(ctx: RewardContext, cfg: RewardConfig) -> float:
    return reward_terms(ctx, cfg)["total"]


TRACE_COLUMNS = ["step", "agent", "case", "r_exp", "r_com", "p_k", "r_rep", "r_bou", "r_ndi", "total"]


def reward_trace_csv(rows) -> str:
    """rows: iterable of (step, agent, case, terms-dict)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for step, agent, case, terms in rows:
        w.writerow([step, agent, case] + [repr(float(terms[k])) for k in TRACE_COLUMNS[3:]])
    return buf.getvalue()

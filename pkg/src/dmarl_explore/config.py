"""Run configuration: an INI document with one section per concern.

Every field has a shipped default; a config file only needs the keys it
changes. ``to_ini`` writes the fully resolved document, which is what each run
stores as its frozen manifest.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields, replace

from .arena import EnvConfig
from .core import ExplorationError
from .deploy import ControllerGains, DeploymentConfig
from .happo import TrainConfig
from .rewards import RewardConfig


class ConfigError(ExplorationError):
    pass


@dataclass(frozen=True)
class EnvironmentSection:
    n: int = 50
    cell_len: float = 0.5
    r_d: float = 1.0
    r_c: float = 5.0
    n_agents: int = 4
    p_threshold: float = 0.9
    collision_terminates: bool = True
    obstacle_count: int = 8
    max_obstacle_side: int = 8


@dataclass(frozen=True)
class RewardSection:
    study_case: int = 4
    r_rep: float = -1.0
    r_bou: float = -1.0
    r_col: float = -10.0
    r_ndi: float = 0.2
    r_exp: float = 0.3


@dataclass(frozen=True)
class TrainingSection:
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
    checkpoint_every: int = 500
    critic_target: str = "gae"


@dataclass(frozen=True)
class EvaluationSection:
    arenas: int = 100
    arena_seed: int = 1000
    step_cap: int = 1000
    mask_invalid: bool = True
    greedy: bool = True


@dataclass(frozen=True)
class DeploySection:
    setup: int = 1
    dt: float = 0.05
    nav_budget: float = 30.0
    sensor_range: float = 3.5
    n_rays: int = 360
    rho: float = 0.9
    step_cap: int = 1000
    mask_invalid: bool = True
    zeta: float = 0.01
    gamma: float = 0.1
    k_v: float = 1.0
    k_w: float = 0.4


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out: str = "runs/default"


@dataclass(frozen=True)
class RunConfig:
    environment: EnvironmentSection = field(default_factory=EnvironmentSection)
    reward: RewardSection = field(default_factory=RewardSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    deploy: DeploySection = field(default_factory=DeploySection)
    run: RunSection = field(default_factory=RunSection)

    # --- views used by the commands ---

    def reward_config(self) -> RewardConfig:
        r, e = self.reward, self.environment
        return RewardConfig(r.study_case, r.r_rep, r.r_bou, r.r_col, r.r_ndi, r.r_exp, e.r_d, e.cell_len)

    def env_config(self, step_cap: int | None = None) -> EnvConfig:
        e = self.environment
        return EnvConfig(
            n=e.n,
            cell_len=e.cell_len,
            r_d=e.r_d,
            r_c=e.r_c,
            n_agents=e.n_agents,
            step_cap=self.training.n_s if step_cap is None else step_cap,
            p_threshold=e.p_threshold,
            collision_terminates=e.collision_terminates,
            reward=self.reward_config(),
        )

    def train_config(self) -> TrainConfig:
        t = self.training
        return TrainConfig(n_agents=self.environment.n_agents, seed=self.run.seed, **dataclasses.asdict(t))

    def deployment_config(self) -> DeploymentConfig:
        d = self.deploy
        return DeploymentConfig(
            dt=d.dt,
            nav_budget=d.nav_budget,
            sensor_range=d.sensor_range,
            n_rays=d.n_rays,
            rho=d.rho,
            step_cap=d.step_cap,
            mask_invalid=d.mask_invalid,
            seed=self.run.seed,
            gains=ControllerGains(d.zeta, d.gamma, d.k_v, d.k_w),
        )


_SECTIONS = [f.name for f in fields(RunConfig)]
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse(kind, raw: str, where: str):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {kind.__name__}") from None


def _kind(section_cls, name: str):
    default = next(f for f in fields(section_cls) if f.name == name).default
    return type(default)


def validate(cfg: RunConfig) -> RunConfig:
    """Build every derived config once so invalid combinations fail early."""
    e, d = cfg.environment, cfg.deploy
    if cfg.reward.study_case not in (1, 2, 3, 4):
        raise ConfigError("reward.study_case must be 1..4")
    if e.obstacle_count < 0 or e.max_obstacle_side < 1:
        raise ConfigError("environment.obstacle_count >= 0 and max_obstacle_side >= 1 required")
    if cfg.evaluation.arenas < 0 or cfg.evaluation.step_cap < 1:
        raise ConfigError("evaluation.arenas >= 0 and evaluation.step_cap >= 1 required")
    if d.setup not in (1, 2, 3, 4):
        raise ConfigError("deploy.setup must be 1..4")
    if d.step_cap < 0 or not 0.0 <= d.rho <= 1.0:
        raise ConfigError("deploy.step_cap >= 0 and 0 <= deploy.rho <= 1 required")
    try:
        cfg.env_config()
        cfg.train_config()
        cfg.deployment_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def from_ini(text: str, base: RunConfig | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = base or RunConfig()
    for sec in parser.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        current = getattr(cfg, sec)
        known = {f.name for f in fields(current)}
        updates = {}
        for key, raw in parser.items(sec):
            if key not in known:
                raise ConfigError(f"unknown key '{key}' in [{sec}]")
            updates[key] = _parse(_kind(type(current), key), raw, f"[{sec}] {key}")
        cfg = replace(cfg, **{sec: replace(current, **updates)})
    return validate(cfg)


def load(path: str | None = None) -> RunConfig:
    if path is None:
        return validate(RunConfig())
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return from_ini(text)


def override(cfg: RunConfig, section: str, **values) -> RunConfig:
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    return validate(replace(cfg, **{section: replace(getattr(cfg, section), **values)}))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_ini(cfg: RunConfig) -> str:
    buf = io.StringIO()
    for i, sec in enumerate(_SECTIONS):
        if i:
            buf.write("\n")
        buf.write(f"[{sec}]\n")
        for f in fields(getattr(cfg, sec)):
            buf.write(f"{f.name} = {_fmt(getattr(getattr(cfg, sec), f.name))}\n")
    return buf.getvalue()


def differences(cfg: RunConfig) -> list:
    """(section, key, value, default) for every value that departs from the shipped defaults."""
    out = []
    base = RunConfig()
    for sec in _SECTIONS:
        for f in fields(getattr(cfg, sec)):
            v, d = getattr(getattr(cfg, sec), f.name), getattr(getattr(base, sec), f.name)
            if v != d:
                out.append((sec, f.name, v, d))
    return out

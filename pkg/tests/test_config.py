import pytest
from hypothesis import given
from hypothesis import strategies as st

from dmarl_explore.config import ConfigError, RunConfig, differences, from_ini, load, override, to_ini


def test_defaults_follow_reference_hyperparameters():
    cfg = load(None)
    t = cfg.training
    assert (t.n_e, t.n_s, t.n_b, t.clip_eps, t.epochs) == (10000, 200, 1, 0.2, 5)
    assert (t.lr, t.gamma, t.lam) == (5e-4, 0.99, 0.95)
    e = cfg.environment
    assert (e.n, e.cell_len, e.r_d, e.r_c, e.n_agents) == (50, 0.5, 1.0, 5.0, 4)
    assert cfg.reward.r_col == -10.0
    assert cfg.env_config().step_cap == 200
    assert cfg.env_config(step_cap=1000).step_cap == 1000
    assert differences(cfg) == []


def test_round_trip_of_defaults():
    cfg = RunConfig()
    assert from_ini(to_ini(cfg)) == cfg


@given(
    st.integers(3, 60),
    st.integers(2, 8),
    st.sampled_from([1, 2, 3, 4]),
    st.booleans(),
    st.floats(0.01, 0.99),
)
def test_round_trip_of_random_configs(n, agents, case, mask, p):
    text = f"""
[environment]
n = {n}
n_agents = {agents}
p_threshold = {p!r}
[reward]
study_case = {case}
[training]
mask_invalid = {"yes" if mask else "no"}
"""
    cfg = from_ini(text)
    assert cfg.environment.n == n and cfg.reward.study_case == case
    assert cfg.training.mask_invalid is mask and cfg.environment.p_threshold == p
    assert from_ini(to_ini(cfg)) == cfg


def test_partial_file_keeps_other_defaults():
    cfg = from_ini("[run]\nseed = 9\n")
    assert cfg.run.seed == 9
    assert differences(cfg) == [("run", "seed", 9, 0)]


@pytest.mark.parametrize(
    "text",
    [
        "[nope]\nx = 1\n",
        "[training]\nlearning_rate = 1\n",
        "[training]\nn_e = many\n",
        "[training]\nmask_invalid = perhaps\n",
        "[reward]\nstudy_case = 5\n",
        "[deploy]\nsetup = 9\n",
        "[training]\nclip_eps = 1.5\n",
        "no header\n",
    ],
)
def test_invalid_configs_raise(text):
    with pytest.raises(ConfigError):
        from_ini(text)


def test_missing_file_raises(tmp_path):
    with pytest.raises(ConfigError):
        load(tmp_path / "missing.ini")


def test_override_ignores_none_and_validates():
    cfg = RunConfig()
    assert override(cfg, "run", seed=None) is cfg
    assert override(cfg, "run", seed=4).run.seed == 4
    with pytest.raises(ConfigError):
        override(cfg, "reward", study_case=0)


def test_derived_configs():
    cfg = from_ini("[reward]\nstudy_case = 2\n[deploy]\nk_w = 0.5\nrho = 0.8\n[run]\nseed = 3\n")
    assert cfg.env_config().reward.study_case == 2
    assert cfg.train_config().seed == 3
    d = cfg.deployment_config()
    assert d.gains.k_w == 0.5 and d.rho == 0.8 and d.seed == 3

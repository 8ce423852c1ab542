import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from dmarl_explore import neuralnet as nn
from dmarl_explore.cli import arena_seed, git_blob_hash, main

SMALL = """
[environment]
n = 6
n_agents = 2
obstacle_count = 1
max_obstacle_side = 2
p_threshold = 0.8
[reward]
study_case = 4
[training]
n_e = 2
n_s = 8
epochs = 2
[evaluation]
arenas = 3
step_cap = 10
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL)
    return str(p)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def run(*argv):
    return main([str(a) for a in argv])


# ------------------------------------------------------------- gen-env


def test_gen_env_zero_count(tmp_path, small_cfg):
    assert run("gen-env", "--config", small_cfg, "--count", 0, "--out", tmp_path / "a") == 0
    assert read_csv(tmp_path / "a" / "index.csv") == [["file", "seed", "sha1", "free_cells"]]


def test_gen_env_is_deterministic_and_indexed(tmp_path, small_cfg):
    for d in ("a", "b"):
        assert run("gen-env", "--config", small_cfg, "--count", 4, "--seed", 7, "--out", tmp_path / d) == 0
    ia = (tmp_path / "a" / "index.csv").read_bytes()
    assert ia == (tmp_path / "b" / "index.csv").read_bytes()
    rows = read_csv(tmp_path / "a" / "index.csv")[1:]
    assert len(rows) == 4
    for name, seed, sha, free in rows:
        text = (tmp_path / "a" / name).read_bytes()
        assert git_blob_hash(text) == sha
        assert int(seed) == arena_seed(7, int(name[6:10]))
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["command"] == "gen-env" and manifest["seed"] == 7


def test_git_blob_hash_matches_git():
    assert git_blob_hash(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"


# ------------------------------------------------------------- train / eval / replay / report


@pytest.fixture
def trained(tmp_path, small_cfg):
    out = tmp_path / "train"
    assert run("train", "--config", small_cfg, "--out", out) == 0
    return out


def test_train_outputs(trained):
    assert len(read_csv(trained / "curve.csv")) == 3
    for name in ("actor_0.dmrl", "actor_1.dmrl", "critic.dmrl"):
        assert (trained / "final" / name).exists()
    assert (trained / "manifest.ini").exists() and (trained / "resume.npz").exists()


def test_train_rerun_is_byte_identical(tmp_path, small_cfg, trained):
    other = tmp_path / "again"
    assert run("train", "--config", small_cfg, "--out", other) == 0
    for rel in ("curve.csv", "final/actor_0.dmrl", "final/actor_1.dmrl", "final/critic.dmrl", "resume.npz"):
        assert (trained / rel).read_bytes() == (other / rel).read_bytes(), rel


def test_train_resume_extends_run(tmp_path, small_cfg, trained):
    assert run("train", "--config", small_cfg, "--out", trained, "--iterations", 3, "--resume") == 0
    assert len(read_csv(trained / "curve.csv")) == 4
    assert run("train", "--config", small_cfg, "--out", tmp_path / "fresh", "--resume") == 1


def test_eval_rerun_is_byte_identical_and_replays(tmp_path, small_cfg, trained):
    ck = trained / "final"
    outs = [tmp_path / "e1", tmp_path / "e2"]
    for o in outs:
        assert run("eval", "--config", small_cfg, "--checkpoints", ck, "--label", "c4", "--traces", "--out", o) == 0
    for name in ("summary.csv", "episodes.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    summary = read_csv(outs[0] / "summary.csv")
    assert summary[0][0] == "label" and summary[1][:2] == ["c4", "3"]
    assert len(read_csv(outs[0] / "episodes.csv")) == 4
    traces = sorted((outs[0] / "traces" / "c4").glob("*.json"))
    assert len(traces) == 3
    render = tmp_path / "frames"
    assert run("replay", traces[0], "--checkpoints", ck, "--render", render) == 0
    assert len(list(render.glob("*.pgm"))) >= 2
    rec = json.loads(traces[0].read_text())
    rec["steps"][0]["digest"] = "f" * 16
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(rec))
    assert run("replay", bad) == 2


def test_eval_with_empty_arena_set_is_invalid(tmp_path, small_cfg, trained):
    assert run("gen-env", "--config", small_cfg, "--count", 0, "--out", tmp_path / "none") == 0
    code = run("eval", "--config", small_cfg, "--checkpoints", trained / "final", "--arenas", tmp_path / "none",
               "--out", tmp_path / "e")
    assert code == 1


def test_eval_uses_arena_set(tmp_path, small_cfg, trained):
    assert run("gen-env", "--config", small_cfg, "--count", 2, "--out", tmp_path / "set") == 0
    assert run("eval", "--config", small_cfg, "--checkpoints", trained / "final", "--arenas", tmp_path / "set",
               "--out", tmp_path / "e") == 0
    assert len(read_csv(tmp_path / "e" / "episodes.csv")) == 3
    name = read_csv(tmp_path / "set" / "index.csv")[1][0]
    (tmp_path / "set" / name).write_text((tmp_path / "set" / name).read_text().replace(".", "#", 1))
    assert run("eval", "--config", small_cfg, "--checkpoints", trained / "final", "--arenas", tmp_path / "set",
               "--out", tmp_path / "e2") == 1


def test_checkpoint_shape_mismatch_is_invalid(tmp_path, trained):
    # default config expects 50x50 actors
    assert run("eval", "--checkpoints", trained / "final", "--out", tmp_path / "e") == 1


def test_report_outputs(tmp_path, small_cfg, trained):
    assert run("eval", "--config", small_cfg, "--checkpoints", trained / "final", "--out", tmp_path / "e") == 0
    assert run("gen-env", "--config", small_cfg, "--count", 1, "--out", tmp_path / "set") == 0
    code = run("report", "--curve", trained / "curve.csv", "--episodes", tmp_path / "e" / "episodes.csv",
               "--arena", tmp_path / "set" / "arena_0000.txt", "--window", 2, "--out", tmp_path / "r")
    assert code == 0
    curves = read_csv(tmp_path / "r" / "curves.csv")
    assert curves[0] == ["label", "iteration", "reward", "reward_smoothed"] and len(curves) == 3
    assert (tmp_path / "r" / "n_steps_box.csv").exists()
    assert (tmp_path / "r" / "arena_0000.pgm").read_bytes().startswith(b"P5\n6 6\n")
    assert run("report", "--out", tmp_path / "r") == 1


# ------------------------------------------------------------- error handling


def test_unknown_config_key_is_invalid(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[training]\nwarp = 9\n")
    assert run("gen-env", "--config", bad, "--count", 1, "--out", tmp_path / "x") == 1


def test_missing_config_file_is_invalid(tmp_path):
    assert run("gen-env", "--config", tmp_path / "nope.ini", "--count", 1) == 1


def test_bad_choice_exits_with_one():
    with pytest.raises(SystemExit) as err:
        main(["deploy", "--checkpoints", "x", "--setup", "9"])
    assert err.value.code == 1


def test_console_entry_point_exit_codes(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dmarl_explore.cli", "gen-env", "--count", "0", "--out",
                           str(tmp_path / "g")], capture_output=True, text=True)
    assert proc.returncode == 0
    proc = subprocess.run([sys.executable, "-m", "dmarl_explore.cli", "eval", "--checkpoints", str(tmp_path / "none"),
                           "--out", str(tmp_path / "e")], capture_output=True, text=True)
    assert proc.returncode == 1 and "error" in proc.stderr


# ------------------------------------------------------------- deploy


@pytest.fixture(scope="module")
def full_size_actors(tmp_path_factory):
    d = tmp_path_factory.mktemp("actors50")
    g = np.random.default_rng(0)
    for k in range(4):
        nn.save_checkpoint(d / f"actor_{k}.dmrl", nn.init_params(g, 50, 10))
    return d


def test_deploy_outputs_and_rerun(tmp_path, full_size_actors):
    cfg = tmp_path / "deploy.ini"
    cfg.write_text("[deploy]\nstep_cap = 3\n")
    outs = [tmp_path / "d1", tmp_path / "d2"]
    for o in outs:
        assert run("deploy", "--config", cfg, "--checkpoints", full_size_actors, "--setup", 2, "--out", o) == 0
    report = read_csv(outs[0] / "report.csv")
    assert report[0] == ["metric", "value"]
    assert [r[0] for r in report[1:]] == ["map_coverage", "J_1_2", "J_1_3", "J_1_4", "J_2_3", "J_2_4", "J_3_4"]
    trace = read_csv(outs[0] / "trace.csv")
    assert trace[0][:3] == ["step", "agent", "x"]
    assert len(trace) - 1 == 4 * int(read_csv(outs[0] / "summary.csv")[1][1])
    for name in ("trace.csv", "report.csv", "summary.csv", "maps/agent_0.txt"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

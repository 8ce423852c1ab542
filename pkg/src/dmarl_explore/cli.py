"""Command-line entry point: ``dmarl {gen-env,train,eval,deploy,replay,report}``.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import config as cfgmod
from . import neuralnet as nn
from .arena import Arena, GenerationFailed, generate_arena, sample_initial_positions
from .core import N_ACTIONS, ExplorationError
from .deploy import TRACE_COLUMNS, default_deploy_arena, run_deployment, setup_poses
from .evaluation import ReplayDivergence, dumps_record, load_record, render_pgm, replay, run_eval_episode
from .happo import ArenaSampler, Trainer, train
from .metrics import EPISODE_COLUMNS, SUMMARY_COLUMNS, pairwise_rows, rows_csv, summary_row

log = logging.getLogger("dmarl")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    """Bad command-line or input-file usage (maps to exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _write(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def write_manifest(out: str, command: str, run: cfgmod.RunConfig, inputs: dict | None = None) -> None:
    """Resolved config plus command and input hashes; enough to re-run the directory."""
    _write(os.path.join(out, "manifest.ini"), cfgmod.to_ini(run))
    meta = dict(command=command, seed=run.run.seed, inputs=inputs or {})
    meta["overrides"] = [[s, k, v, d] for s, k, v, d in cfgmod.differences(run)]
    _write(os.path.join(out, "manifest.json"), json.dumps(meta, indent=1, sort_keys=True, default=str) + "\n")


def arena_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence([base, index]).generate_state(1, np.uint64)[0] >> 1)


def load_actors(directory: str, n: int, n_agents: int) -> list:
    actors = []
    for k in range(n_agents):
        path = os.path.join(directory, f"actor_{k}.dmrl")
        if not os.path.exists(path):
            raise UsageError(f"missing checkpoint {path}")
        params = nn.load_checkpoint(path)
        nn.check_shapes(params, n, N_ACTIONS, f"actor_{k}")
        actors.append(params)
    return actors


def _checkpoint_hashes(directory: str, n_agents: int) -> dict:
    out = {}
    for k in range(n_agents):
        with open(os.path.join(directory, f"actor_{k}.dmrl"), "rb") as fh:
            out[f"actor_{k}"] = git_blob_hash(fh.read())
    return out


# ---------------------------------------------------------------- arena sets


def generate_arena_set(run: cfgmod.RunConfig, count: int, base_seed: int) -> list:
    e = run.environment
    out = []
    for k in range(count):
        s = arena_seed(base_seed, k)
        try:
            arena = generate_arena(e.n, e.cell_len, e.obstacle_count, e.max_obstacle_side, s, min_free=e.n_agents)
        except GenerationFailed as exc:
            raise GenerationFailed(f"arena {k} (seed {s}): {exc}") from None
        out.append((f"arena_{k:04d}.txt", s, arena))
    return out


INDEX_COLUMNS = ["file", "seed", "sha1", "free_cells"]


def read_arena_set(directory: str) -> list:
    index = os.path.join(directory, "index.csv")
    if not os.path.exists(index):
        raise UsageError(f"{directory} has no index.csv")
    out = []
    with open(index, newline="") as fh:
        for row in csv.DictReader(fh):
            with open(os.path.join(directory, row["file"]), encoding="utf-8") as af:
                text = af.read()
            if git_blob_hash(text.encode("utf-8")) != row["sha1"]:
                raise UsageError(f"{row['file']} does not match its index hash")
            out.append((row["file"], int(row["seed"]), Arena.from_text(text, int(row["seed"]))))
    return out


def cmd_gen_env(args, run: cfgmod.RunConfig) -> int:
    out = args.out or run.run.out
    arenas = generate_arena_set(run, args.count, run.run.seed)
    rows = []
    for name, s, arena in arenas:
        text = arena.to_text()
        _write(os.path.join(out, name), text)
        rows.append([name, s, git_blob_hash(text.encode("utf-8")), arena.free_count])
    index = rows_csv(INDEX_COLUMNS, rows)
    _write(os.path.join(out, "index.csv"), index)
    write_manifest(out, "gen-env", run, {"count": args.count, "index_sha1": git_blob_hash(index.encode())})
    print(f"wrote {len(rows)} arenas to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- training


def cmd_train(args, run: cfgmod.RunConfig) -> int:
    out = args.out or run.run.out
    if args.iterations is not None:
        run = cfgmod.override(run, "training", n_e=args.iterations)
    env_cfg = run.env_config()
    tcfg = run.train_config()
    factory = ArenaSampler(env_cfg, run.environment.obstacle_count, run.environment.max_obstacle_side)
    trainer = None
    resume = os.path.join(out, "resume.npz")
    if args.resume:
        if not os.path.exists(resume):
            raise UsageError(f"nothing to resume: {resume} not found")
        trainer = Trainer.load_state(resume, env_cfg, tcfg)
        log.info("resuming at iteration %d", trainer.iteration)
    write_manifest(out, "train", run)

    def progress(tr):
        if tr.iteration % max(1, args.log_every) == 0:
            log.info("iteration %d reward %s length %s", tr.iteration, tr.curve[-1][1], tr.curve[-1][2])

    tr = train(tcfg, env_cfg, factory, out_dir=out, trainer=trainer, progress=progress)
    print(f"trained {tr.iteration} iterations; final checkpoints in {os.path.join(out, 'final')}")
    return EXIT_OK


# ---------------------------------------------------------------- evaluation


def cmd_eval(args, run: cfgmod.RunConfig) -> int:
    out = args.out or run.run.out
    ev = run.evaluation
    if args.mask_invalid is not None:
        ev = replace(ev, mask_invalid=args.mask_invalid == "on")
    env_cfg = run.env_config(step_cap=ev.step_cap)
    if args.arenas:
        arenas = read_arena_set(args.arenas)
    else:
        arenas = generate_arena_set(run, ev.arenas, ev.arena_seed)
    if not arenas:
        raise UsageError("evaluation needs at least one arena")
    labels = args.label or [os.path.basename(os.path.normpath(c)) for c in args.checkpoints]
    if len(labels) != len(args.checkpoints):
        raise UsageError("give one --label per --checkpoints directory")
    summary, episodes, inputs = [], [], {}
    for label, ckpt in zip(labels, args.checkpoints):
        actors = load_actors(ckpt, env_cfg.n, env_cfg.n_agents)
        hashes = _checkpoint_hashes(ckpt, env_cfg.n_agents)
        inputs[label] = {"dir": ckpt, "sha1": hashes}
        reports = []
        for i, (name, s, arena) in enumerate(arenas):
            if arena.n != env_cfg.n:
                raise UsageError(f"{name} is {arena.n}x{arena.n}, config expects {env_cfg.n}")
            positions = sample_initial_positions(arena, env_cfg.n_agents, s)
            ep = run_eval_episode(
                actors, arena, positions, env_cfg, greedy=ev.greedy, mask_invalid=ev.mask_invalid,
                seed=run.run.seed, policy_info={"checkpoints": ckpt, "sha1": hashes},
            )
            reports.append(ep.report)
            r = ep.report
            episodes.append([label, i, name, r.n_steps, r.jaccard, r.d_shared, r.success, ep.trace.terminal])
            if args.traces:
                _write(os.path.join(out, "traces", label, name.replace(".txt", ".json")), dumps_record(ep.record))
        summary.append(summary_row(label, reports))
    _write(os.path.join(out, "summary.csv"), rows_csv(SUMMARY_COLUMNS, summary))
    _write(os.path.join(out, "episodes.csv"), rows_csv(["label"] + EPISODE_COLUMNS, episodes))
    inputs["arena_dir"] = args.arenas
    inputs["arenas"] = git_blob_hash("".join(a.to_text() for _, _, a in arenas).encode("utf-8"))
    write_manifest(out, "eval", replace(run, evaluation=ev), inputs)
    print(rows_csv(SUMMARY_COLUMNS, summary), end="")
    return EXIT_OK


# ---------------------------------------------------------------- deployment


def cmd_deploy(args, run: cfgmod.RunConfig) -> int:
    out = args.out or run.run.out
    if args.setup is not None:
        run = cfgmod.override(run, "deploy", setup=args.setup)
    if args.mask_invalid is not None:
        run = cfgmod.override(run, "deploy", mask_invalid=args.mask_invalid == "on")
    arena = Arena.from_text(open(args.arena, encoding="utf-8").read()) if args.arena else default_deploy_arena()
    env_cfg = run.env_config(step_cap=run.deploy.step_cap)
    if arena.n != env_cfg.n or arena.cell_len != env_cfg.cell_len:
        raise UsageError(f"deploy arena is {arena.n}x{arena.n} @ {arena.cell_len}, config expects {env_cfg.n} @ {env_cfg.cell_len}")
    try:
        poses = setup_poses(run.deploy.setup, arena)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if len(poses) != env_cfg.n_agents:
        raise UsageError(f"setups place {len(poses)} robots; config has n_agents={env_cfg.n_agents}")
    actors = load_actors(args.checkpoints, env_cfg.n, env_cfg.n_agents)
    res = run_deployment(actors, arena, poses, env_cfg, run.deployment_config())
    _write(os.path.join(out, "trace.csv"), rows_csv(TRACE_COLUMNS, res.trace))
    rep = [["map_coverage", 100.0 * res.coverage_free]] + pairwise_rows(res.pairwise)
    _write(os.path.join(out, "report.csv"), rows_csv(["metric", "value"], rep))
    _write(
        os.path.join(out, "summary.csv"),
        rows_csv(
            ["setup", "steps", "terminal", "coverage_free", "coverage_all"],
            [[run.deploy.setup, res.steps, res.terminal, res.coverage_free, res.coverage_all]],
        ),
    )
    for a in res.agents:
        _write(os.path.join(out, "maps", f"agent_{a.id}.txt"), a.maps.agent_specific.to_text())
    inputs = {"checkpoints": _checkpoint_hashes(args.checkpoints, env_cfg.n_agents),
              "arena": git_blob_hash(arena.to_text().encode("utf-8"))}
    write_manifest(out, "deploy", run, inputs)
    print(rows_csv(["metric", "value"], rep), end="")
    return EXIT_OK


# ---------------------------------------------------------------- replay / report


def cmd_replay(args, run: cfgmod.RunConfig) -> int:
    with open(args.trace, encoding="utf-8") as fh:
        try:
            record = load_record(fh.read())
        except (ValueError, KeyError) as exc:
            raise UsageError(f"{args.trace}: {exc}") from None
    actors = None
    if args.checkpoints:
        env = record["env"]
        actors = load_actors(args.checkpoints, env["n"], env["n_agents"])
    frames = []

    def on_step(state):
        if args.render:
            frames.append((state.t, state.agents[0].maps.collaborative.cells.copy(), state.positions))

    state = replay(record, actors=actors, on_step=on_step if args.render else None)
    if args.render:
        os.makedirs(args.render, exist_ok=True)
        for t, cells, pos in frames:
            with open(os.path.join(args.render, f"step_{t:05d}.pgm"), "wb") as fh:
                fh.write(render_pgm(cells, pos))
    print(f"replay ok: {len(record['steps'])} steps, terminal {state.terminal.value}")
    return EXIT_OK


def _moving_mean(xs, window):
    out, acc = [], 0.0
    for i, x in enumerate(xs):
        acc += x
        if i >= window:
            acc -= xs[i - window]
        out.append(acc / min(i + 1, window))
    return out


def cmd_report(args, run: cfgmod.RunConfig) -> int:
    """Turn run outputs into plot-ready CSV: smoothed learning curves and n_steps box statistics."""
    out = args.out or run.run.out
    wrote = 0
    if args.curve:
        rows = []
        for path in args.curve:
            with open(path, newline="") as fh:
                data = list(csv.DictReader(fh))
            rewards = [float(r["mean_episode_reward"]) for r in data]
            label = os.path.basename(os.path.dirname(os.path.abspath(path)))
            for r, sm in zip(data, _moving_mean(rewards, args.window)):
                rows.append([label, int(r["iteration"]), float(r["mean_episode_reward"]), sm])
        _write(os.path.join(out, "curves.csv"), rows_csv(["label", "iteration", "reward", "reward_smoothed"], rows))
        wrote += 1
    if args.episodes:
        with open(args.episodes, newline="") as fh:
            data = list(csv.DictReader(fh))
        by_label = {}
        for r in data:
            if r["n_steps"] != "":
                by_label.setdefault(r["label"], []).append(float(r["n_steps"]))
        rows = []
        for label in sorted(by_label):
            q = np.quantile(np.asarray(by_label[label]), [0.0, 0.25, 0.5, 0.75, 1.0])
            rows.append([label, len(by_label[label]), *map(float, q)])
        _write(os.path.join(out, "n_steps_box.csv"), rows_csv(["label", "count", "min", "q1", "median", "q3", "max"], rows))
        wrote += 1
    if args.arena:
        arena = Arena.from_text(open(args.arena, encoding="utf-8").read())
        stem = os.path.splitext(os.path.basename(args.arena))[0]
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, f"{stem}.pgm"), "wb") as fh:
            fh.write(render_pgm(arena.map.cells))
        wrote += 1
    if not wrote:
        raise UsageError("report needs --curve, --episodes or --arena")
    print(f"report written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI config file (defaults apply to missing keys)")
    common.add_argument("--seed", type=int, help="run seed (overrides [run] seed)")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides [run] out)")
    common.add_argument("--study-case", type=int, choices=[1, 2, 3, 4], help="reward composition")
    common.add_argument("--mask-invalid", choices=["on", "off"], help="invalid-move masking")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="dmarl", description="Multi-agent grid exploration: training, evaluation and deployment.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-env", parents=[common], help="generate an arena set")
    g.add_argument("--count", type=int, required=True)
    g.set_defaults(func=cmd_gen_env)

    t = sub.add_parser("train", parents=[common], help="train actors and critic")
    t.add_argument("--iterations", type=int, help="override [training] n_e")
    t.add_argument("--resume", action="store_true", help="continue from OUT/resume.npz")
    t.add_argument("--log-every", type=int, default=50)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="greedy evaluation over an arena set")
    e.add_argument("--checkpoints", action="append", required=True, metavar="DIR")
    e.add_argument("--label", action="append")
    e.add_argument("--arenas", metavar="DIR", help="arena set from gen-env (default: generate from [evaluation])")
    e.add_argument("--traces", action="store_true", help="write a replayable JSON trace per episode")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("deploy", parents=[common], help="continuous-space deployment run")
    d.add_argument("--checkpoints", required=True, metavar="DIR")
    d.add_argument("--setup", type=int, choices=[1, 2, 3, 4])
    d.add_argument("--arena", metavar="FILE", help="arena text file (default: built-in 25 m square)")
    d.set_defaults(func=cmd_deploy)

    r = sub.add_parser("replay", parents=[common], help="re-simulate a trace and check it")
    r.add_argument("trace")
    r.add_argument("--checkpoints", metavar="DIR", help="recompute actions from these actors")
    r.add_argument("--render", metavar="DIR", help="write one PGM per step")
    r.set_defaults(func=cmd_replay)

    rp = sub.add_parser("report", parents=[common], help="plot-ready CSV from run outputs")
    rp.add_argument("--curve", action="append", metavar="CSV")
    rp.add_argument("--episodes", metavar="CSV")
    rp.add_argument("--arena", metavar="FILE")
    rp.add_argument("--window", type=int, default=100)
    rp.set_defaults(func=cmd_report)
    return p


def resolve_config(args) -> cfgmod.RunConfig:
    run = cfgmod.load(args.config)
    run = cfgmod.override(run, "run", seed=args.seed, out=args.out)
    run = cfgmod.override(run, "reward", study_case=args.study_case)
    if args.mask_invalid is not None and args.command == "train":
        run = cfgmod.override(run, "training", mask_invalid=args.mask_invalid == "on")
    return run


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        run = resolve_config(args)
        return args.func(args, run)
    except (UsageError, cfgmod.ConfigError, nn.CheckpointMismatch, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ReplayDivergence as exc:
        print(f"replay failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ExplorationError, ValueError, OSError, FloatingPointError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

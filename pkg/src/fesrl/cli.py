"""Command-line entry point: ``fesrl {train,eval,compare,trace}``.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.
Progress goes to stderr; every output directory receives one manifest.json.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, config_to_dict, dump_config, load_config, parse_config
from .control import (
    TASK_PLANTS, TASKS, PidGains, PidTrackingController, RlController, TargetSchedule, TrainConfig,
    evaluate_tracking, load_controller, run_episode, save_controller, train_controller, tune_pid,
    write_curve, write_diagnostics,
)
from .dynamo import CheckpointError, NonFiniteGradientError
from .neurosim import FesEnv, NonFiniteStateError, PlantConfigError
from .sacagent import UpdateDivergedError
from .staterep import export_loss_history

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("fesrl")


class UsageError(Exception):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def write_manifest(out: Path, command: str, args: argparse.Namespace, started: str, **fields) -> None:
    manifest = {
        "tool": "fesrl",
        "version": __version__,
        "command": command,
        "arguments": {k: v for k, v in vars(args).items() if k != "func"},
        "started": started,
        "finished": _now(),
        **fields,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _prepare_out(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_config(path: str) -> TrainConfig:
    """A YAML run config, or the config snapshot inside a previous run's manifest."""
    p = Path(path)
    if p.suffix == ".json":
        try:
            snapshot = json.loads(p.read_text())["config"]
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"{p}: not a run manifest with a config snapshot ({exc})") from exc
        import yaml
        return parse_config(yaml.safe_dump(snapshot), str(p))
    return load_config(p)


# ------------------------------------------------------------------ train


def cmd_train(args) -> int:
    started = _now()
    config = _read_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.episodes is not None:
        config.episodes = args.episodes
    if args.quantize_actions:
        config.quantize_actions = True
    out = _prepare_out(args.out)
    unit_label = "rpm" if config.plant == "cycling" else "deg"

    def report(s):
        _progress(f"episode {s.episode}/{config.episodes} mean_abs_error {s.mean_abs_error:.3f} "
                  f"{unit_label} wall {s.wall_time:.1f}s")

    result = train_controller(config, progress=report)
    write_curve(out / "learning_curve.csv", result.stats)
    write_diagnostics(out / "diagnostics.csv", result.stats)
    export_loss_history(out / "staterep_loss.csv", [s.staterep_loss for s in result.stats])
    (out / "config.yaml").write_text(dump_config(config))
    save_controller(out / "checkpoint.npz", config, result.unit, result.agent,
                    {"seed": config.seed, "episodes": config.episodes})
    write_manifest(out, "train", args, started, config=config_to_dict(config), seed=config.seed,
                   checkpoints={"controller": "checkpoint.npz"},
                   outputs=["learning_curve.csv", "diagnostics.csv", "staterep_loss.csv",
                            "config.yaml", "checkpoint.npz"])
    return EXIT_OK


# ------------------------------------------------------------------ eval / compare

METRIC_FIELDS = ["task", "controller", "seed", "rmse", "first_half_err", "second_half_err",
                 "overshoots"]


def _metric_row(m, seed: int) -> list:
    return [m.task, m.controller, seed, repr(m.rmse), repr(m.first_half_err),
            repr(m.second_half_err), ";".join(repr(o) for o in m.overshoots)]


def _check_task(task: str, plant: str) -> None:
    if task not in TASKS:
        raise UsageError(f"unknown task {task!r}; valid tasks: {', '.join(TASKS)}")
    if TASK_PLANTS[task] != plant:
        raise UsageError(f"task {task} runs on {TASK_PLANTS[task]}, but the checkpoint "
                         f"controls {plant}")


def _load(checkpoint: str):
    try:
        return load_controller(checkpoint)
    except (OSError, CheckpointError) as exc:
        raise UsageError(f"cannot load checkpoint {checkpoint}: {exc}") from exc


def _eval_job(job: tuple) -> tuple:
    """Worker body: (checkpoint, task, seed, controller spec) -> (metrics, trace)."""
    checkpoint, task, seed, spec, quantize = job
    config, env, unit, agent = load_controller(checkpoint)
    if quantize:
        from .control import IntensityQuantizer
        env.action_filter = IntensityQuantizer()
    ctrl = RlController(agent, unit) if spec == "rl" else PidTrackingController(PidGains(*spec))
    m, tr = evaluate_tracking(ctrl, env, task, np.random.default_rng(seed))
    return m, tr, env


def _run_jobs(jobs: list[tuple], n_workers: int) -> list[tuple]:
    if n_workers <= 1 or len(jobs) <= 1:
        return [_eval_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(_eval_job, jobs))


def _write_results(out: Path, results: list[tuple], seeds: list[int]) -> list[str]:
    files = []
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for (m, _, _), seed in zip(results, seeds):
            w.writerow(_metric_row(m, seed))
    files.append("metrics.csv")
    for (m, tr, env), seed in zip(results, seeds):
        name = f"trace_{m.task}_{m.controller}_seed{seed}.csv"
        tr.to_csv(out / name, env)
        files.append(name)
    return files


def cmd_eval(args) -> int:
    started = _now()
    config, env, _, _ = _load(args.checkpoint)
    _check_task(args.task, config.plant)
    out = _prepare_out(args.out)
    seeds = [args.seed + k for k in range(args.repeats)]
    jobs = [(args.checkpoint, args.task, s, "rl", args.quantize_actions) for s in seeds]
    results = _run_jobs(jobs, args.jobs)
    for (m, _, _), s in zip(results, seeds):
        _progress(f"eval {args.task} seed {s}: rmse {m.rmse:.3f} first_half {m.first_half_err:.3f} "
                  f"second_half {m.second_half_err:.3f}")
    files = _write_results(out, results, seeds)
    write_manifest(out, "eval", args, started, config=config_to_dict(config), seed=args.seed,
                   checkpoints={"controller": str(Path(args.checkpoint).resolve())},
                   task=args.task, outputs=files)
    return EXIT_OK


def _parse_gains(text: str) -> PidGains:
    try:
        kp, ki, kd = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise UsageError(f"--pid-gains expects 'kp,ki,kd', got {text!r}") from exc
    return PidGains(kp, ki, kd)


def cmd_compare(args) -> int:
    started = _now()
    config, env, _, _ = _load(args.checkpoint)
    _check_task(args.task, config.plant)
    out = _prepare_out(args.out)
    if args.pid_gains:
        gains = _parse_gains(args.pid_gains)
    else:
        gains = tune_pid(FesEnv.from_id(config.plant, config.params_path))
        _progress(f"tuned PID gains kp={gains.kp} ki={gains.ki} kd={gains.kd}")
    seeds = [args.seed + k for k in range(args.repeats)]
    jobs = []
    for s in seeds:  # both controllers share each seed, hence the same fatigue draw
        jobs.append((args.checkpoint, args.task, s, "rl", args.quantize_actions))
        jobs.append((args.checkpoint, args.task, s, gains.as_tuple(), args.quantize_actions))
    results = _run_jobs(jobs, args.jobs)
    job_seeds = [j[2] for j in jobs]
    files = _write_results(out, results, job_seeds)
    _progress(f"{'controller':<10} {'seed':>4} {'rmse':>8} {'1st half':>9} {'2nd half':>9} overshoots")
    for (m, _, _), s in zip(results, job_seeds):
        shots = " ".join(f"{o:.1f}" for o in m.overshoots)
        _progress(f"{m.controller:<10} {s:>4} {m.rmse:8.3f} {m.first_half_err:9.3f} "
                  f"{m.second_half_err:9.3f} {shots}")
    write_manifest(out, "compare", args, started, config=config_to_dict(config), seed=args.seed,
                   checkpoints={"controller": str(Path(args.checkpoint).resolve())},
                   task=args.task, pid_gains=dataclasses.asdict(gains), outputs=files)
    return EXIT_OK


# ------------------------------------------------------------------ trace


def cmd_trace(args) -> int:
    """Export one training-protocol episode (random targets, sampled fatigue)."""
    started = _now()
    config, env, unit, agent = _load(args.checkpoint)
    out = _prepare_out(args.out)
    rng = np.random.default_rng(args.seed)
    env.reset_with_sampled_fatigue(rng)
    schedule = TargetSchedule(env.target_range, config.hold_steps)
    trace = run_episode(lambda x, _: agent.act(x), env, schedule, unit, rng, config.episode_steps)
    name = f"episode_trace_seed{args.seed}.csv"
    trace.to_csv(out / name, env)
    _progress(f"trace: {len(trace)} steps, mean abs error "
              f"{np.mean(trace.abs_errors()) * env.display_scale:.3f} {env.display_unit}")
    write_manifest(out, "trace", args, started, config=config_to_dict(config), seed=args.seed,
                   checkpoints={"controller": str(Path(args.checkpoint).resolve())},
                   outputs=[name])
    return EXIT_OK


# ------------------------------------------------------------------ entry


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fesrl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"fesrl {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a GRU + SAC controller")
    t.add_argument("--config", required=True, help="run config (YAML) or a previous manifest.json")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, help="override the config's master seed")
    t.add_argument("--episodes", type=int, help="override the config's episode count")
    t.add_argument("--quantize-actions", action="store_true",
                   help="snap commands to 20 intensity levels")
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "evaluate a trained controller on a task"),
                                 ("compare", cmd_compare, "RL vs PID on the same task and seeds")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--task", required=True, help=f"one of: {', '.join(TASKS)}")
        e.add_argument("--out", required=True)
        e.add_argument("--seed", type=int, default=0)
        e.add_argument("--repeats", type=int, default=1, help="evaluate seeds seed..seed+N-1")
        e.add_argument("--jobs", type=int, default=1, help="parallel evaluation processes")
        e.add_argument("--quantize-actions", action="store_true")
        if name == "compare":
            g = e.add_mutually_exclusive_group(required=True)
            g.add_argument("--pid-gains", help="fixed PID gains as kp,ki,kd")
            g.add_argument("--tune-pid", action="store_true",
                           help="grid-tune PID gains on a fresh plant first")
        e.set_defaults(func=func)

    r = sub.add_parser("trace", help="export one protocol episode of a trained controller")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_trace)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits with 2 on usage errors
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "repeats", 1) < 1 or getattr(args, "jobs", 1) < 1:
        _progress("error: --repeats and --jobs must be >= 1")
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, PlantConfigError, UsageError) as exc:
        _progress(f"error: {exc}")
        return EXIT_USAGE
    except (UpdateDivergedError, NonFiniteGradientError, NonFiniteStateError,
            FloatingPointError) as exc:
        _progress(f"numeric failure: {exc}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

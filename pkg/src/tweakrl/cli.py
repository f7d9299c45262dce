"""Command-line entry point for the full workflow.

Subcommands cover demo collection, warm-up, online training, the networked
learner/actor pair, evaluation, long-horizon chains, dataset export and the
scaling benchmark. Every run resolves its configuration from (in order)
defaults, an optional config file, ``TWEAKRL_``-prefixed environment
variables, and ``--set key=value`` overrides, then writes the resolved
config next to its outputs before doing any work.

Output directory layout:

    out/
      resolved.cfg      flat dotted-key config actually used
      metrics.log       line-delimited JSON metrics
      checkpoints/      policy snapshots (+ per-task critics)
      datasets/         replay buffers and talk-tweak data as .httd
"""

import argparse
import os
import sys
from typing import Dict, List, Optional

from .checkpoints import load_snapshot, save_critics, save_snapshot
from .config import TrainConfig, apply_override, load_config, save_config
from .datafiles import export_text, read_dataset, record_to_json
from .env import default_tasks
from .netlearn import ActorClient, scaling_benchmark, serve_learner
from .replay import save_buffers
from .trainer import (
    Learner,
    collect_demos,
    evaluate,
    evaluate_long_horizon,
    online_phase,
    warmup_phase,
)

ENV_PREFIX = "TWEAKRL_"


def _resolve_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    for key, value in sorted(os.environ.items()):
        if key.startswith(ENV_PREFIX):
            dotted = key[len(ENV_PREFIX):].lower().replace("__", ".")
            cfg = apply_override(cfg, dotted, value)
    for item in args.set or []:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        key, _, value = item.partition("=")
        cfg = apply_override(cfg, key.strip(), value.strip())
    if args.seed is not None:
        cfg = apply_override(cfg, "seed", str(args.seed))
    return cfg


def _prepare_out(args, cfg: TrainConfig) -> str:
    out = args.out
    os.makedirs(os.path.join(out, "checkpoints"), exist_ok=True)
    os.makedirs(os.path.join(out, "datasets"), exist_ok=True)
    save_config(cfg, os.path.join(out, "resolved.cfg"))
    return out


def _build_learner(cfg: TrainConfig) -> Learner:
    buffers, talk_tweak, mc_returns = collect_demos(cfg)
    return Learner(cfg, buffers, talk_tweak, mc_returns)


def _save_state(out: str, learner: Learner, snapshot) -> None:
    save_snapshot(snapshot, os.path.join(out, "checkpoints", "policy.htss"))
    save_critics(learner.critics, os.path.join(out, "checkpoints"))
    save_buffers(os.path.join(out, "datasets", "run"), learner.buffers,
                 learner.talk_tweak)
    learner.write_metrics(os.path.join(out, "metrics.log"))


# ---- subcommands -----------------------------------------------------------


def cmd_collect_demos(args) -> int:
    cfg = _resolve_config(args)
    out = _prepare_out(args, cfg)
    learner = _build_learner(cfg)
    save_buffers(os.path.join(out, "datasets", "run"), learner.buffers,
                 learner.talk_tweak)
    total = sum(len(b.demos) for b in learner.buffers)
    print(f"collected {cfg.demos_per_task} episodes/task "
          f"({total} transitions) -> {out}/datasets")
    return 0


def cmd_warmup(args) -> int:
    cfg = _resolve_config(args)
    out = _prepare_out(args, cfg)
    learner = _build_learner(cfg)
    snapshot = warmup_phase(cfg, learner, args.steps)
    _save_state(out, learner, snapshot)
    print(f"warm-up done: {learner.update_count} updates, "
          f"snapshot v{snapshot.version} -> {out}/checkpoints")
    return 0


def cmd_train_online(args) -> int:
    cfg = _resolve_config(args)
    out = _prepare_out(args, cfg)
    learner = _build_learner(cfg)
    warmup_phase(cfg, learner, args.warmup_steps)
    snapshot = online_phase(cfg, learner,
                            max_episodes_per_task=args.episodes)
    _save_state(out, learner, snapshot)
    report = evaluate(snapshot, cfg, n_trials=args.trials)
    print(report.render_table())
    print(f"trained: {learner.env_steps} env steps, "
          f"{learner.update_count} updates -> {out}")
    return 0


def cmd_serve_learner(args) -> int:
    cfg = _resolve_config(args)
    out = _prepare_out(args, cfg)
    learner = _build_learner(cfg)
    warmup_phase(cfg, learner, args.warmup_steps)
    service = serve_learner(cfg, learner, host=args.host, port=args.port,
                            serialized=args.serialized)
    print(f"learner serving on {args.host}:{service.port} "
          f"(serialized={args.serialized})")
    try:
        service.stop_event.wait()
    except KeyboardInterrupt:
        pass
    finally:
        service.stop()
        _save_state(out, learner, learner.snapshot())
    return 0


def cmd_run_actor(args) -> int:
    cfg = _resolve_config(args)
    host, _, port = args.learner.partition(":")
    client = ActorClient((host, int(port)), cfg, args.actor_id,
                         seed_salt=args.salt, pace_s=args.pace)
    client.run(args.episodes or cfg.online_episodes,
               max_env_steps=cfg.max_env_steps)
    print(f"actor {args.actor_id}: {client.episodes_sent} episodes, "
          f"{client.env_steps} env steps")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    snapshot = load_snapshot(args.ckpt)
    report = evaluate(snapshot, cfg, n_trials=args.trials,
                      use_refinement=args.refinement == "on")
    print(report.render_table())
    return 0


def cmd_long_horizon(args) -> int:
    cfg = _resolve_config(args)
    snapshot = load_snapshot(args.ckpt)
    print(f"{'n_bolts':>8}{'chain success':>15}")
    for n_bolts in args.bolts:
        runs = evaluate_long_horizon(snapshot, cfg, n_bolts,
                                     n_seeds=args.seeds)
        wins = sum(len(run) == 3 * n_bolts and all(r.success for r in run)
                   for run in runs)
        print(f"{n_bolts:>8}{100.0 * wins / len(runs):>14.1f}%")
    return 0


def cmd_export_talk_tweak(args) -> int:
    cfg = _resolve_config(args)
    src = os.path.join(args.run_dir, "datasets", "run.talk_tweak.httd")
    if not os.path.exists(src):
        raise FileNotFoundError(f"no talk-tweak dataset under {args.run_dir}")
    if args.out.endswith(".jsonl"):
        count = export_text(src, args.out)
    else:
        records = read_dataset(src)
        from .datafiles import write_dataset
        count = write_dataset(args.out, records)
    print(f"exported {count} records -> {args.out}")
    return 0


def cmd_scaling_benchmark(args) -> int:
    cfg = _resolve_config(args)

    def factory() -> Learner:
        learner = _build_learner(cfg)
        warmup_phase(cfg, learner, args.warmup_steps)
        return learner

    runs = scaling_benchmark(cfg, args.actors, factory,
                             threshold=args.threshold,
                             eval_trials=args.trials, pace_s=args.pace)
    print(f"{'actors':>7}{'wall (s)':>10}{'env steps':>11}{'reached':>9}")
    for run in runs:
        print(f"{run.actors:>7}{run.wall_time_s:>10.1f}"
              f"{run.env_steps:>11}{str(run.reached):>9}")
    return 0


def cmd_serve_panel(args) -> int:
    cfg = _resolve_config(args)
    snapshot = load_snapshot(args.ckpt)
    from .ui_server import UiBridge, serve_ui
    task = next((t for t in default_tasks() if t.id == args.task), None)
    if task is None:
        raise ValueError(f"unknown task id {args.task}")
    bridge = UiBridge(snapshot, cfg, task=task, session_seed=args.session_seed)
    print(f"intervention panel on http://{args.host}:{args.port}/ "
          f"(task {task.id}: {task.name})")
    serve_ui(bridge, host=args.host, port=args.port,
             assets_dir=args.assets, pace_s=args.pace)
    return 0


def cmd_dump(args) -> int:
    try:
        for rec in read_dataset(args.path):
            print(record_to_json(rec))
    except BrokenPipeError:  # reader (e.g. head) closed early
        sys.stderr.close()
    return 0


# ---- argument parsing ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tweakrl",
        description="dual-actor fine-tuning: demos, warm-up, online "
                    "training, networked learner/actors, evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", default=None, help="config file path")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted-key config override (repeatable)")
        p.add_argument("--seed", type=int, default=None)
        if needs_out:
            p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("collect-demos", help="record scripted expert demos")
    common(p)
    p.set_defaults(fn=cmd_collect_demos)

    p = sub.add_parser("warmup", help="offline warm-up from demos")
    common(p)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(fn=cmd_warmup)

    p = sub.add_parser("train-online",
                       help="full pipeline: demos, warm-up, online")
    common(p)
    p.add_argument("--warmup-steps", type=int, default=None)
    p.add_argument("--episodes", type=int, default=None,
                   help="online episodes per task")
    p.add_argument("--trials", type=int, default=25)
    p.set_defaults(fn=cmd_train_online)

    p = sub.add_parser("serve-learner", help="networked learner service")
    common(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7788)
    p.add_argument("--warmup-steps", type=int, default=None)
    p.add_argument("--serialized", action="store_true",
                   help="deterministic lockstep mode (single actor)")
    p.set_defaults(fn=cmd_serve_learner)

    p = sub.add_parser("run-actor", help="episode collector client")
    common(p, needs_out=False)
    p.add_argument("--learner", default="127.0.0.1:7788",
                   help="learner host:port")
    p.add_argument("--actor-id", default="actor-0")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--salt", default="", help="seed salt for parallel actors")
    p.add_argument("--pace", type=float, default=0.0,
                   help="seconds to sleep per environment step")
    p.set_defaults(fn=cmd_run_actor)

    p = sub.add_parser("eval", help="success-rate table for a checkpoint")
    common(p, needs_out=False)
    p.add_argument("--ckpt", required=True, help="policy snapshot path")
    p.add_argument("--trials", type=int, default=25)
    p.add_argument("--refinement", choices=["on", "off"], default="off")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("long-horizon", help="chained multi-bolt evaluation")
    common(p, needs_out=False)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--bolts", type=int, nargs="+", default=[1, 2, 3, 4])
    p.add_argument("--seeds", type=int, default=10)
    p.set_defaults(fn=cmd_long_horizon)

    p = sub.add_parser("export-talk-tweak",
                       help="export talk-tweak records from a run")
    common(p, needs_out=False)
    p.add_argument("--in", dest="run_dir", required=True,
                   help="training run directory")
    p.add_argument("--out-file", dest="out", required=True,
                   help=".httd or .jsonl destination")
    p.set_defaults(fn=cmd_export_talk_tweak)

    p = sub.add_parser("scaling-benchmark",
                       help="wall-clock to threshold vs actor count")
    common(p, needs_out=False)
    p.add_argument("--actors", type=int, nargs="+", default=[1, 2])
    p.add_argument("--threshold", type=float, default=0.9)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--pace", type=float, default=0.002)
    p.add_argument("--warmup-steps", type=int, default=None)
    p.set_defaults(fn=cmd_scaling_benchmark)

    p = sub.add_parser("serve-panel",
                       help="browser intervention panel around a checkpoint")
    common(p, needs_out=False)
    p.add_argument("--ckpt", required=True, help="policy snapshot path")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8800)
    p.add_argument("--task", type=int, default=0, help="task id to run")
    p.add_argument("--assets", default=None,
                   help="built control-panel dist/ directory")
    p.add_argument("--pace", type=float, default=0.1,
                   help="autonomous stepping period; 0 = lockstep")
    p.add_argument("--session-seed", type=int, default=0)
    p.set_defaults(fn=cmd_serve_panel)

    p = sub.add_parser("dump", help="print a .httd dataset as JSON lines")
    common(p, needs_out=False)
    p.add_argument("path", help=".httd file")
    p.set_defaults(fn=cmd_dump)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (OSError, ValueError, KeyError, ConnectionError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

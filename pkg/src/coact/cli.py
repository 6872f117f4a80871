"""Command-line entry points: train | collect | evaluate | serve | replay.

Every flag can also come from a JSON config file (--config) whose keys mirror
the flag names without the leading dashes; explicit flags win over the config.
Exit codes: 0 success, 1 runtime failure (collection/checkpoint/replay), 2 bad
usage.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .agents import (
    AssistiveAgent,
    BcAgent,
    act_autonomous,
    bc_act,
    load_checkpoint,
    save_checkpoint,
)
from .data import load_dataset, load_trajectory, save_dataset
from .diffusion import TrainConfig
from .envs import DEFAULT_PROFILES, OperatorProfile, make_env
from .jointloop import (
    CollectionError,
    RoundSpec,
    collect_round,
    compute_metrics,
    eval_autonomous,
    format_report_table,
    gamma_sweep,
    replay_trajectory,
    run_joint_learning,
)

DEFAULT_ROUND_EPOCHS = 2000


def parse_rounds(text: str) -> list[RoundSpec]:
    """Parse "10:0,10:0.5" or "10:0:2000,10:adaptive:1500" into round specs."""
    rounds = []
    for chunk in text.split(","):
        parts = chunk.strip().split(":")
        if len(parts) not in (2, 3):
            raise ValueError(f"bad round spec {chunk!r}; want n:gamma or n:gamma:epochs")
        n = int(parts[0])
        gamma: float | str = parts[1] if parts[1] == "adaptive" else float(parts[1])
        epochs = int(parts[2]) if len(parts) == 3 else DEFAULT_ROUND_EPOCHS
        rounds.append(RoundSpec(n_target=n, gamma=gamma, epochs=epochs))
    if not rounds:
        raise ValueError("empty rounds schedule")
    return rounds


def parse_gammas(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip() != ""]


def operator_from_args(args) -> OperatorProfile:
    base = DEFAULT_PROFILES.get(args.task, OperatorProfile())
    return OperatorProfile(
        noise_std=base.noise_std if args.operator_noise is None else args.operator_noise,
        lag_steps=base.lag_steps if args.operator_lag is None else args.operator_lag,
        dropout_prob=base.dropout_prob if args.operator_dropout is None else args.operator_dropout,
        waypoint_jitter=base.waypoint_jitter if args.operator_jitter is None else args.operator_jitter,
    )


def write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_train(args) -> int:
    try:
        rounds = parse_rounds(args.rounds)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    out = Path(args.out)
    profile = operator_from_args(args)
    try:
        result = run_joint_learning(
            args.task,
            profile,
            rounds,
            master_seed=args.seed,
            base_config=TrainConfig(seed=args.seed),
            autonomy_episodes=args.autonomy_episodes,
            keep_round_agents=args.round_checkpoints,
        )
    except CollectionError as e:
        print(f"collection failure: {e}", file=sys.stderr)
        return 1
    reports = [r.to_dict() for r in result.reports]
    write_json(out / "rounds.json", {
        "task": args.task,
        "seed": args.seed,
        "operator": profile.to_dict(),
        "rounds": reports,
        "autonomy": result.autonomy,
    })
    (out / "rounds.txt").write_text(format_report_table(result.reports) + "\n")
    save_dataset(result.dataset, out / "dataset")
    if result.agent is not None:
        save_checkpoint(result.agent, out / "checkpoint.json")
    for i, agent in enumerate(result.round_agents):
        save_checkpoint(agent, out / f"checkpoint_round_{i}.json")
    print(format_report_table(result.reports))
    if result.autonomy is not None:
        print(f"autonomy: success_rate={result.autonomy['success_rate']:.4f} "
              f"over {result.autonomy['episodes']} episodes")
    return 0


def cmd_collect(args) -> int:
    env = make_env(args.task)
    profile = operator_from_args(args)
    agent = None
    if args.checkpoint:
        agent = load_checkpoint(args.checkpoint)
        if not isinstance(agent, AssistiveAgent) or agent.task != args.task:
            print("error: checkpoint does not match task", file=sys.stderr)
            return 1
    gamma: float | str = args.gamma if args.gamma == "adaptive" else float(args.gamma)
    rng = np.random.default_rng(args.seed)
    try:
        trajs, stats = collect_round(env, profile, agent, gamma, args.episodes, rng)
    except CollectionError as e:
        print(f"collection failure: {e}", file=sys.stderr)
        return 1
    out = Path(args.out)
    save_dataset(trajs, out / "dataset")
    metrics = compute_metrics(trajs, stats.attempts, stats.total_steps)
    write_json(out / "collect.json", {
        "task": args.task,
        "gamma": gamma,
        "episodes": len(trajs),
        "attempts": stats.attempts,
        **metrics,
    })
    print(f"collected {len(trajs)} valid episodes in {stats.attempts} attempts "
          f"(success_rate={metrics['success_rate']:.4f})")
    return 0


def cmd_evaluate(args) -> int:
    try:
        agent = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError) as e:
        print(f"error: cannot load checkpoint: {e}", file=sys.stderr)
        return 1
    if agent.task != args.task:
        print(f"error: checkpoint is for task {agent.task!r}, not {args.task!r}", file=sys.stderr)
        return 1
    env = make_env(args.task)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)

    if isinstance(agent, BcAgent):
        result = _eval_bc(agent, env, args.episodes, rng)
        write_json(out / "evaluate.json", result)
        print(f"bc autonomy: success_rate={result['success_rate']:.4f}")
        return 0

    profile = operator_from_args(args)
    gammas = parse_gammas(args.gammas)
    sweep = gamma_sweep(agent, env, profile, list(gammas), args.episodes, rng)
    with (out / "sweep.csv").open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["gamma", "success_rate", "mean_horizon"])
        for row in sweep:
            writer.writerow([row["gamma"], row["success_rate"],
                             "" if row["mean_horizon"] is None else row["mean_horizon"]])
    autonomy = eval_autonomous(agent, env, args.episodes, np.random.default_rng(args.seed + 1))
    write_json(out / "evaluate.json", {"sweep": sweep, "autonomy": autonomy})
    print(f"autonomy: success_rate={autonomy['success_rate']:.4f} "
          f"over {autonomy['episodes']} episodes")
    return 0


def _eval_bc(agent: BcAgent, env, episodes: int, rng) -> dict:
    from .jointloop import episode_streams

    wins, horizons = 0, []
    for _ in range(episodes):
        reset_ss, _, _ = episode_streams(int(rng.integers(0, 2**32)))
        state = env.reset(reset_ss)
        while not state.success and state.step_index < env.max_steps:
            state = env.step(state, bc_act(agent, state.vec))
        if state.success:
            wins += 1
            horizons.append(state.step_index)
    return {
        "episodes": episodes,
        "success_rate": wins / episodes,
        "mean_horizon": float(np.mean(horizons)) if horizons else None,
    }


def cmd_serve(args) -> int:
    from .service import ServiceConfig, serve

    cfg = ServiceConfig(
        task=args.task,
        checkpoint=args.checkpoint,
        out_dir=args.out,
        tick_hz=args.tick_hz,
        seed=args.seed,
    )
    try:
        serve(cfg, host=args.host, port=args.port)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


def cmd_replay(args) -> int:
    paths: list[Path] = []
    if args.trajectory:
        paths.append(Path(args.trajectory))
    if args.dataset:
        manifest = json.loads((Path(args.dataset) / "manifest.json").read_text())
        paths.extend(Path(args.dataset) / e["file"] for e in manifest["trajectories"])
    if not paths:
        print("error: nothing to replay (need --trajectory or --dataset)", file=sys.stderr)
        return 2
    failures = 0
    for path in paths:
        traj = load_trajectory(path)
        result = replay_trajectory(traj)
        status = "ok" if result.ok else f"DIVERGED at tick {result.first_bad_tick}"
        print(f"{path.name}: {status} (max deviation {result.max_deviation:.3e})")
        if args.timeline and result.ok:
            for t, tr in enumerate(traj.transitions):
                print(f"  t={t:3d} gamma={tr.gamma:.3f} alignment={tr.alignment:+.5f}")
        failures += 0 if result.ok else 1
    if failures:
        print(f"{failures}/{len(paths)} trajectories diverged", file=sys.stderr)
        return 1
    return 0


def _add_operator_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--operator-noise", type=float, default=None,
                   help="gaussian action noise as a fraction of each bound")
    p.add_argument("--operator-lag", type=int, default=None, help="action delay in ticks")
    p.add_argument("--operator-dropout", type=float, default=None,
                   help="probability of a dropped (zero) action per tick")
    p.add_argument("--operator-jitter", type=float, default=None,
                   help="std of the per-episode waypoint perception offset")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coact",
                                     description="shared-autonomy teleoperation workbench")
    parser.add_argument("--config", type=str, default=None,
                        help="JSON file of flag defaults (keys = flag names without dashes)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the joint learning loop")
    p.add_argument("--task", required=True, choices=["pick_place", "push_cube", "latch"])
    p.add_argument("--rounds", required=True,
                   help='schedule like "10:0,10:0.5,10:0.5" (n:gamma[:epochs], gamma may be adaptive)')
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--autonomy-episodes", type=int, default=100)
    p.add_argument("--round-checkpoints", action="store_true",
                   help="also save a checkpoint after every round")
    _add_operator_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("collect", help="collect demonstrations (optionally assisted)")
    p.add_argument("--task", required=True, choices=["pick_place", "push_cube", "latch"])
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--gamma", default="0", help="autonomy share in [0,1], or adaptive")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_operator_flags(p)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("evaluate", help="gamma sweep + autonomy evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", required=True, choices=["pick_place", "push_cube", "latch"])
    p.add_argument("--gammas", default="0,0.25,0.5,0.75,1.0")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_operator_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="run the live teleoperation service")
    p.add_argument("--task", required=True, choices=["pick_place", "push_cube", "latch"])
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--tick-hz", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="directory for saved episodes")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="re-simulate recorded trajectories and verify them")
    p.add_argument("--trajectory", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--timeline", action="store_true", help="print the gamma/alignment timeline")
    p.set_defaults(func=cmd_replay)
    return parser


def apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Inject config-file values as flag defaults: explicit argv always wins."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    config = json.loads(Path(argv[idx + 1]).read_text())
    extra: list[str] = []
    for key, value in config.items():
        flag = f"--{key.replace('_', '-')}"
        if flag in argv:
            continue
        if isinstance(value, bool):
            if value:
                extra.append(flag)
        else:
            extra.extend([flag, str(value)])
    return argv + extra


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = apply_config_file(parser, argv)
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: bad config file: {e}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

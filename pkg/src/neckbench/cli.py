"""Command-line surface: serve, demo-gen, train, eval, compare, replay.

Exit codes: 0 success, 1 usage error, 2 verification failure, 3 I/O error.
Every command is deterministic given its flags and seeds.
"""

from __future__ import annotations

import argparse
import json
import multiprocessing
import os
import sys

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2
EXIT_IO = 3


class _UsageExit(SystemExit):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise _UsageExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="neckbench",
                     description="Actuated-neck teleoperation and imitation-learning workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the teleop protocol server and tick loop")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--port", type=int, default=None, help="TCP port (overrides config)")
    p.add_argument("--ws-port", type=int, default=None, help="WebSocket port (overrides config)")
    p.add_argument("--task", default=None, help="task scene to serve")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--record-dir", default=None, help="directory for recorded episodes")

    p = sub.add_parser("demo-gen", help="generate scripted demonstration episodes")
    p.add_argument("--task", required=True)
    p.add_argument("--count", type=int, default=120)
    p.add_argument("--seed", type=int, default=0, help="first scene seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--config", default=None)

    p = sub.add_parser("train", help="train a behavior-cloning policy")
    p.add_argument("--dataset", nargs="+", required=True,
                   help="one or more dataset manifest files (merged unlabeled)")
    p.add_argument("--variant", choices=("actuated", "static"), required=True)
    p.add_argument("--out", required=True, help="params file to write")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--train-seed", type=int, default=None)
    p.add_argument("--report-dir", default=None,
                   help="directory for loss curve CSV/PNG and run manifest "
                        "(default: alongside the params file)")
    p.add_argument("--config", default=None)

    p = sub.add_parser("eval", help="evaluate a policy on held-out scenes")
    p.add_argument("--params", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--trials", type=int, default=15)
    p.add_argument("--seed-base", type=int, default=10_000)
    p.add_argument("--report-dir", default=None)
    p.add_argument("--format", choices=("human", "json"), default="human")
    p.add_argument("--config", default=None)

    p = sub.add_parser("compare", help="actuated vs static success table")
    p.add_argument("--actuated", required=True, help="actuated params file")
    p.add_argument("--static", required=True, help="static params file")
    p.add_argument("--tasks", default="CfB,L2Rmod,CRange")
    p.add_argument("--trials", type=int, default=15)
    p.add_argument("--seed-base", type=int, default=10_000)
    p.add_argument("--report-dir", default=None)
    p.add_argument("--format", choices=("human", "json"), default="human")
    p.add_argument("--config", default=None)

    p = sub.add_parser("replay", help="re-simulate a recorded episode")
    p.add_argument("--episode", required=True)
    p.add_argument("--verify", action="store_true",
                   help="exit 2 unless the replay matches the recording exactly")
    p.add_argument("--config", default=None)
    return parser


# ---------------------------------------------------------------------------
# subcommand bodies
# ---------------------------------------------------------------------------

def _load(config_path):
    from .config import build_retarget_params, build_sim_context, load_config

    cfg = load_config(config_path)
    return cfg, build_sim_context(cfg), build_retarget_params(cfg)


def cmd_serve(args) -> int:
    from .server import ServerCore, TeleopServer

    cfg, ctx, retarget_params = _load(args.config)
    server_cfg = cfg["server"]
    core = ServerCore(
        task=args.task or server_cfg["task"],
        seed=args.seed if args.seed is not None else int(server_cfg["seed"]),
        ctx=ctx,
        retarget_params=retarget_params,
        record_dir=args.record_dir or server_cfg.get("record_dir"),
    )
    server = TeleopServer(
        core,
        host=server_cfg["host"],
        tcp_port=args.port if args.port is not None else int(server_cfg["tcp_port"]),
        ws_port=args.ws_port if args.ws_port is not None else int(server_cfg["ws_port"]),
    )
    print(f"neckbench serve: task={core.task} seed={core.seed} "
          f"tcp={server.tcp_port} ws={server.ws_port}", flush=True)
    server.serve_forever()
    return EXIT_OK


def _gen_one(job):
    task, seed, out_dir, config_path = job
    from .config import build_demo_params, load_config, build_sim_context
    from .demoscript import generate_episode
    from .recorder import save_episode

    cfg = load_config(config_path)
    ctx = build_sim_context(cfg)
    episode, _ = generate_episode(task, seed, ctx, build_demo_params(cfg))
    path = os.path.join(out_dir, f"{task}_{seed:05d}.ep.jsonl")
    save_episode(episode, path)
    return path, episode.outcome


def cmd_demo_gen(args) -> int:
    from .recorder import write_manifest

    os.makedirs(args.out, exist_ok=True)
    jobs = [(args.task, args.seed + i, args.out, args.config) for i in range(args.count)]
    if args.workers > 1:
        with multiprocessing.Pool(args.workers) as pool:
            results = pool.map(_gen_one, jobs)
    else:
        results = [_gen_one(j) for j in jobs]
    paths = [p for p, _ in results]
    wins = sum(ok for _, ok in results)
    write_manifest(paths, os.path.join(args.out, "manifest.json"))
    print(f"demo-gen: {len(paths)} episodes, {wins} successful, "
          f"manifest at {os.path.join(args.out, 'manifest.json')}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .config import build_train_config, load_config
    from .policy import save_params, train
    from .recorder import merge_datasets, read_manifest
    from .report import plot_loss_curve, write_loss_curve

    cfg = load_config(args.config)
    episode_paths = []
    for manifest in args.dataset:
        episode_paths.extend(read_manifest(manifest))
    dataset = merge_datasets(episode_paths)
    train_cfg = build_train_config(cfg, epochs=args.epochs, seed=args.train_seed)
    result = train(dataset, train_cfg, args.variant)
    save_params(result.params, args.out)

    report_dir = args.report_dir or os.path.dirname(os.path.abspath(args.out))
    os.makedirs(report_dir, exist_ok=True)
    write_loss_curve(result.loss_curve, os.path.join(report_dir, f"loss_{args.variant}.csv"))
    plot_loss_curve(result.loss_curve, os.path.join(report_dir, f"loss_{args.variant}.png"),
                    title=f"{args.variant} training loss")
    manifest_path = os.path.join(report_dir, f"train_manifest_{args.variant}.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump({**result.manifest, "dataset_manifests": args.dataset,
                   "params_file": os.path.abspath(args.out)}, fh, indent=2)
        fh.write("\n")
    print(f"train: {len(dataset)} episodes, {result.manifest['samples']} samples, "
          f"loss {result.loss_curve[0]:.4f} -> {result.loss_curve[-1]:.5f}; "
          f"params at {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .config import build_train_config, load_config, build_sim_context
    from .policy import load_params, rollout
    from .report import write_eval_report

    cfg = load_config(args.config)
    ctx = build_sim_context(cfg)
    params = load_params(args.params)
    train_cfg = build_train_config(cfg)
    rows = []
    for i in range(args.trials):
        seed = args.seed_base + i
        res = rollout(params, args.task, seed, params.variant, ctx, config=train_cfg)
        rows.append({
            "task": args.task,
            "seed": seed,
            "success": bool(res.success),
            "ticks": res.ticks,
            "pregrasp_visibility": round(res.pregrasp_visibility, 4),
        })
    wins = sum(r["success"] for r in rows)
    summary = {"task": args.task, "variant": params.variant,
               "success_rate": wins / args.trials, "trials": args.trials}
    if args.report_dir:
        paths = write_eval_report(rows, args.report_dir, summary)
        print(f"eval report: {paths['csv']}, {paths['png']}", file=sys.stderr)
    if args.format == "json":
        print(json.dumps({"summary": summary, "rows": rows}, indent=2))
    else:
        print(f"{args.task} [{params.variant}]: {wins}/{args.trials} successful "
              f"({wins / args.trials * 100:.0f}%)")
    return EXIT_OK


def cmd_compare(args) -> int:
    from .config import build_train_config, load_config, build_sim_context
    from .policy import compare, load_params
    from .report import compare_table, write_compare_report

    cfg = load_config(args.config)
    ctx = build_sim_context(cfg)
    params_act = load_params(args.actuated)
    params_stat = load_params(args.static)
    if params_act.variant != "actuated" or params_stat.variant != "static":
        raise ValueError("pass an actuated params file to --actuated and a static one to --static")
    tasks = [t.strip() for t in args.tasks.split(",") if t.strip()]
    result = compare(params_act, params_stat, tasks, trials=args.trials,
                     ctx=ctx, seed_base=args.seed_base,
                     config=build_train_config(cfg))
    if args.report_dir:
        paths = write_compare_report(result, args.report_dir)
        print(f"compare report: {paths['csv']}, {paths['json']}, {paths['png']}",
              file=sys.stderr)
    if args.format == "json":
        print(json.dumps({"trials": result.trials, "rows": result.rows(),
                          "disambiguation": result.disambiguation}, indent=2))
    else:
        print(compare_table(result))
    return EXIT_OK


def cmd_replay(args) -> int:
    from .config import load_config, build_sim_context
    from .recorder import ReplayMismatch, load_episode, replay, verify_replay

    cfg = load_config(args.config)
    ctx = build_sim_context(cfg)
    episode = load_episode(args.episode)
    if args.verify:
        try:
            verify_replay(episode, ctx)
        except ReplayMismatch as exc:
            print(f"replay verification FAILED: {exc}", file=sys.stderr)
            return EXIT_VERIFY
        print(f"replay verified: {len(episode.steps)} steps reproduce exactly")
        return EXIT_OK
    states = replay(episode, ctx)
    print(f"replayed {len(states)} steps; final tick {states[-1].tick}")
    return EXIT_OK


_COMMANDS = {
    "serve": cmd_serve,
    "demo-gen": cmd_demo_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "replay": cmd_replay,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageExit as exc:
        return int(exc.code)
    try:
        return _COMMANDS[args.command](args)
    except KeyboardInterrupt:
        return EXIT_OK
    except (FileNotFoundError, PermissionError, IsADirectoryError, OSError) as exc:
        print(f"neckbench: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001  - the CLI boundary reports, not raises
        print(f"neckbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

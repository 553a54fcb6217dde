"""Command-line entry point: train, eval, analyze, track.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure. The
environment variable TORQUELAB_OUT_ROOT, when set, prefixes relative
output directories.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .track import (Track, TrackError, load_track, save_track,
                    generate_circuit, generate_straight, validate_track_file)
from .vehicle import VehicleParams
from .env import EnvConfig, RaceEnv, ACTIVE_4WD, PASSIVE_4WD
from .network import PolicySpec, MLPPolicy, load_checkpoint, config_hash
from .ppo import TrainConfig, train, evaluate
from . import telemetry as tm


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        raise UsageError(message)


def _out_path(path: str) -> str:
    root = os.environ.get("TORQUELAB_OUT_ROOT")
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _load_configs(args) -> tuple[VehicleParams, EnvConfig, TrainConfig]:
    vehicle = (VehicleParams.from_file(args.vehicle)
               if getattr(args, "vehicle", None) else VehicleParams())
    env_cfg = (EnvConfig.from_file(args.env_config)
               if getattr(args, "env_config", None) else EnvConfig())
    train_cfg = (TrainConfig.from_file(args.train_config)
                 if getattr(args, "train_config", None) else TrainConfig())
    # flag overrides (flags win over config files)
    if getattr(args, "mode", None):
        env_cfg = EnvConfig(**{**env_cfg.to_dict(), "actuation_mode": args.mode})
    for name in ("max_steps", "n_envs", "seed", "eval_interval",
                 "rollout_horizon", "batch_size"):
        v = getattr(args, name, None)
        if v is not None:
            train_cfg = TrainConfig(**{**train_cfg.to_dict(), name: v})
    if getattr(args, "seed", None) is not None:
        env_cfg = EnvConfig(**{**env_cfg.to_dict(), "seed": args.seed})
    return vehicle, env_cfg, train_cfg


def _snapshot(path: str, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    track = load_track(args.track)
    vehicle, env_cfg, train_cfg = _load_configs(args)
    out = _out_path(args.out)
    ckpt_dir = os.path.join(out, "checkpoints")

    initial_policy = None
    initial_step = 0
    if args.resume:
        ckpts = sorted(os.listdir(ckpt_dir)) if os.path.isdir(ckpt_dir) else []
        ckpts = [c for c in ckpts if c.endswith(".bin")]
        if not ckpts:
            raise UsageError(f"nothing to resume in {ckpt_dir}")
        path = os.path.join(ckpt_dir, ckpts[-1])
        initial_policy, header = load_checkpoint(path)
        initial_step = int(header["step"])
        print(f"resuming from {path} at step {initial_step}")

    os.makedirs(out, exist_ok=True)
    effective = {
        "track": os.path.abspath(args.track),
        "vehicle": vehicle.to_dict(),
        "env": env_cfg.to_dict(),
        "train": train_cfg.to_dict(),
    }
    _snapshot(os.path.join(out, "config.json"), effective)

    def env_factory(i: int) -> RaceEnv:
        cfg = EnvConfig(**{**env_cfg.to_dict(), "seed": env_cfg.seed + i})
        return RaceEnv(track, vehicle, cfg)

    def on_update(stats):
        lap = stats.get("last_eval_lap")
        print(f"update {stats['update']:5d}  steps {stats['step']:>10d}  "
              f"{stats['steps_per_s']:7.0f} steps/s  "
              f"mean_reward {stats['mean_reward']:+.4f}  "
              f"loss {stats['loss']:+.4f}", flush=True)

    telemetry_dir = os.path.join(out, "telemetry") if args.eval_telemetry else None
    result = train(train_cfg, env_factory, out_dir=out,
                   initial_policy=initial_policy, initial_step=initial_step,
                   on_update=on_update, telemetry_dir=telemetry_dir)
    print(f"done: {result.total_steps} steps, "
          f"{len(result.checkpoint_paths)} checkpoints, "
          f"best eval lap {result.best_eval}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    track = load_track(args.track)
    vehicle, env_cfg, _ = _load_configs(args)
    policy, header = load_checkpoint(args.checkpoint)
    env = RaceEnv(track, vehicle, env_cfg)
    if policy.spec.action_dim != env.action_dim:
        raise UsageError(
            f"checkpoint action_dim {policy.spec.action_dim} does not match "
            f"environment action_dim {env.action_dim} "
            f"(mode {env_cfg.actuation_mode})")
    out = _out_path(args.out) if args.out else None
    results = evaluate(policy, env, n_episodes=args.episodes,
                       deterministic=not args.stochastic,
                       max_steps=args.max_steps, collect_records=out is not None,
                       rng=np.random.default_rng(env_cfg.seed))
    print(f"{'episode':>8} {'lap_time[s]':>12} {'steps':>7} "
          f"{'reward':>10} termination")
    for i, ep in enumerate(results):
        lap = f"{ep.lap_time:.2f}" if ep.lap_time is not None else "-"
        print(f"{i:>8} {lap:>12} {ep.steps:>7} {ep.total_reward:>10.2f} "
              f"{ep.termination}")
    if out is not None:
        tdir = os.path.join(out, "telemetry")
        for i, ep in enumerate(results):
            tm.write_telemetry(ep.records, tdir, f"eval_ep{i:03d}",
                               lap_time=ep.lap_time, termination=ep.termination,
                               mode=env_cfg.actuation_mode)
        print(f"telemetry written to {tdir}")
    return 0


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    out = _out_path(args.out)
    os.makedirs(out, exist_ok=True)
    total_warnings = 0

    if args.learning_log:
        points, warn = tm.learning_curve(args.learning_log)
        total_warnings += warn
        tm.write_learning_curve_csv(points, os.path.join(out, "learning_curve.csv"))
        tm.plot_learning_curve(points, os.path.join(out, "learning_curve.svg"))
        print(f"learning curve: {len(points)} points "
              f"({warn} corrupt lines skipped)")

    for path in args.telemetry or []:
        records, warn = tm.read_telemetry(path)
        total_warnings += warn
        if not records:
            print(f"{path}: no parseable records ({warn} corrupt rows)")
            continue
        stem = os.path.splitext(os.path.basename(path))[0]
        env = tm.gg_envelope(records)
        tm.write_gg_csv(env, os.path.join(out, f"{stem}_gg.csv"))
        tm.plot_gg({stem: records}, os.path.join(out, f"{stem}_gg.svg"))
        tm.plot_lap_channels({stem: records}, os.path.join(out, f"{stem}_channels.svg"))
        print(f"{path}: {len(records)} records ({warn} corrupt rows), "
              f"peak combined {env.peak_combined:.3f} g")
        if args.segment:
            rep = tm.segment_report(records, args.segment[0], args.segment[1])
            tm.plot_lap_channels({stem: records},
                                 os.path.join(out, f"{stem}_segment.svg"),
                                 s_range=(rep.s_from, rep.s_to))
            print(f"  segment [{rep.s_from:.0f}, {rep.s_to:.0f}) m: "
                  f"{rep.direction} turn, min speed {rep.min_speed:.1f} m/s, "
                  f"max |steer| {rep.max_abs_steer:.2f}, "
                  f"inside torque {rep.inside_mean:+.3f} vs outside "
                  f"{rep.outside_mean:+.3f}"
                  + (" (outside > inside)" if rep.outside_exceeds_inside else ""))
        events = tm.slip_events(records)
        if events:
            mod = sum(1 for e in events if e.modulated)
            print(f"  slip events: {len(events)} ({mod} with torque modulation)")

    if args.compare:
        ra, wa = tm.read_telemetry(args.compare[0])
        rb, wb = tm.read_telemetry(args.compare[1])
        total_warnings += wa + wb
        name_a = os.path.splitext(os.path.basename(args.compare[0]))[0]
        name_b = os.path.splitext(os.path.basename(args.compare[1]))[0]
        tm.plot_lap_channels({name_a: ra, name_b: rb},
                             os.path.join(out, "compare_channels.svg"))
        tm.plot_gg({name_a: ra, name_b: rb}, os.path.join(out, "compare_gg.svg"))
        ea, eb = tm.gg_envelope(ra), tm.gg_envelope(rb)
        print(f"combined-g peaks [{name_a} vs {name_b}]:")
        for label, va, vb in [
                ("braking+turning", ea.peak_braking_turning, eb.peak_braking_turning),
                ("accel+turning", ea.peak_accel_turning, eb.peak_accel_turning),
                ("pure lateral", ea.peak_pure_lateral, eb.peak_pure_lateral)]:
            ratio = va / vb if vb > 0 else float("inf")
            print(f"  {label:>16}: {va:.3f} g vs {vb:.3f} g "
                  f"(ratio {ratio:.2f})")

    if total_warnings:
        print(f"warnings: {total_warnings} corrupt rows/lines skipped")
    return 0


# ---------------------------------------------------------------------------
# track tooling
# ---------------------------------------------------------------------------

def cmd_track(args) -> int:
    if args.track_cmd == "generate":
        if args.kind == "oval":
            track = generate_circuit("oval", straight_length=args.straight,
                                     corner_radius=args.radius, width=args.width)
        elif args.kind == "paper_scale":
            track = generate_circuit("paper_scale", width=args.width,
                                     min_length=args.min_length)
        elif args.kind == "straight":
            track = generate_straight(args.straight, args.width)
        else:  # pragma: no cover - argparse restricts choices
            raise UsageError(f"unknown kind {args.kind}")
        save_track(track, _out_path(args.out))
        print(f"wrote {args.out}: {track.name}, L = {track.total_length:.2f} m, "
              f"{track.points.shape[0]} points")
        return 0

    if args.track_cmd == "validate":
        problems = validate_track_file(args.path)
        if problems:
            for p in problems:
                print(f"INVALID: {p}")
            return 1
        print("OK")
        return 0

    if args.track_cmd == "info":
        track = load_track(args.path)
        widths = track.points[:, 2] * 2.0
        k = track.curvature()
        k_max = float(k.max())
        print(f"name:        {track.name}")
        print(f"closed:      {track.closed}")
        print(f"length:      {track.total_length:.2f} m")
        print(f"points:      {track.points.shape[0]}")
        print(f"width:       min {widths.min():.2f}  mean {widths.mean():.2f}  "
              f"max {widths.max():.2f} m")
        print(f"curvature:   max {k_max:.5f} 1/m "
              f"(min radius {1.0 / k_max:.1f} m)" if k_max > 1e-9 else
              "curvature:   straight")
        return 0
    raise UsageError("missing track subcommand")  # pragma: no cover


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    p = _Parser(prog="torquelab",
                description="four-wheel-torque racecar RL laboratory")
    sub = p.add_subparsers(dest="cmd", required=True)

    t = sub.add_parser("train", help="train a PPO agent")
    t.add_argument("--track", required=True)
    t.add_argument("--vehicle", help="vehicle params JSON")
    t.add_argument("--env-config", help="environment config JSON")
    t.add_argument("--train-config", help="training config JSON")
    t.add_argument("--mode", choices=[ACTIVE_4WD, PASSIVE_4WD])
    t.add_argument("--out", required=True)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--n-envs", type=int)
    t.add_argument("--rollout-horizon", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--eval-interval", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", action="store_true")
    t.add_argument("--eval-telemetry", action="store_true",
                   help="write telemetry CSVs for evaluation episodes")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--track", required=True)
    e.add_argument("--vehicle")
    e.add_argument("--env-config")
    e.add_argument("--mode", choices=[ACTIVE_4WD, PASSIVE_4WD])
    e.add_argument("--episodes", type=int, default=1)
    e.add_argument("--max-steps", type=int, default=2400)
    e.add_argument("--stochastic", action="store_true")
    e.add_argument("--seed", type=int)
    e.add_argument("--out", help="directory for telemetry CSVs")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="lap and learning-curve analysis")
    a.add_argument("--telemetry", nargs="*", help="telemetry CSV files")
    a.add_argument("--learning-log", help="training log (JSONL)")
    a.add_argument("--compare", nargs=2, metavar=("A", "B"),
                   help="two telemetry CSVs to compare")
    a.add_argument("--segment", nargs=2, type=float, metavar=("S0", "S1"),
                   help="centerline range for a corner report")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)

    k = sub.add_parser("track", help="track generation and inspection")
    ksub = k.add_subparsers(dest="track_cmd", required=True)
    g = ksub.add_parser("generate")
    g.add_argument("kind", choices=["oval", "paper_scale", "straight"])
    g.add_argument("--straight", type=float, default=100.0)
    g.add_argument("--radius", type=float, default=30.0)
    g.add_argument("--width", type=float, default=10.0)
    g.add_argument("--min-length", type=float, default=3900.0)
    g.add_argument("--out", required=True)
    v = ksub.add_parser("validate")
    v.add_argument("path")
    i = ksub.add_parser("info")
    i.add_argument("path")
    k.set_defaults(func=cmd_track)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line pipeline: gen, train, map, localize, eval, sweep, bench.

Configuration is a flat key=value namespace (see CONFIG_DEFAULTS). Values
come from, in increasing precedence: built-in defaults, a config file
(--config, one `key = value` per line, '#' comments), repeated --set
key=value overrides, then dedicated flags such as --epochs. Unknown keys
are rejected. All randomness derives from the --seed value, split per
stage with numpy's SeedSequence, so every command is deterministic.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import ape, kernels, mcl, net, sparse_map, synth, train
from .signal_io import read_trial, write_trial
from .trajlog import read_trajectory, write_trajectory

CONFIG_DEFAULTS: dict[str, float | int] = {
    "world.arena_w": 3.5,
    "world.arena_h": 7.0,
    "world.n_regions": 8,
    "world.elevation_amp": 0.08,
    "world.elevation_waves": 6,
    "world.mod_depth": 0.8,
    "world.mod_waves": 10,
    "world.noise_frac": 0.02,
    "world.step_length": 0.15,
    "world.body_height": 0.42,
    "odom.trans_drift_per_m": 0.03,
    "odom.yaw_drift_per_rad": 0.02,
    "odom.trans_noise_std": 0.002,
    "odom.yaw_noise_std": 0.002,
    "gen.n_trials": 3,
    "gen.lane_gap": 0.35,
    "gen.waypoints": 7,
    "net.embed_dim": 256,
    "net.d_model": 16,
    "net.n_heads": 2,
    "net.d_ff": 8,
    "net.n_encoder_layers": 1,
    "train.epochs": 200,
    "train.batch_size": 128,
    "train.margin": 0.2,
    "train.d_thr": 0.25,
    "train.lr": 5e-4,
    "train.lr_decay": 0.01,
    "train.weight_decay": 2e-4,
    "map.cell_size": 0.25,
    "mcl.n_particles": 500,
    "mcl.trans_noise_per_m": 0.1,
    "mcl.yaw_noise_per_rad": 0.05,
    "mcl.out_of_plane_frac": 0.2,
    "mcl.init_xy_std": 0.1,
    "mcl.init_yaw_std": 0.05,
    "mcl.resample_threshold": 0.5,
    "mm.sigma_l": 0.4,
    "mm.sigma_2d": 0.4,
    "mm.sigma_e": 0.01,
    "mm.d_t": 0.25,
    "mm.p_min": 0.001,
    "sweep.epochs": 40,
}


def _coerce(key: str, raw: str):
    default = CONFIG_DEFAULTS[key]
    try:
        return int(raw) if isinstance(default, int) else float(raw)
    except ValueError:
        kind = "integer" if isinstance(default, int) else "number"
        raise ValueError(f"config key {key} expects an {kind}, got {raw!r}") from None


def _parse_config_file(path: str) -> dict:
    out = {}
    with open(path) as f:
        for ln, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected key = value")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in CONFIG_DEFAULTS:
                raise ValueError(f"{path}:{ln}: unknown config key {key!r}")
            out[key] = _coerce(key, raw)
    return out


def build_config(args) -> dict:
    cfg = dict(CONFIG_DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(_parse_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        key = key.strip()
        if key not in CONFIG_DEFAULTS:
            raise ValueError(f"unknown config key {key!r}")
        cfg[key] = _coerce(key, raw.strip())
    return cfg


def _section(cfg: dict, prefix: str, cls, **extra):
    kwargs = {
        k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith(prefix + ".")
    }
    kwargs.update(extra)
    return cls(**kwargs)


def _net_config(cfg: dict, seed: int, embed_dim: int | None = None) -> net.NetConfig:
    return net.NetConfig(
        d_model=cfg["net.d_model"],
        n_heads=cfg["net.n_heads"],
        d_ff=cfg["net.d_ff"],
        n_encoder_layers=cfg["net.n_encoder_layers"],
        embed_dim=embed_dim if embed_dim is not None else cfg["net.embed_dim"],
        seed=seed,
    )


def _stage_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen(args) -> int:
    cfg = build_config(args)
    world_cfg_fields = {
        k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("world.")
    }
    n_trials = args.trials if args.trials is not None else cfg["gen.n_trials"]
    if n_trials < 0:
        raise ValueError("--trials must be >= 0")
    seeds = _stage_seeds(args.seed, 2 + 2 * n_trials)
    world_cfg = synth.WorldConfig(seed=seeds[0], **world_cfg_fields)
    world = synth.generate_world(world_cfg)
    os.makedirs(args.out, exist_ok=True)

    world_path = os.path.join(args.out, "arena.world.json")
    synth.save_world(world, world_path)
    print(f"wrote {world_path}")

    if args.mapping_passes < 1:
        raise ValueError("--mapping-passes must be >= 1")
    quiet = synth.OdometryNoiseConfig()
    route = synth.lawnmower_route(world_cfg, lane_gap=cfg["gen.lane_gap"])
    for j in range(args.mapping_passes):
        # repeated walks of the same route differ only in signal noise,
        # which is what trains noise-invariant embeddings
        name = "mapping" if j == 0 else f"mapping_{j:02d}"
        mapping = synth.simulate_trial(world, route, quiet, seeds[1] + j, name)
        mapping_path = os.path.join(args.out, f"{name}.trial.jsonl")
        write_trial(mapping, mapping_path)
        print(f"wrote {mapping_path} ({len(mapping.events)} events)")

    odom_cfg = _section(cfg, "odom", synth.OdometryNoiseConfig)
    for i in range(n_trials):
        route = synth.random_route(world_cfg, seeds[2 + 2 * i], cfg["gen.waypoints"])
        trial = synth.simulate_trial(world, route, odom_cfg, seeds[3 + 2 * i], f"loc_{i:02d}")
        path = os.path.join(args.out, f"loc_{i:02d}.trial.jsonl")
        write_trial(trial, path)
        print(f"wrote {path} ({len(trial.events)} events)")
    return 0


def cmd_train(args) -> int:
    cfg = build_config(args)
    trials = [read_trial(p) for p in args.data]
    net_seed, fit_seed = _stage_seeds(args.seed, 2)
    net_cfg = _net_config(cfg, net_seed)
    epochs = args.epochs if args.epochs is not None else cfg["train.epochs"]
    train_cfg = _section(cfg, "train", train.TrainConfig, seed=fit_seed, epochs=epochs)
    result = train.fit(trials, net_cfg, train_cfg)
    net.save_params(result.params, args.out)
    log_path = os.path.splitext(args.out)[0] + ".loss.csv"
    result.write_log(log_path)
    print(f"wrote {args.out} ({net.param_count(net_cfg)} parameters)")
    print(f"wrote {log_path} (final loss {result.epoch_losses[-1]:.6g})")
    return 0


def cmd_map(args) -> int:
    cfg = build_config(args)
    trial = read_trial(args.trial)
    params = net.load_params(args.params)
    m = sparse_map.build_map(trial, params, cell_size=cfg["map.cell_size"])
    sparse_map.save_map(m, args.out)
    print(f"wrote {args.out} ({len(m)} entries, embed_dim {m.embed_dim})")
    return 0


def cmd_localize(args) -> int:
    cfg = build_config(args)
    trial = read_trial(args.trial)
    m = sparse_map.load_map(args.map, cell_size=cfg["map.cell_size"])
    params = net.load_params(args.params)
    mcl_cfg = _section(cfg, "mcl", mcl.MclConfig, seed=args.seed)
    mm_cfg = _section(
        cfg, "mm", mcl.MeasurementModelConfig, use_elevation=args.variant == "hl-st"
    )
    log = mcl.run_localization(trial, m, params, mcl_cfg, mm_cfg)
    write_trajectory(log, args.out)
    print(f"wrote {args.out} ({len(log)} records, variant {args.variant})")
    return 0


def cmd_eval(args) -> int:
    log = read_trajectory(args.log, trial_id=args.trial_id)
    summary = ape.ape(log)
    text = json.dumps(summary.to_dict(), indent=2)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    if not sizes:
        raise ValueError("--sizes must list at least one embedding size")
    mapping = read_trial(args.mapping)
    trials = [read_trial(p) for p in args.trials]
    net_seed, fit_seed = _stage_seeds(args.seed, 2)
    epochs = args.epochs if args.epochs is not None else cfg["sweep.epochs"]
    rows = []
    for size in sizes:
        net_cfg = _net_config(cfg, net_seed, embed_dim=size)
        train_cfg = _section(cfg, "train", train.TrainConfig, seed=fit_seed, epochs=epochs)
        result = train.fit(mapping, net_cfg, train_cfg)
        m = sparse_map.build_map(mapping, result.params, cell_size=cfg["map.cell_size"])
        mcl_cfg = _section(cfg, "mcl", mcl.MclConfig, seed=args.seed)
        mm_cfg = _section(cfg, "mm", mcl.MeasurementModelConfig, use_elevation=True)
        for trial in trials:
            log = mcl.run_localization(trial, m, result.params, mcl_cfg, mm_cfg)
            mean_t2d = ape.ape(log).to_dict()["t2d"]["mean"]
            rows.append((size, trial.trial_id, mean_t2d))
            print(f"embed_dim {size} trial {trial.trial_id}: mean t2d {mean_t2d:.4f} m")
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["embed_dim", "trial", "mean_t2d"])
        for size, tid, v in rows:
            w.writerow([size, tid, f"{v:.10g}"])
    print(f"wrote {args.out}")
    return 0


def cmd_bench(args) -> int:
    cfg = build_config(args)
    if args.params:
        params = net.load_params(args.params)
    else:
        params = net.init_params(_net_config(cfg, _stage_seeds(args.seed, 1)[0]))
    n = args.n
    if n < 1:
        raise ValueError("--n must be >= 1")
    rng = np.random.default_rng(args.seed)
    samples = rng.standard_normal((n, params.config.seq_len, params.config.in_dim))
    warmup = min(50, n)
    for i in range(warmup):
        net.forward(params, samples[i : i + 1], mode="infer")
    times = np.empty(n)
    for i in range(n):
        t0 = time.perf_counter()
        net.forward(params, samples[i : i + 1], mode="infer")
        times[i] = time.perf_counter() - t0
    report = {
        "samples": n,
        "warmup_excluded": warmup,
        "mean_ms": float(times.mean() * 1e3),
        "std_ms": float(times.std() * 1e3),
        "embed_dim": params.config.embed_dim,
        "kernel_backend": kernels.BACKEND,
    }
    text = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    print(text)
    return 0


# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="top-level seed (default 0)")
    p.add_argument("--config", help="key = value config file")
    p.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="override one config key"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hapticloc",
        description="Haptic localization pipeline: synthetic data, embedding "
        "training, sparse maps, particle-filter localization, evaluation.",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen", help="generate a world, a mapping trial, and localization trials")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--trials", type=int, default=None, help="localization trial count")
    p.add_argument("--mapping-passes", type=int, default=1,
                   help="walks of the mapping route, fresh noise each (default 1)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the embedding network on mapping trials")
    _add_common(p)
    p.add_argument("--data", nargs="+", required=True, help="training .trial.jsonl files")
    p.add_argument("--out", required=True, help="output .stnet parameter file")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("map", help="build a sparse haptic map from a mapping trial")
    _add_common(p)
    p.add_argument("--trial", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True, help="output .hmap file")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("localize", help="replay a trial through the particle filter")
    _add_common(p)
    p.add_argument("--trial", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--variant", choices=["hl-t", "hl-st"], default="hl-st")
    p.add_argument("--out", required=True, help="output trajectory CSV")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("eval", help="absolute pose error summary of a trajectory log")
    _add_common(p)
    p.add_argument("--log", required=True, help="trajectory CSV")
    p.add_argument("--trial-id", default=None)
    p.add_argument("--out", default=None, help="summary JSON path (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="embedding-size sweep: train, map, localize, evaluate")
    _add_common(p)
    p.add_argument("--mapping", required=True, help="mapping .trial.jsonl")
    p.add_argument("--trials", nargs="+", required=True, help="localization trials")
    p.add_argument("--sizes", required=True, help="comma-separated embedding sizes")
    p.add_argument("--epochs", type=int, default=None, help="override sweep.epochs")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="single-sample inference latency")
    _add_common(p)
    p.add_argument("--params", default=None, help=".stnet file (default: fresh init)")
    p.add_argument("--n", type=int, default=10000, help="sample count (default 10000)")
    p.add_argument("--out", default=None, help="write the JSON report here too")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001 - single reporting point for the CLI
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

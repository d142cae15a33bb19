"""Command-line operator surface.

Subcommands: synth, train-spatial, train-traj, predict, eval, density,
mask-map, verify. Configuration comes from an optional JSON file of flat
dotted keys, overridable with --set key=value. Exit codes: 0 success,
1 validation error, 2 numerical failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from .dataio import (
    SynthConfig,
    load_scenario,
    mask_map_by_radius,
    save_scenario,
    synth_generate,
    to_target_frame,
    vectorize,
)
from .encoders import (
    EncoderConfig,
    forward_spatial,
    init_spatial_params,
    init_trajectory_params,
    load_spatial_model,
    load_trajectory_model,
    save_model,
)
from .errors import (
    GnevaError,
    HorizonMismatch,
    MissingHorizonState,
    ParseError,
    RegionTooLarge,
    ValidationError,
)
from .metrics import displacement_metrics
from .sampling import NmsConfig, generate_candidates, scene_region
from .trajectory import (
    load_predictions,
    predict_topk,
    predictions_to_world,
    save_predictions,
)
from .training import TrainConfig, train_spatial, train_trajectory
from . import verify as verify_suites

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_USAGE = 64


def worker_count() -> int:
    """Thread cap from GNEVA_THREADS; defaults to the logical core count."""
    raw = os.environ.get("GNEVA_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError as exc:
            raise ValidationError(f"GNEVA_THREADS must be an integer, got {raw!r}") from exc
    return os.cpu_count() or 1


def load_run_config(path: str | None, sets: list[str]) -> dict:
    """Flat dotted-key config from JSON plus --set overrides."""
    config: dict = {}
    if path:
        try:
            config.update(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
    for item in sets:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            config[key] = json.loads(raw)
        except json.JSONDecodeError:
            config[key] = raw  # bare strings pass through
    return config


def _dataclass_from_config(cls, prefix: str, config: dict):
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in config.items():
        if not key.startswith(prefix + "."):
            continue
        name = key[len(prefix) + 1 :]
        if name not in names:
            raise ValidationError(f"unknown config key {key!r}")
        kwargs[name] = value
    return cls(**kwargs)


def _load_scenario_paths(path: str) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.json"))
        if not files:
            raise ValidationError(f"no scenario files in {path}")
        return files
    if not p.exists():
        raise ValidationError(f"scenario path {path} does not exist")
    return [p]


def cmd_synth(args, config) -> int:
    synth_cfg = SynthConfig(n=args.n, seed=args.seed, H=args.H, T=args.T, dt=args.dt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenarios = synth_generate(synth_cfg, args.kind)
    for s in scenarios:
        save_scenario(s, out / f"{s.scenario_id}.json")
    print(f"wrote {len(scenarios)} scenarios to {out}")
    return EXIT_OK


def cmd_train_spatial(args, config) -> int:
    enc_cfg = _dataclass_from_config(EncoderConfig, "encoder", config)
    train_cfg = _dataclass_from_config(TrainConfig, "train", config)
    scenes = [to_target_frame(load_scenario(f))[0] for f in _load_scenario_paths(args.data)]
    tape = init_spatial_params(enc_cfg, seed=train_cfg.seed)
    tape, history = train_spatial(scenes, tape, train_cfg, enc_cfg)
    save_model(args.out, tape, enc_cfg)
    history_path = args.history or (str(args.out) + ".history.csv")
    history.write_csv(history_path)
    print(f"trained on {len(scenes)} scenes; final loss {history.losses[-1]:.4f}")
    return EXIT_OK


def cmd_train_traj(args, config) -> int:
    spatial_tape, enc_cfg = load_spatial_model(args.spatial_model)
    train_cfg = _dataclass_from_config(TrainConfig, "train", config)
    scenes = [to_target_frame(load_scenario(f))[0] for f in _load_scenario_paths(args.data)]
    traj_tape = init_trajectory_params(enc_cfg, horizon=scenes[0].T, seed=train_cfg.seed)
    traj_tape, history = train_trajectory(scenes, spatial_tape, traj_tape, train_cfg, enc_cfg)
    save_model(args.out, traj_tape, enc_cfg)
    history_path = args.history or (str(args.out) + ".history.csv")
    history.write_csv(history_path)
    print(f"trained on {len(scenes)} scenes; final loss {history.losses[-1]:.4f}")
    return EXIT_OK


def cmd_predict(args, config) -> int:
    spatial_tape, enc_cfg = load_spatial_model(args.spatial_model)
    traj_tape, _, _ = load_trajectory_model(args.traj_model)
    nms_cfg = NmsConfig(radius=args.radius, iou_threshold=args.iou, k=args.k)
    paths = _load_scenario_paths(args.scenario)

    def predict_one(path: Path):
        scenario = load_scenario(path)
        projected, transform = to_target_frame(scenario)
        topk = predict_topk(
            projected, spatial_tape, traj_tape, nms_cfg, enc_cfg, spacing=args.spacing
        )
        return scenario.scenario_id, predictions_to_world(topk, transform)

    if len(paths) == 1:
        results = [predict_one(paths[0])]
    else:
        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            results = list(pool.map(predict_one, paths))

    out = Path(args.out)
    if len(paths) == 1 and not out.is_dir() and out.suffix == ".json":
        save_predictions(out, results[0][0], results[0][1])
    else:
        out.mkdir(parents=True, exist_ok=True)
        for scenario_id, preds in results:
            save_predictions(out / f"{scenario_id}.json", scenario_id, preds)
    print(f"predicted {len(results)} scenario(s)")
    return EXIT_OK


def cmd_eval(args, config) -> int:
    pred_paths = _load_scenario_paths(args.pred)
    predictions = {}
    for p in pred_paths:
        scenario_id, preds = load_predictions(p)
        predictions[scenario_id] = preds
    data_paths = _load_scenario_paths(args.data)
    pred_sets, gts = [], []
    for path in data_paths:
        scenario = load_scenario(path)
        if scenario.scenario_id not in predictions:
            raise ValidationError(f"no predictions for scenario {scenario.scenario_id!r}")
        pred_sets.append([p.waypoints for p in predictions[scenario.scenario_id]])
        gts.append(scenario.future_waypoints())
    report = displacement_metrics(pred_sets, gts, k=args.k)
    print(report.to_text())
    if args.out:
        Path(args.out).write_text(report.to_json())
    return EXIT_OK


def emit_density_grid(spatial_tape, enc_cfg, scenario, spacing: float, out_path) -> int:
    """Write the weighted predictive log density over the candidate grid.

    CSV columns x,y,log_density with coordinates mapped back to the world
    frame; byte-identical across runs for identical inputs.
    """
    projected, transform = to_target_frame(scenario)
    fw = forward_spatial(vectorize(projected, enc_cfg), spatial_tape, enc_cfg)
    region = scene_region(projected)
    candidates = generate_candidates(fw.mixture(), fw.weights.value, region, spacing)
    inverse = transform.inverse()
    lines = ["x,y,log_density"]
    for c in candidates:
        wx, wy = inverse.apply_points(c.location.reshape(1, 2))[0]
        lines.append(f"{wx:.17g},{wy:.17g},{c.log_prob:.17g}")
    Path(out_path).write_text("\n".join(lines) + "\n")
    return len(candidates)


def cmd_density(args, config) -> int:
    spatial_tape, enc_cfg = load_spatial_model(args.spatial_model)
    scenario = load_scenario(args.scenario)
    n_cells = emit_density_grid(spatial_tape, enc_cfg, scenario, args.spacing, args.out)
    print(f"wrote {n_cells} grid cells to {args.out}")
    return EXIT_OK


def cmd_mask_map(args, config) -> int:
    scenario = load_scenario(args.scenario)
    projected, _ = to_target_frame(scenario)
    radius = math.inf if args.radius == "inf" else float(args.radius)
    kept_ids = {p.id for p in mask_map_by_radius(projected, radius).map}
    scenario.map = [p for p in scenario.map if p.id in kept_ids]
    save_scenario(scenario, args.out)
    print(f"kept {len(scenario.map)} map polylines within radius {radius}")
    return EXIT_OK


def cmd_verify(args, config) -> int:
    results = verify_suites.run_all(fast=args.fast)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} oracle suites passed")
    return EXIT_OK if not failed else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gneva", description="Goal-based motion prediction pipeline"
    )
    parser.add_argument("--config", help="JSON config file with flat dotted keys")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", help="config override"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scenarios")
    p.add_argument("--kind", required=True, choices=["straight", "turn", "merge"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--H", type=int, default=10)
    p.add_argument("--T", type=int, default=30)
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-spatial", help="train the goal distribution model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="loss history CSV path")
    p.set_defaults(func=cmd_train_spatial)

    p = sub.add_parser("train-traj", help="train the trajectory completion network")
    p.add_argument("--data", required=True)
    p.add_argument("--spatial-model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="loss history CSV path")
    p.set_defaults(func=cmd_train_traj)

    p = sub.add_parser("predict", help="predict top-k trajectories")
    p.add_argument("--spatial-model", required=True)
    p.add_argument("--traj-model", required=True)
    p.add_argument("--scenario", required=True, help="scenario file or directory")
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--iou", type=float, default=0.0)
    p.add_argument("--spacing", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="evaluate predictions against ground truth")
    p.add_argument("--pred", required=True, help="prediction file or directory")
    p.add_argument("--data", required=True, help="scenario file or directory")
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--out", help="write the report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("density", help="export the predictive density grid as CSV")
    p.add_argument("--spatial-model", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--spacing", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("mask-map", help="drop map polylines beyond a radius")
    p.add_argument("--scenario", required=True)
    p.add_argument("--radius", required=True, help="meters, or 'inf'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask_map)

    p = sub.add_parser("verify", help="run the Monte-Carlo and brute-force oracle suites")
    p.add_argument("--fast", action="store_true", help="reduced sample counts")
    p.set_defaults(func=cmd_verify)

    return parser


def run_command(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage; the contract wants 64.
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        config = load_run_config(args.config, args.set)
        return args.func(args, config)
    except (ValidationError, ParseError, MissingHorizonState, HorizonMismatch, RegionTooLarge) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except GnevaError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()

"""Command-line entry point: collection campaigns, model evaluation, replay, merge.

Every run is deterministic under a fixed seed and fixed configs. Exit codes:
0 success, 2 usage error, 3 configuration/parse error, 4 domain or
assertion failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import acquisition, experiments, plant, vision
from .acquisition import DatasetError
from .kinematics import CapacityError, KinematicTable
from .plant import MAX_CUMULATIVE_MS, PlantError, ScheduleError
from .vision import GeometryError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_DOMAIN = 4


class ConfigError(Exception):
    """Configuration file failed to load or validate."""


def _load_plant(path: str | None) -> plant.PlantConfig:
    if path is None:
        return plant.PlantConfig()
    try:
        return plant.load_plant_config(path)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _load_cameras(path: str | None):
    if path is None:
        return vision.default_stereo_rig()
    try:
        return vision.load_cameras(path)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _load_datasets(paths) -> acquisition.Dataset:
    datasets = [acquisition.load(p) for p in paths]
    return acquisition.merge(*datasets)


def _positive_int(value: str) -> int:
    number = int(value)
    if number <= 0:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return number


def _seed(value: str) -> int:
    number = int(value)
    if number < 0:
        raise argparse.ArgumentTypeError("seed must be nonnegative")
    return number


def _t_max(value: str) -> float:
    number = float(value)
    if not 0 < number <= MAX_CUMULATIVE_MS:
        raise argparse.ArgumentTypeError(
            f"t-max must be in (0, {MAX_CUMULATIVE_MS:.0f}] ms; longer openings puncture bladders"
        )
    return number


def _failure_prob(value: str) -> float:
    number = float(value)
    if not 0.0 <= number < 1.0:
        raise argparse.ArgumentTypeError("failure-prob must be in [0, 1)")
    return number


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softarm",
        description="Soft pneumatic arm: dataset campaigns and table-based kinematics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_collect = sub.add_parser("collect", help="run an automated collection campaign")
    p_collect.add_argument("--n", type=_positive_int, required=True, help="samples to attempt")
    p_collect.add_argument("--t-max", type=_t_max, default=1000.0, help="per-session T_max in ms")
    p_collect.add_argument("--seed", type=_seed, required=True)
    p_collect.add_argument("--failure-prob", type=_failure_prob, default=0.05)
    p_collect.add_argument("--pixel-noise-sd", type=float, default=0.5)
    p_collect.add_argument("--temperature-c", type=float, default=20.0)
    p_collect.add_argument("--session-id", default=None)
    p_collect.add_argument("--plant-config", default=None)
    p_collect.add_argument("--cameras", default=None)
    p_collect.add_argument("--out", default=".", help="output directory")
    p_collect.add_argument("--name", default="dataset", help="dataset file base name")

    p_eval = sub.add_parser("eval", help="run a validation experiment")
    p_eval.add_argument(
        "experiment", choices=["fk", "ik", "bending", "workspace", "payload"]
    )
    p_eval.add_argument("--dataset", action="append", default=[], help="dataset CSV (repeatable)")
    p_eval.add_argument("--plant-config", default=None)
    p_eval.add_argument("--trials", type=_positive_int, default=40)
    p_eval.add_argument("--seed", type=_seed, default=0)
    p_eval.add_argument("--region", choices=["full", "restricted"], default="full")
    p_eval.add_argument("--tilt-limit", type=float, default=10.0)
    p_eval.add_argument("--payloads", default="55,90,130,155", help="comma-separated grams")
    p_eval.add_argument("--points", type=_positive_int, default=10)
    p_eval.add_argument("--segments", default="1,2,3", help="bending sweep segment counts")
    p_eval.add_argument("--step-ms", type=float, default=100.0)
    p_eval.add_argument("--out", default=".", help="output directory")

    p_replay = sub.add_parser("replay", help="drive the plant from a valve schedule")
    p_replay.add_argument("--schedule", required=True)
    p_replay.add_argument("--plant-config", default=None)
    p_replay.add_argument("--payload", type=float, default=0.0)
    p_replay.add_argument("--out", default="trace.csv")

    p_merge = sub.add_parser("merge", help="union datasets onto a common T_max")
    p_merge.add_argument("inputs", nargs="+", help="dataset CSV files")
    p_merge.add_argument("--out", required=True, help="merged dataset CSV path")

    return parser


def cmd_collect(args) -> int:
    plant_config = _load_plant(args.plant_config)
    cameras = _load_cameras(args.cameras)
    started = time.perf_counter()
    dataset = acquisition.collect(
        plant_config,
        cameras,
        n_samples=args.n,
        t_max_ms=args.t_max,
        seed=args.seed,
        failure_prob=args.failure_prob,
        pixel_noise_sd=args.pixel_noise_sd,
        temperature_c=args.temperature_c,
        session_id=args.session_id,
    )
    elapsed = time.perf_counter() - started
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{args.name}.csv"
    acquisition.save(dataset, path)
    print(f"wrote {path} ({len(dataset.samples)} samples)")
    print(
        f"attempted {args.n}, usable {len(dataset.samples)}, "
        f"discarded {dataset.discarded_count}"
    )
    print(f"total time {elapsed:.2f} s, time per sample {elapsed / args.n:.4f} s")
    return EXIT_OK


def _audit_stats(stats: experiments.ErrorStats, records, key: str = "error_mm") -> None:
    recomputed = experiments.ErrorStats.from_errors([r[key] for r in records])
    if recomputed != stats:
        raise AssertionError("statistics do not match the raw per-trial records")


def cmd_eval(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    plant_config = _load_plant(args.plant_config)

    if args.experiment == "bending":
        counts = [int(v) for v in args.segments.split(",") if v]
        records = []
        endpoints = {}
        for n in counts:
            sweep = experiments.bending_sweep(plant_config, n_segments=n, step_ms=args.step_ms)
            endpoints[str(n)] = sweep[-1][1]
            records.extend(
                {"segments": n, "cumulative_ms": t, "bend_deg": phi} for t, phi in sweep
            )
        experiments.write_records_csv(out_dir / "bending_records.csv", records)
        experiments.write_stats_json(
            out_dir / "bending_stats.json", {"endpoint_deg": endpoints}
        )
        experiments.write_records_csv(out_dir / "bending_plot.csv", records)
        for n in counts:
            angles = [r["bend_deg"] for r in records if r["segments"] == n]
            if any(b < a - 1e-9 for a, b in zip(angles, angles[1:])):
                raise AssertionError(f"bending sweep not monotone for {n} segments")
        print(f"bending endpoints (deg): {endpoints}")
        return EXIT_OK

    if not args.dataset:
        raise DatasetError("this experiment needs at least one --dataset")
    dataset = _load_datasets(args.dataset)

    if args.experiment == "workspace":
        summary = experiments.workspace_scan(dataset)
        experiments.write_stats_json(out_dir / "workspace_stats.json", {"workspace": summary})
        records = [
            {
                "id": i,
                **dict(zip(("x_mm", "y_mm", "z_mm"), s.position)),
                **dict(zip(("yaw_deg", "pitch_deg", "roll_deg"), s.euler)),
            }
            for i, s in enumerate(dataset.samples)
        ]
        experiments.write_records_csv(out_dir / "workspace_records.csv", records)
        bounds = [
            {"axis": axis, "min": summary.position_min[i], "max": summary.position_max[i]}
            for i, axis in enumerate(("x_mm", "y_mm", "z_mm"))
        ]
        experiments.write_records_csv(out_dir / "workspace_plot.csv", bounds)
        extents = tuple(round(v, 2) for v in summary.extents_mm)
        print(f"workspace extents (mm): {extents}")
        return EXIT_OK

    table = KinematicTable.from_dataset(dataset)
    if args.experiment == "fk":
        stats, records = experiments.fk_validation(
            plant_config, table, n_trials=args.trials, seed=args.seed
        )
        _audit_stats(stats, records)
        experiments.write_records_csv(out_dir / "fk_records.csv", records)
        experiments.write_stats_json(out_dir / "fk_stats.json", {"fk": stats})
        experiments.write_histogram_csv(
            out_dir / "fk_hist.csv", [r["error_mm"] for r in records]
        )
        print(f"fk: mean {stats.mean:.3f} mm, median {stats.median:.3f} mm, sd {stats.std:.3f} mm")
        return EXIT_OK

    if args.experiment == "ik":
        stats, records = experiments.ik_validation(
            plant_config,
            table,
            n_trials=args.trials,
            seed=args.seed,
            region=args.region,
            tilt_limit_deg=args.tilt_limit,
        )
        _audit_stats(stats, records)
        experiments.write_records_csv(out_dir / "ik_records.csv", records)
        experiments.write_stats_json(out_dir / "ik_stats.json", {f"ik_{args.region}": stats})
        experiments.write_histogram_csv(
            out_dir / "ik_hist.csv", [r["error_mm"] for r in records]
        )
        print(
            f"ik ({args.region}): mean {stats.mean:.3f} mm, median {stats.median:.3f} mm, "
            f"sd {stats.std:.3f} mm"
        )
        return EXIT_OK

    # payload
    payloads = [float(v) for v in args.payloads.split(",") if v]
    stats_by_payload, records = experiments.payload_eval(
        plant_config, table, payloads_g=payloads, n_points=args.points, seed=args.seed
    )
    for weight, stats in stats_by_payload.items():
        _audit_stats(stats, [r for r in records if r["payload_g"] == weight])
    experiments.write_records_csv(out_dir / "payload_records.csv", records)
    experiments.write_stats_json(
        out_dir / "payload_stats.json",
        {format(w, ".9g"): s for w, s in stats_by_payload.items()},
    )
    experiments.write_quartiles_csv(out_dir / "payload_plot.csv", stats_by_payload)
    for weight in payloads:
        print(f"payload {weight:g} g: mean error {stats_by_payload[weight].mean:.3f} mm")
    return EXIT_OK


def cmd_replay(args) -> int:
    plant_config = _load_plant(args.plant_config)
    with open(args.schedule, "r", encoding="utf-8") as fh:
        commands = plant.parse_schedule(fh.read())
    trace = plant.execute_schedule(plant_config, commands, payload_g=args.payload)
    records = []
    for line_no, (command, _, pose) in enumerate(trace, start=1):
        yaw, pitch, roll = vision.euler_from_rotation(pose.orientation)
        records.append(
            {
                "step": line_no,
                "command": command[0],
                "bladder": command[1] if len(command) > 1 else "",
                "duration_ms": command[2] if len(command) > 2 else "",
                "x_mm": float(pose.position[0]),
                "y_mm": float(pose.position[1]),
                "z_mm": float(pose.position[2]),
                "yaw_deg": yaw,
                "pitch_deg": pitch,
                "roll_deg": roll,
            }
        )
    experiments.write_records_csv(args.out, records)
    print(f"wrote {args.out} ({len(records)} steps)")
    return EXIT_OK


def cmd_merge(args) -> int:
    merged = _load_datasets(args.inputs)
    acquisition.save(merged, args.out)
    print(
        f"wrote {args.out} ({len(merged.samples)} samples from "
        f"{len(merged.sessions)} sessions, t_max {merged.t_max_ms:g} ms)"
    )
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "collect": cmd_collect,
        "eval": cmd_eval,
        "replay": cmd_replay,
        "merge": cmd_merge,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, DatasetError, ScheduleError, json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (PlantError, CapacityError, GeometryError, experiments.UndefinedAngleError,
            AssertionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())

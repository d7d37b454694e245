"""Desk-scale reproductions of the validation experiments.

Every experiment returns the raw per-trial records next to the summary
statistics so results can be audited by recomputation, and there are
writers for the three artefact kinds each run emits: a raw CSV, a stats
JSON and a plot-ready CSV.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .acquisition import Dataset, generate_sample_times
from .kinematics import KinematicTable, forward, inverse
from .plant import (
    MAX_CUMULATIVE_MS,
    PlantConfig,
    arc_transform,
    initial_state,
    segment_arcs,
    step_inflate,
    tip_pose,
    with_segments,
)
from .vision import Pose


class UndefinedAngleError(Exception):
    """Bending angle is undefined for a tip at zero height."""


@dataclass(frozen=True)
class ErrorStats:
    """Summary of a positive error sample (mm)."""

    count: int
    mean: float
    median: float
    std: float
    q1: float
    q3: float
    min: float
    max: float

    @classmethod
    def from_errors(cls, errors) -> "ErrorStats":
        values = np.asarray(errors, dtype=float)
        if values.size == 0:
            raise ValueError("cannot summarize an empty error sample")
        return cls(
            count=int(values.size),
            mean=float(np.mean(values)),
            median=float(np.median(values)),
            std=float(np.std(values)),
            q1=float(np.percentile(values, 25)),
            q3=float(np.percentile(values, 75)),
            min=float(np.min(values)),
            max=float(np.max(values)),
        )


@dataclass(frozen=True)
class WorkspaceSummary:
    """Axis-aligned bounding box (mm) and per-angle Euler ranges (deg)."""

    position_min: tuple[float, float, float]
    position_max: tuple[float, float, float]
    euler_min: tuple[float, float, float]
    euler_max: tuple[float, float, float]

    @property
    def extents_mm(self) -> tuple[float, float, float]:
        return tuple(hi - lo for lo, hi in zip(self.position_min, self.position_max))


def bending_angle(position, x0: float = 0.0, y0: float = 0.0) -> float:
    """Angle (deg) of a point away from the vertical through (x0, y0).

    Evaluates arctan(sqrt((x-x0)^2 + (y-y0)^2) / z); the caller supplies the
    initial tip coordinates as the reference vertical.
    """
    x, y, z = (float(v) for v in position)
    if z == 0.0:
        raise UndefinedAngleError("tip height is zero; bending angle undefined")
    return math.degrees(math.atan(math.hypot(x - x0, y - y0) / z))


def drive(
    config: PlantConfig,
    times,
    payload_g: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Pose:
    """Reset the arm and apply a full valve-time vector sequentially."""
    state = initial_state(config)
    for bladder, duration in enumerate(np.asarray(times, dtype=float)):
        state = step_inflate(config, state, bladder, float(duration))
    return tip_pose(config, state, payload_g=payload_g, rng=rng)


def pose_vector(pose: Pose) -> np.ndarray:
    """6-vector (position mm + Z-Y-X Euler deg) for table queries."""
    from .vision import euler_from_rotation

    return np.concatenate([pose.position, euler_from_rotation(pose.orientation)])


def tilt_deg(pose: Pose) -> float:
    """Angle between the tip axis and the world vertical."""
    return math.degrees(math.acos(max(-1.0, min(1.0, float(pose.orientation[2, 2])))))


def bending_sweep(
    config: PlantConfig,
    n_segments: int | None = None,
    step_ms: float = 100.0,
    bladder: int = 0,
) -> list[tuple[float, float]]:
    """Bend of the driven segment versus cumulative inflation time.

    One bladder is inflated repeatedly in step_ms pulses up to the 1000 ms
    budget. The reported angle is the tilt of the segment's end axis from
    the vertical, which is what the stacked passive segments leave
    unchanged.
    """
    if step_ms <= 0 or MAX_CUMULATIVE_MS % step_ms != 0:
        raise ValueError(f"step must divide the {MAX_CUMULATIVE_MS:.0f} ms budget")
    cfg = with_segments(config, n_segments) if n_segments is not None else config
    segment = bladder // 3
    state = initial_state(cfg)
    points = [(0.0, 0.0)]
    cumulative = 0.0
    while cumulative < MAX_CUMULATIVE_MS:
        state = step_inflate(cfg, state, bladder, step_ms)
        cumulative += step_ms
        kappa, theta = segment_arcs(cfg, state)[segment]
        R, _ = arc_transform(kappa, theta, cfg.segment_length_mm)
        points.append((cumulative, bending_angle(R @ np.array([0.0, 0.0, 1.0]))))
    return points


def fk_validation(
    config: PlantConfig, table: KinematicTable, n_trials: int, seed: int
) -> tuple[ErrorStats, list[dict]]:
    """Error between the plant tip and the forward model on random times."""
    if n_trials <= 0:
        raise ValueError("n_trials must be positive")
    records = []
    for trial in range(n_trials):
        rng = np.random.default_rng([seed, trial])
        times = generate_sample_times(rng, table.t_max_ms)
        actual = drive(config, times.values, rng=rng).position
        predicted = forward(table, times.values)[:3]
        record = {"trial": trial, "error_mm": float(np.linalg.norm(actual - predicted))}
        record.update({f"t{i + 1}_ms": times.values[i] for i in range(9)})
        record.update(zip(("true_x_mm", "true_y_mm", "true_z_mm"), map(float, actual)))
        record.update(zip(("pred_x_mm", "pred_y_mm", "pred_z_mm"), map(float, predicted)))
        records.append(record)
    stats = ErrorStats.from_errors([r["error_mm"] for r in records])
    return stats, records


def ik_validation(
    config: PlantConfig,
    table: KinematicTable,
    n_trials: int,
    seed: int,
    region: str = "full",
    tilt_limit_deg: float = 10.0,
    max_draws: int = 500,
) -> tuple[ErrorStats, list[dict]]:
    """Reach randomly sampled plant poses with inverse-model times.

    Targets are generated by driving the plant with valid random times, so
    every target is reachable. The restricted region keeps only near-planar
    targets (tip axis within tilt_limit_deg of vertical) and queries the
    table with the position-only metric, mirroring the planar experiment.
    """
    if region not in ("full", "restricted"):
        raise ValueError("region must be 'full' or 'restricted'")
    if n_trials <= 0:
        raise ValueError("n_trials must be positive")
    restricted = region == "restricted"
    records = []
    for trial in range(n_trials):
        rng = np.random.default_rng([seed, trial])
        target_pose = None
        for _ in range(max_draws):
            times = generate_sample_times(rng, table.t_max_ms)
            candidate = drive(config, times.values, rng=rng)
            if not restricted or tilt_deg(candidate) <= tilt_limit_deg:
                target_pose = candidate
                break
        if target_pose is None:
            raise RuntimeError(
                f"no target within {tilt_limit_deg} deg tilt after {max_draws} draws"
            )
        target = pose_vector(target_pose)
        commanded = inverse(table, target, position_only=restricted)
        achieved = drive(config, commanded, rng=rng).position
        record = {
            "trial": trial,
            "region": region,
            "error_mm": float(np.linalg.norm(achieved - target[:3])),
            "tilt_deg": tilt_deg(target_pose),
        }
        record.update(zip(("target_x_mm", "target_y_mm", "target_z_mm"), map(float, target[:3])))
        record.update(
            zip(("achieved_x_mm", "achieved_y_mm", "achieved_z_mm"), map(float, achieved))
        )
        record.update({f"t{i + 1}_ms": float(commanded[i]) for i in range(9)})
        records.append(record)
    stats = ErrorStats.from_errors([r["error_mm"] for r in records])
    return stats, records


def workspace_scan(dataset: Dataset) -> WorkspaceSummary:
    """Componentwise bounds of the stored positions and Euler angles."""
    if not dataset.samples:
        raise ValueError("cannot scan an empty dataset")
    positions = np.array([s.position for s in dataset.samples])
    eulers = np.array([s.euler for s in dataset.samples])
    return WorkspaceSummary(
        position_min=tuple(map(float, positions.min(axis=0))),
        position_max=tuple(map(float, positions.max(axis=0))),
        euler_min=tuple(map(float, eulers.min(axis=0))),
        euler_max=tuple(map(float, eulers.max(axis=0))),
    )


def payload_eval(
    config: PlantConfig,
    table: KinematicTable,
    payloads_g,
    n_points: int,
    seed: int,
) -> tuple[dict[float, ErrorStats], list[dict]]:
    """Tip deviation under payloads at inverse-model targets.

    For each target, the commanded times come from the zero-payload table;
    the error of a payload is the distance between the loaded tip and the
    unloaded tip under the same commands.
    """
    if n_points <= 0:
        raise ValueError("n_points must be positive")
    payloads = [float(w) for w in payloads_g]
    records = []
    per_payload: dict[float, list[float]] = {w: [] for w in payloads}
    for point in range(n_points):
        rng = np.random.default_rng([seed, point])
        times = generate_sample_times(rng, table.t_max_ms)
        target = pose_vector(drive(config, times.values, rng=rng))
        commanded = inverse(table, target)
        unloaded = drive(config, commanded).position
        reach = math.hypot(unloaded[0], unloaded[1])
        for w in payloads:
            loaded = drive(config, commanded, payload_g=w).position
            error = float(np.linalg.norm(loaded - unloaded))
            per_payload[w].append(error)
            records.append(
                {
                    "payload_g": w,
                    "point": point,
                    "error_mm": error,
                    "reach_mm": reach,
                    "x0_mm": float(unloaded[0]),
                    "y0_mm": float(unloaded[1]),
                    "z0_mm": float(unloaded[2]),
                    "x_mm": float(loaded[0]),
                    "y_mm": float(loaded[1]),
                    "z_mm": float(loaded[2]),
                }
            )
    stats = {w: ErrorStats.from_errors(errs) for w, errs in per_payload.items()}
    return stats, records


def histogram(errors, bins: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Counts and edges for the error histogram; counts sum to len(errors)."""
    counts, edges = np.histogram(np.asarray(errors, dtype=float), bins=bins)
    return counts, edges


# --- artefact writers -------------------------------------------------------


def _format_cell(value) -> str:
    if isinstance(value, float):
        return format(value, ".9g")
    return str(value)


def write_records_csv(path, records: list[dict]) -> None:
    if not records:
        raise ValueError("no records to write")
    fieldnames = list(records[0].keys())
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fieldnames)
        for record in records:
            writer.writerow([_format_cell(record[k]) for k in fieldnames])


def write_stats_json(path, payload) -> None:
    def default(obj):
        if isinstance(obj, (ErrorStats, WorkspaceSummary)):
            return asdict(obj)
        raise TypeError(f"not JSON-serializable: {type(obj)}")

    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=default)
        fh.write("\n")


def write_histogram_csv(path, errors, bins: int = 10) -> None:
    counts, edges = histogram(errors, bins=bins)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_lo_mm", "bin_hi_mm", "count"])
        for i, count in enumerate(counts):
            writer.writerow(
                [format(edges[i], ".9g"), format(edges[i + 1], ".9g"), str(int(count))]
            )


def write_quartiles_csv(path, stats_by_key: dict) -> None:
    """Box-plot-ready quartiles, one row per key (e.g. payload)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["key", "min", "q1", "median", "q3", "max", "mean", "count"])
        for key, stats in stats_by_key.items():
            writer.writerow(
                [
                    _format_cell(key),
                    *(
                        format(getattr(stats, name), ".9g")
                        for name in ("min", "q1", "median", "q3", "max", "mean")
                    ),
                    str(stats.count),
                ]
            )

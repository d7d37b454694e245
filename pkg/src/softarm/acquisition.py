"""Automated dataset campaigns against the synthetic arm and virtual cameras.

A campaign repeatedly resets the arm, applies a random valve-time
combination (two bladders per segment at most), captures the beacon through
the two cameras and stores the percent-encoded times together with the
triangulated pose. Every sample owns an RNG stream derived from
(seed, sample index), so campaigns are reproducible bit for bit and samples
are independent of each other.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .plant import (
    MAX_CUMULATIVE_MS,
    BeaconGeometry,
    PlantConfig,
    beacon_world_positions,
    initial_state,
    step_inflate,
    tip_pose,
)
from .vision import (
    SPHERES,
    BeaconObservation,
    CameraModel,
    PixelPoint,
    euler_from_rotation,
    pose_from_spheres,
    project,
    triangulate_beacon,
)

# Per-segment bladder pairs that may be inflated together.
PAIRS = ((0, 1), (0, 2), (1, 2))

CSV_HEADER = (
    ["id"]
    + [f"t{i}p" for i in range(1, 10)]
    + ["x_mm", "y_mm", "z_mm", "yaw_deg", "pitch_deg", "roll_deg"]
)


class DatasetError(Exception):
    """Base class for dataset handling failures."""


class DatasetFormatError(DatasetError):
    """Structurally malformed dataset file."""


class DatasetValidationError(DatasetError):
    """Dataset file parsed but violates a sample invariant."""


class EncodingError(DatasetError):
    """Percent encoding input out of range."""


def _round9(value: float) -> float:
    """Quantize to the 9 significant digits used by the on-disk format."""
    return float(format(value, ".9g"))


def encode_percent(t_ms: float, t_max_ms: float) -> float:
    """Map a valve time in [0, t_max] onto the stored 0..100 scale."""
    if t_max_ms <= 0:
        raise EncodingError("t_max must be positive")
    if not 0.0 <= t_ms <= t_max_ms:
        raise EncodingError(f"time {t_ms} ms outside [0, {t_max_ms}]")
    return 100.0 * t_ms / t_max_ms


def decode_percent(percent: float, t_max_ms: float) -> float:
    """Inverse of encode_percent."""
    if t_max_ms <= 0:
        raise EncodingError("t_max must be positive")
    if not 0.0 <= percent <= 100.0:
        raise EncodingError(f"percent {percent} outside [0, 100]")
    return percent * t_max_ms / 100.0


@dataclass(frozen=True)
class ValveTimes:
    """Nine valve opening times (ms), grouped three per segment."""

    values: tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", values)
        if len(values) != 9:
            raise ValueError("expected 9 valve times")
        if any(not np.isfinite(v) or v < 0 for v in values):
            raise ValueError("valve times must be finite and nonnegative")

    def validate(self, t_max_ms: float) -> None:
        """Check the per-session range and the two-bladders-per-segment rule."""
        if any(v > t_max_ms + 1e-9 for v in self.values):
            raise ValueError(f"valve time exceeds t_max {t_max_ms} ms")
        for seg in range(3):
            triple = self.values[3 * seg : 3 * seg + 3]
            if sum(1 for v in triple if v > 0) > 2:
                raise ValueError(f"segment {seg} has three positive valve times")


def generate_sample_times(rng: np.random.Generator, t_max_ms: float) -> ValveTimes:
    """Random valve times: one bladder pair per segment, uniform in [0, t_max)."""
    if not 0 < t_max_ms <= MAX_CUMULATIVE_MS:
        raise ValueError(f"t_max must be in (0, {MAX_CUMULATIVE_MS:.0f}] ms")
    times = [0.0] * 9
    for seg in range(3):
        pair = PAIRS[int(rng.integers(3))]
        for member in pair:
            times[3 * seg + member] = float(rng.uniform(0.0, t_max_ms))
    return ValveTimes(tuple(times))


@dataclass(frozen=True)
class Sample:
    """One stored campaign row: percent-encoded times plus the captured pose."""

    times_percent: tuple[float, ...]
    position: tuple[float, float, float]
    euler: tuple[float, float, float]

    def __post_init__(self):
        if len(self.times_percent) != 9:
            raise ValueError("expected 9 percent values")
        if len(self.position) != 3 or len(self.euler) != 3:
            raise ValueError("pose must be 3 position and 3 Euler components")
        for p in self.times_percent:
            if not np.isfinite(p) or not 0.0 <= p <= 100.0:
                raise ValueError(f"percent value {p} outside [0, 100]")
        for v in (*self.position, *self.euler):
            if not np.isfinite(v):
                raise ValueError("pose values must be finite")


@dataclass(frozen=True)
class SessionMeta:
    """Provenance of one collection session."""

    id: str
    seed: int
    t_max_ms: float
    n_samples: int
    discarded_count: int
    pressure_bar: float
    temperature_c: float
    created_at: str = ""


@dataclass(frozen=True)
class Dataset:
    """Campaign samples plus per-session metadata.

    Samples are stored contiguously per session, in the order sessions are
    listed; t_max_ms is the encoding scale shared by every stored percent.
    """

    samples: tuple[Sample, ...]
    t_max_ms: float
    sessions: tuple[SessionMeta, ...]

    def __post_init__(self):
        if self.t_max_ms <= 0:
            raise ValueError("t_max_ms must be positive")
        if not self.sessions:
            raise ValueError("a dataset carries at least one session record")
        if sum(s.n_samples for s in self.sessions) != len(self.samples):
            raise ValueError("session sample counts do not match the sample list")

    @property
    def discarded_count(self) -> int:
        return sum(s.discarded_count for s in self.sessions)

    @property
    def seed(self) -> int:
        return self.sessions[0].seed

    @property
    def pressure_bar(self) -> float:
        return self.sessions[0].pressure_bar

    @property
    def temperature_c(self) -> float:
        return self.sessions[0].temperature_c

    @property
    def created_at(self) -> str:
        return self.sessions[0].created_at


def observe_beacon(
    cam1: CameraModel,
    cam2: CameraModel,
    spheres_mm,
    rng: np.random.Generator,
    pixel_noise_sd: float = 0.0,
    failed: bool = False,
) -> BeaconObservation:
    """Project the three spheres into both cameras, with optional pixel noise.

    A detection failure knocks one (camera, sphere) slot out, which makes
    the observation incomplete and the sample unusable.
    """
    detections = []
    for cam in (cam1, cam2):
        per_sphere: dict[str, PixelPoint | None] = {}
        for sphere, position_mm in zip(SPHERES, spheres_mm):
            px = project(cam, np.asarray(position_mm, dtype=float) / 1000.0)
            if pixel_noise_sd > 0:
                du, dv = rng.normal(0.0, pixel_noise_sd, 2)
                px = PixelPoint(px.u + du, px.v + dv)
            per_sphere[sphere] = px
        detections.append(per_sphere)
    if failed:
        slot = int(rng.integers(6))
        detections[slot // 3][SPHERES[slot % 3]] = None
    return BeaconObservation(cam1=detections[0], cam2=detections[1])


def collect(
    plant_config: PlantConfig,
    cameras: tuple[CameraModel, CameraModel],
    n_samples: int,
    t_max_ms: float,
    seed: int,
    failure_prob: float = 0.05,
    pixel_noise_sd: float = 0.5,
    temperature_c: float = 20.0,
    session_id: str | None = None,
    created_at: str = "",
    beacon: BeaconGeometry = BeaconGeometry(),
) -> Dataset:
    """Run one automated collection session and return the dataset.

    Per sample: reset the arm, inflate the nine bladders sequentially with
    the generated times, capture the beacon through both cameras, and store
    the triangulated pose unless the capture failed (failure_prob), in
    which case the sample is discarded and counted.
    """
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    if not 0.0 <= failure_prob < 1.0:
        raise ValueError("failure_prob must be in [0, 1)")
    if seed < 0:
        raise ValueError("seed must be a nonnegative 64-bit value")
    cam1, cam2 = cameras
    samples: list[Sample] = []
    discarded = 0
    for index in range(n_samples):
        rng = np.random.default_rng([seed, index])
        times = generate_sample_times(rng, t_max_ms)
        failed = bool(rng.random() < failure_prob)
        if failed:
            # The capture is marked unusable no matter what the cameras saw;
            # samples own independent RNG streams, so skipping the capture
            # work leaves every other sample untouched.
            discarded += 1
            continue
        state = initial_state(plant_config)
        for bladder, duration in enumerate(times.values):
            state = step_inflate(plant_config, state, bladder, duration)
        pose = tip_pose(plant_config, state, rng=rng)
        spheres = beacon_world_positions(pose, beacon)
        observation = observe_beacon(cam1, cam2, spheres, rng, pixel_noise_sd, failed=False)
        r_g, r_r, r_b = triangulate_beacon(cam1, cam2, observation)
        beacon_pose = pose_from_spheres(r_g, r_r, r_b)
        yaw, pitch, roll = euler_from_rotation(beacon_pose.orientation)
        samples.append(
            Sample(
                times_percent=tuple(
                    _round9(encode_percent(t, t_max_ms)) for t in times.values
                ),
                position=tuple(_round9(v) for v in beacon_pose.position),
                euler=(_round9(yaw), _round9(pitch), _round9(roll)),
            )
        )
    session = SessionMeta(
        id=session_id if session_id is not None else f"seed-{seed}",
        seed=seed,
        t_max_ms=t_max_ms,
        n_samples=len(samples),
        discarded_count=discarded,
        pressure_bar=plant_config.line_pressure_bar,
        temperature_c=temperature_c,
        created_at=created_at,
    )
    return Dataset(samples=tuple(samples), t_max_ms=t_max_ms, sessions=(session,))


def merge(*datasets: Dataset) -> Dataset:
    """Union of sessions re-encoded to the largest t_max.

    The result is canonical: sessions are ordered by (id, seed) and samples
    follow their sessions, so merging in any argument order yields the same
    dataset.
    """
    if not datasets:
        raise ValueError("merge requires at least one dataset")
    t_new = max(ds.t_max_ms for ds in datasets)
    groups: list[tuple[SessionMeta, tuple[Sample, ...], float]] = []
    for ds in datasets:
        offset = 0
        for session in ds.sessions:
            chunk = ds.samples[offset : offset + session.n_samples]
            offset += session.n_samples
            groups.append((session, chunk, ds.t_max_ms))
    groups.sort(key=lambda g: (g[0].id, g[0].seed))
    samples: list[Sample] = []
    for _, chunk, t_old in groups:
        for sample in chunk:
            samples.append(
                Sample(
                    times_percent=tuple(
                        _round9(encode_percent(decode_percent(p, t_old), t_new))
                        for p in sample.times_percent
                    ),
                    position=sample.position,
                    euler=sample.euler,
                )
            )
    return Dataset(
        samples=tuple(samples),
        t_max_ms=t_new,
        sessions=tuple(g[0] for g in groups),
    )


def _meta_path(path: Path) -> Path:
    return path.with_suffix(".meta.json")


def save(dataset: Dataset, path) -> None:
    """Write the CSV table plus the <name>.meta.json sidecar."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for i, sample in enumerate(dataset.samples):
            row = [str(i)] + [
                format(v, ".9g")
                for v in (*sample.times_percent, *sample.position, *sample.euler)
            ]
            writer.writerow(row)
    meta = {
        "t_max_ms": dataset.t_max_ms,
        "pressure_bar": dataset.pressure_bar,
        "temperature_C": dataset.temperature_c,
        "seed": dataset.seed,
        "discarded_count": dataset.discarded_count,
        "sessions": [
            {
                "id": s.id,
                "seed": s.seed,
                "t_max_ms": s.t_max_ms,
                "n_samples": s.n_samples,
                "discarded_count": s.discarded_count,
                "pressure_bar": s.pressure_bar,
                "temperature_C": s.temperature_c,
                "created_at": s.created_at,
            }
            for s in dataset.sessions
        ],
    }
    with open(_meta_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load(path) -> Dataset:
    """Read a dataset written by save(), validating structure and invariants."""
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetFormatError(f"{path}: empty dataset file")
    header = rows[0]
    if header != CSV_HEADER:
        missing = [c for c in CSV_HEADER if c not in header]
        extra = [c for c in header if c not in CSV_HEADER]
        detail = []
        if missing:
            detail.append(f"missing columns {missing}")
        if extra:
            detail.append(f"unexpected columns {extra}")
        if not detail:
            detail.append("columns out of order")
        raise DatasetFormatError(f"{path}: bad header: " + "; ".join(detail))
    samples = []
    for line_no, row in enumerate(rows[1:], start=2):
        if len(row) != len(CSV_HEADER):
            raise DatasetFormatError(
                f"{path}: line {line_no}: expected {len(CSV_HEADER)} fields, got {len(row)}"
            )
        try:
            values = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise DatasetFormatError(f"{path}: line {line_no}: {exc}") from exc
        try:
            samples.append(
                Sample(
                    times_percent=tuple(values[0:9]),
                    position=tuple(values[9:12]),
                    euler=tuple(values[12:15]),
                )
            )
        except ValueError as exc:
            raise DatasetValidationError(f"{path}: line {line_no}: {exc}") from exc
    meta_path = _meta_path(path)
    if not meta_path.exists():
        raise DatasetFormatError(f"{path}: missing metadata sidecar {meta_path.name}")
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{meta_path}: invalid JSON: {exc}") from exc
    try:
        sessions = tuple(
            SessionMeta(
                id=str(entry["id"]),
                seed=int(entry["seed"]),
                t_max_ms=float(entry["t_max_ms"]),
                n_samples=int(entry["n_samples"]),
                discarded_count=int(entry["discarded_count"]),
                pressure_bar=float(entry["pressure_bar"]),
                temperature_c=float(entry["temperature_C"]),
                created_at=str(entry.get("created_at", "")),
            )
            for entry in meta["sessions"]
        )
        t_max_ms = float(meta["t_max_ms"])
    except KeyError as exc:
        raise DatasetFormatError(f"{meta_path}: missing metadata field {exc}") from exc
    try:
        return Dataset(samples=tuple(samples), t_max_ms=t_max_ms, sessions=sessions)
    except ValueError as exc:
        raise DatasetValidationError(f"{path}: {exc}") from exc

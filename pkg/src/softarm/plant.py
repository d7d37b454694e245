"""Synthetic constant-curvature pneumatic arm with asymmetric valve response.

The arm is a chain of circular-arc segments separated by rigid connectors,
driven per bladder by millisecond-scale valve opening times. Deflation is
slower than inflation (factor 1.45) and resumed inflation of an already
filled bladder is less effective (factor 1.2), mirroring the measured
behaviour of the physical bench the model stands in for.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .vision import Pose

# Hard per-bladder budget between resets; longer accumulated openings
# puncture the silicone.
MAX_CUMULATIVE_MS = 1000.0


class PlantError(Exception):
    """Base class for synthetic-arm failures."""


class OverinflationError(PlantError):
    """Cumulative commanded inflation would exceed the per-bladder budget."""


class ScheduleError(PlantError):
    """Malformed valve-schedule script."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class PlantConfig:
    """Geometry and actuation constants of the synthetic arm.

    The fill-to-curvature response rises steeply and saturates: curvature
    follows gain * tau * (1 - exp(-fill / tau)) with tau = saturation_fill_ms,
    i.e. gain * fill for small fills, flat for fills well past tau. The
    default curvature_gain (rad per mm of arc per ms of fill) is calibrated
    so a single fully inflated bladder bends its segment by exactly
    40 degrees. payload_droop_gain is in rad per g*mm of payload moment.
    """

    n_segments: int = 3
    segment_length_mm: float = 100.0
    connector_length_mm: float = 20.0
    base_connector_mm: float = 20.0
    rod_length_mm: float = 30.0
    segment_diameter_mm: float = 45.0
    bladder_azimuths_deg: tuple[float, float, float] = (90.0, 210.0, 330.0)
    saturation_fill_ms: float = 700.0
    curvature_gain: float | None = None
    max_fill_ms: float = 1000.0
    deflation_factor: float = 1.45
    hysteresis_factor: float = 1.2
    line_pressure_bar: float = 1.2
    payload_droop_gain: float = 1.0e-6
    process_noise_sd_mm: float = 0.0

    def __post_init__(self):
        if self.n_segments < 1:
            raise ValueError("n_segments must be >= 1")
        if len(self.bladder_azimuths_deg) != 3:
            raise ValueError("each segment has exactly 3 bladders")
        if self.deflation_factor <= 1.0:
            raise ValueError("deflation_factor must exceed 1")
        if self.hysteresis_factor < 1.0:
            raise ValueError("hysteresis_factor must be >= 1")
        if self.max_fill_ms <= 0:
            raise ValueError("max_fill_ms must be positive")
        if not 0 < self.saturation_fill_ms <= self.max_fill_ms:
            raise ValueError("saturation_fill_ms must be in (0, max_fill_ms]")
        if self.process_noise_sd_mm < 0:
            raise ValueError("process_noise_sd_mm must be >= 0")
        if self.curvature_gain is None:
            full = self.response(self.max_fill_ms, gain=1.0)
            object.__setattr__(
                self, "curvature_gain", math.radians(40.0) / (self.segment_length_mm * full)
            )
        elif self.curvature_gain <= 0:
            raise ValueError("curvature_gain must be positive")

    def response(self, fill_ms: float, gain: float | None = None) -> float:
        """Curvature (1/mm) produced by a resultant fill magnitude."""
        g = self.curvature_gain if gain is None else gain
        tau = self.saturation_fill_ms
        return g * tau * -math.expm1(-fill_ms / tau)

    @property
    def n_bladders(self) -> int:
        return 3 * self.n_segments

    @property
    def total_height_mm(self) -> float:
        """Unloaded straight height: base connector, segments, intersegment connectors, rod."""
        return (
            self.base_connector_mm
            + self.n_segments * self.segment_length_mm
            + (self.n_segments - 1) * self.connector_length_mm
            + self.rod_length_mm
        )

    def to_dict(self) -> dict:
        data = {}
        for f in fields(self):
            value = getattr(self, f.name)
            data[f.name] = list(value) if isinstance(value, tuple) else value
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "PlantConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown plant config fields: {sorted(unknown)}")
        kwargs = dict(data)
        if "bladder_azimuths_deg" in kwargs:
            kwargs["bladder_azimuths_deg"] = tuple(kwargs["bladder_azimuths_deg"])
        return cls(**kwargs)


@dataclass(frozen=True)
class PlantState:
    """Per-bladder effective fill plus cumulative commanded inflation (both ms)."""

    fill: tuple[float, ...]
    cumulative: tuple[float, ...]

    def __post_init__(self):
        if len(self.fill) != len(self.cumulative):
            raise ValueError("fill and cumulative must have equal length")
        if any(v < 0 for v in self.fill):
            raise ValueError("fill levels must be nonnegative")

    @classmethod
    def zero(cls, n_bladders: int = 9) -> "PlantState":
        return cls(fill=(0.0,) * n_bladders, cumulative=(0.0,) * n_bladders)


@dataclass(frozen=True)
class BeaconGeometry:
    """Sphere offsets in the tip frame (mm); the green sphere sits at the rod end."""

    green_offset_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)
    red_offset_mm: tuple[float, float, float] = (40.0, 0.0, 0.0)
    blue_offset_mm: tuple[float, float, float] = (0.0, 40.0, 0.0)

    def __post_init__(self):
        g = np.array(self.green_offset_mm)
        r = np.array(self.red_offset_mm)
        b = np.array(self.blue_offset_mm)
        if np.linalg.norm(np.cross(r - g, b - g)) < 1e-9:
            raise ValueError("beacon spheres must be non-collinear")


def initial_state(config: PlantConfig) -> PlantState:
    return PlantState.zero(config.n_bladders)


def reset(state: PlantState) -> PlantState:
    """Vent everything and clear the cumulative inflation bookkeeping."""
    return PlantState.zero(len(state.fill))


def _check_bladder(state: PlantState, bladder: int) -> None:
    if not (0 <= bladder < len(state.fill)):
        raise PlantError(f"bladder index {bladder} out of range 0..{len(state.fill) - 1}")


def step_inflate(
    config: PlantConfig, state: PlantState, bladder: int, duration_ms: float
) -> PlantState:
    """Open one inflation valve for duration_ms.

    The first inflation of an empty bladder is fully effective; resuming
    inflation of a non-empty bladder is derated by the hysteresis factor.
    """
    _check_bladder(state, bladder)
    if duration_ms < 0:
        raise ValueError("inflation duration must be nonnegative")
    cum = state.cumulative[bladder] + duration_ms
    if cum > MAX_CUMULATIVE_MS + 1e-9:
        raise OverinflationError(
            f"bladder {bladder}: cumulative inflation {cum:.6g} ms exceeds "
            f"{MAX_CUMULATIVE_MS:.0f} ms budget"
        )
    gain = 1.0 if state.fill[bladder] == 0.0 else 1.0 / config.hysteresis_factor
    new_fill = min(state.fill[bladder] + duration_ms * gain, config.max_fill_ms)
    fill = list(state.fill)
    cumulative = list(state.cumulative)
    fill[bladder] = new_fill
    cumulative[bladder] = cum
    return PlantState(fill=tuple(fill), cumulative=tuple(cumulative))


def step_deflate(
    config: PlantConfig, state: PlantState, bladder: int, duration_ms: float
) -> PlantState:
    """Open one deflation valve for duration_ms; venting is slower than filling."""
    _check_bladder(state, bladder)
    if duration_ms < 0:
        raise ValueError("deflation duration must be nonnegative")
    fill = list(state.fill)
    fill[bladder] = max(0.0, fill[bladder] - duration_ms / config.deflation_factor)
    return PlantState(fill=tuple(fill), cumulative=state.cumulative)


def segment_arcs(config: PlantConfig, state: PlantState) -> list[tuple[float, float]]:
    """Per-segment (curvature 1/mm, bending-plane angle rad) from the fill levels.

    The bending plane follows the vector sum of the bladder azimuths weighted
    by their fills; the resultant magnitude drives the saturating curvature
    response, so extra air well past saturation_fill_ms adds no deformation.
    Segments with all three bladders inflated are rejected: elongation is
    outside this model.
    """
    azimuths = [math.radians(a) for a in config.bladder_azimuths_deg]
    arcs = []
    for seg in range(config.n_segments):
        f = state.fill[3 * seg : 3 * seg + 3]
        if sum(1 for v in f if v > 0) > 2:
            raise PlantError(
                f"segment {seg} has three inflated bladders; only two may act at a time"
            )
        vx = sum(fi * math.cos(a) for fi, a in zip(f, azimuths))
        vy = sum(fi * math.sin(a) for fi, a in zip(f, azimuths))
        magnitude = min(math.hypot(vx, vy), config.max_fill_ms)
        kappa = config.response(magnitude)
        theta = math.atan2(vy, vx) if magnitude > 0 else 0.0
        arcs.append((kappa, theta))
    return arcs


def arc_transform(kappa: float, theta: float, length_mm: float) -> tuple[np.ndarray, np.ndarray]:
    """Rigid transform across one constant-curvature arc.

    Returns (R, p): the rotation and translation from the arc's base frame
    to its end frame, bending in the plane at azimuth theta.
    """
    if kappa == 0.0:
        return np.eye(3), np.array([0.0, 0.0, length_mm])
    bend = kappa * length_mm
    ct, st = math.cos(theta), math.sin(theta)
    cb, sb = math.cos(bend), math.sin(bend)
    # In-plane arc endpoint; 2 sin^2(b/2) keeps 1-cos(b) accurate for small b.
    x = 2.0 * math.sin(bend / 2.0) ** 2 / kappa
    z = sb / kappa
    Rz_pos = np.array([[ct, -st, 0.0], [st, ct, 0.0], [0.0, 0.0, 1.0]])
    Ry_bend = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    R = Rz_pos @ Ry_bend @ Rz_pos.T
    p = Rz_pos @ np.array([x, 0.0, z])
    return R, p


def _chain_pose(config: PlantConfig, arcs: list[tuple[float, float]]) -> tuple[np.ndarray, np.ndarray]:
    position = np.zeros(3)
    R = np.eye(3)

    def advance(length: float):
        nonlocal position
        position = position + R @ np.array([0.0, 0.0, length])

    advance(config.base_connector_mm)
    for i, (kappa, theta) in enumerate(arcs):
        R_arc, p_arc = arc_transform(kappa, theta, config.segment_length_mm)
        position = position + R @ p_arc
        R = R @ R_arc
        if i < len(arcs) - 1:
            advance(config.connector_length_mm)
    advance(config.rod_length_mm)
    return position, R


def tip_pose(
    config: PlantConfig,
    state: PlantState,
    payload_g: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Pose:
    """Tip pose (mm, world frame) of the arm under the current fills.

    A payload tilts every segment back toward the vertical axis in
    proportion to the payload moment (weight times the horizontal reach of
    the unloaded tip), shrinking the reachable space. Gaussian position
    noise with sd process_noise_sd_mm is added when an rng is supplied.
    """
    if payload_g < 0:
        raise ValueError("payload must be nonnegative")
    arcs = segment_arcs(config, state)
    position, R = _chain_pose(config, arcs)
    if payload_g > 0:
        reach = math.hypot(position[0], position[1])
        if reach > 0:
            lean = math.atan2(position[1], position[0])
            droop = config.payload_droop_gain * payload_g * reach / config.segment_length_mm
            adjusted = []
            for kappa, theta in arcs:
                kx = kappa * math.cos(theta) - droop * math.cos(lean)
                ky = kappa * math.sin(theta) - droop * math.sin(lean)
                k = math.hypot(kx, ky)
                adjusted.append((k, math.atan2(ky, kx) if k > 0 else 0.0))
            position, R = _chain_pose(config, adjusted)
    if rng is not None and config.process_noise_sd_mm > 0:
        position = position + rng.normal(0.0, config.process_noise_sd_mm, 3)
    return Pose(position=position, orientation=R)


def beacon_world_positions(
    pose: Pose, geometry: BeaconGeometry = BeaconGeometry()
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World positions (mm) of the green, red and blue spheres for a tip pose."""
    out = []
    for offset in (geometry.green_offset_mm, geometry.red_offset_mm, geometry.blue_offset_mm):
        out.append(pose.position + pose.orientation @ np.asarray(offset, dtype=float))
    return tuple(out)


def load_plant_config(path) -> PlantConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("plant config must be a JSON object")
    return PlantConfig.from_dict(data)


def save_plant_config(config: PlantConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def with_segments(config: PlantConfig, n_segments: int) -> PlantConfig:
    """Same plant constants with a different number of stacked segments."""
    return replace(config, n_segments=n_segments)


Command = tuple
# Valve-schedule scripts: one command per line, `INF <bladder> <ms>`,
# `DEF <bladder> <ms>` or `RESET`; blank lines and `#` comments are skipped.


def parse_schedule(text: str) -> list[Command]:
    commands: list[Command] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        op = parts[0].upper()
        if op == "RESET":
            if len(parts) != 1:
                raise ScheduleError(line_no, "RESET takes no arguments")
            commands.append(("RESET",))
            continue
        if op not in ("INF", "DEF"):
            raise ScheduleError(line_no, f"unknown command {parts[0]!r}")
        if len(parts) != 3:
            raise ScheduleError(line_no, f"{op} expects <bladder> <ms>")
        try:
            bladder = int(parts[1])
            duration = float(parts[2])
        except ValueError as exc:
            raise ScheduleError(line_no, f"bad {op} arguments: {exc}") from exc
        if duration < 0:
            raise ScheduleError(line_no, "duration must be nonnegative")
        commands.append((op, bladder, duration))
    return commands


def execute_schedule(
    config: PlantConfig,
    commands: list[Command],
    payload_g: float = 0.0,
    rng: np.random.Generator | None = None,
) -> list[tuple[Command, PlantState, Pose]]:
    """Run a parsed schedule from the zero state, reporting the pose after each command."""
    state = initial_state(config)
    trace = []
    for command in commands:
        if command[0] == "RESET":
            state = reset(state)
        elif command[0] == "INF":
            state = step_inflate(config, state, command[1], command[2])
        else:
            state = step_deflate(config, state, command[1], command[2])
        trace.append((command, state, tip_pose(config, state, payload_g=payload_g, rng=rng)))
    return trace

"""Table-based forward and inverse kinematics: distance-weighted 3-NN lookup.

Both directions share the same scheme: find the three stored entries
closest to the query (Euclidean distance), weight each by the reciprocal
of its distance and return the weighted average of the associated values.
A query that exactly matches a stored entry returns that entry unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .acquisition import Dataset, decode_percent

DEFAULT_K = 3


class CapacityError(Exception):
    """The table holds fewer entries than the lookup needs."""


@dataclass(frozen=True)
class KinematicTable:
    """Immutable lookup table: valve times (ms) against 6-vector poses.

    Poses are position (mm) concatenated with Z-Y-X Euler angles (deg).
    """

    times: np.ndarray
    poses: np.ndarray
    t_max_ms: float

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        poses = np.array(self.poses, dtype=float)
        if times.ndim != 2 or poses.ndim != 2:
            raise ValueError("times and poses must be 2-D arrays")
        if len(times) != len(poses):
            raise ValueError("times and poses must have one row per entry")
        if poses.shape[1] != 6:
            raise ValueError("poses must be 6-vectors (position + Euler)")
        if times.shape[1] % 3 != 0:
            raise ValueError("times must hold 3 bladders per segment")
        if self.t_max_ms <= 0:
            raise ValueError("t_max_ms must be positive")
        times.setflags(write=False)
        poses.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return len(self.times)

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "KinematicTable":
        times = np.array(
            [
                [decode_percent(p, dataset.t_max_ms) for p in sample.times_percent]
                for sample in dataset.samples
            ],
            dtype=float,
        ).reshape(len(dataset.samples), 9)
        poses = np.array(
            [[*sample.position, *sample.euler] for sample in dataset.samples],
            dtype=float,
        ).reshape(len(dataset.samples), 6)
        return cls(times=times, poses=poses, t_max_ms=dataset.t_max_ms)


def _query_matrix(table: KinematicTable, space: str) -> np.ndarray:
    if space == "time":
        return table.times
    if space == "pose":
        return table.poses
    if space == "position":
        return table.poses[:, :3]
    raise ValueError(f"unknown lookup space {space!r}")


def nearest(
    table: KinematicTable, query, k: int = DEFAULT_K, space: str = "time"
) -> list[tuple[int, float]]:
    """The k nearest entries as (index, distance), ties broken by lower index."""
    data = _query_matrix(table, space)
    if len(data) < k:
        raise CapacityError(f"table holds {len(data)} entries, lookup needs {k}")
    q = np.asarray(query, dtype=float).reshape(-1)
    if q.shape[0] != data.shape[1]:
        raise ValueError(f"query must have {data.shape[1]} components for space {space!r}")
    distances = np.linalg.norm(data - q, axis=1)
    order = np.argsort(distances, kind="stable")[:k]
    return [(int(i), float(distances[i])) for i in order]


def _wrap_deg(angle: float) -> float:
    """Wrap into (-180, 180]."""
    wrapped = (angle + 180.0) % 360.0 - 180.0
    return 180.0 if wrapped == -180.0 else wrapped


def _circular_weighted_mean(angles_deg: np.ndarray, weights: np.ndarray) -> float:
    """Shortest-arc weighted mean, anchored at the heaviest-weighted angle.

    Neighbour angles are expressed as signed offsets within 180 deg of the
    anchor, so the result stays inside the minor arc the neighbours span.
    """
    anchor = angles_deg[int(np.argmax(weights))]
    offsets = np.array([_wrap_deg(a - anchor) for a in angles_deg])
    return _wrap_deg(anchor + float(np.sum(weights * offsets) / np.sum(weights)))


def forward(table: KinematicTable, times) -> np.ndarray:
    """Pose (position mm + Euler deg) predicted for a 9-vector of valve times.

    An exact match returns the stored pose; otherwise the three nearest
    stored time combinations are averaged with reciprocal-distance weights.
    Euler components are averaged on the angle circle.
    """
    hits = nearest(table, times, k=DEFAULT_K, space="time")
    if hits[0][1] == 0.0:
        return table.poses[hits[0][0]].copy()
    idx = [h[0] for h in hits]
    weights = np.array([1.0 / h[1] for h in hits])
    neighbours = table.poses[idx]
    out = np.empty(6)
    out[:3] = weights @ neighbours[:, :3] / np.sum(weights)
    for c in range(3, 6):
        out[c] = _circular_weighted_mean(neighbours[:, c], weights)
    return out


def inverse(table: KinematicTable, pose, position_only: bool = False) -> np.ndarray:
    """Valve times (ms) predicted to reach a 6-vector pose.

    Mirrors forward() with the roles of times and poses exchanged. When the
    weighted average mixes neighbours that drive different bladder pairs, a
    segment can end up with three positive times; the smallest one is zeroed
    to restore the two-bladders-per-segment rule.
    """
    pose = np.asarray(pose, dtype=float).reshape(-1)
    if position_only:
        hits = nearest(table, pose[:3], k=DEFAULT_K, space="position")
    else:
        hits = nearest(table, pose, k=DEFAULT_K, space="pose")
    if hits[0][1] == 0.0:
        return table.times[hits[0][0]].copy()
    idx = [h[0] for h in hits]
    weights = np.array([1.0 / h[1] for h in hits])
    times = weights @ table.times[idx] / np.sum(weights)
    for seg in range(times.shape[0] // 3):
        triple = times[3 * seg : 3 * seg + 3]
        if np.all(triple > 0):
            triple[np.argmin(triple)] = 0.0
    return times

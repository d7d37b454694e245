"""Stereo pinhole geometry: projection, two-view triangulation and beacon pose recovery.

All camera-side quantities are in metres (the calibration-grid scale);
triangulated points are handed downstream in millimetres via
:func:`triangulate_beacon`, since every pose in the rest of the pipeline
is expressed in mm.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

M_TO_MM = 1000.0

ROTATION_TOL = 1e-9
RAY_CONDITION_LIMIT = 1e8

SPHERES = ("green", "red", "blue")


class GeometryError(Exception):
    """Base class for geometric failures in the capture pipeline."""


class BehindCameraError(GeometryError):
    """Point has non-positive depth in the camera frame."""


class DegenerateGeometryError(GeometryError):
    """Triangulation rays are near-parallel or the baseline is zero."""


class InconsistentObservationError(GeometryError):
    """Triangulation recovered a point behind one of the cameras."""


class DegenerateBeaconError(GeometryError):
    """Two beacon spheres coincide; the beacon frame is unrecoverable."""


class SingularOrientationError(GeometryError):
    """Beacon axes are antiparallel; the rotation between them is not unique."""


def check_rotation(R: np.ndarray, tol: float = ROTATION_TOL) -> None:
    """Raise ValueError unless R is orthonormal with determinant +1 within tol."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {R.shape}")
    if not np.all(np.isfinite(R)):
        raise ValueError("rotation contains non-finite entries")
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol:
        raise ValueError("rotation is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("rotation determinant is not +1")


def skew(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric cross-product matrix of a 3-vector."""
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: intrinsics plus the world-to-camera rigid transform.

    A world point p (metres) maps to camera coordinates as R @ p + t; its
    pixel is (fx*X/Z + cx, fy*Y/Z + cy).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    t: np.ndarray
    image_size: tuple[int, int] = (1920, 1080)

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        check_rotation(R)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        w, h = self.image_size
        if not (0 <= self.cx < w and 0 <= self.cy < h):
            raise ValueError("principal point lies outside the image")

    @property
    def optical_center(self) -> np.ndarray:
        """Camera position in world coordinates (metres)."""
        return -self.R.T @ self.t

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "image_size": list(self.image_size),
            "R": [float(v) for v in self.R.reshape(-1)],
            "t": [float(v) for v in self.t],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CameraModel":
        try:
            return cls(
                fx=float(data["fx"]),
                fy=float(data["fy"]),
                cx=float(data["cx"]),
                cy=float(data["cy"]),
                R=np.asarray(data["R"], dtype=float).reshape(3, 3),
                t=np.asarray(data["t"], dtype=float),
                image_size=tuple(data["image_size"]),
            )
        except KeyError as exc:
            raise ValueError(f"camera config missing field {exc}") from exc


@dataclass(frozen=True)
class PixelPoint:
    """Continuous image coordinates in pixels."""

    u: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise ValueError("pixel coordinates must be finite")


@dataclass(frozen=True)
class BeaconObservation:
    """Per-camera detections of the three beacon spheres; None marks a missed sphere."""

    cam1: dict[str, PixelPoint | None]
    cam2: dict[str, PixelPoint | None]

    def triangulable(self, sphere: str) -> bool:
        """A sphere can be triangulated only if both cameras saw it."""
        return self.cam1.get(sphere) is not None and self.cam2.get(sphere) is not None

    @property
    def complete(self) -> bool:
        return all(self.triangulable(s) for s in SPHERES)


@dataclass(frozen=True)
class Pose:
    """Tip pose: position in mm (world frame) plus a rotation matrix."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        R = np.array(self.orientation, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(p)):
            raise ValueError("pose position must be finite")
        check_rotation(R)
        p.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", R)


def project(camera: CameraModel, point_m: np.ndarray) -> PixelPoint:
    """Project a world point (metres) through the pinhole model.

    Raises BehindCameraError when the point has non-positive camera depth.
    """
    pc = camera.R @ np.asarray(point_m, dtype=float).reshape(3) + camera.t
    if pc[2] <= 0.0:
        raise BehindCameraError(f"point at camera depth {pc[2]:.6g} m")
    return PixelPoint(
        camera.fx * pc[0] / pc[2] + camera.cx,
        camera.fy * pc[1] / pc[2] + camera.cy,
    )


def _ray(camera: CameraModel, px: PixelPoint) -> tuple[np.ndarray, np.ndarray]:
    """World-frame origin and unit direction of the back-projected pixel ray."""
    d_cam = np.array([(px.u - camera.cx) / camera.fx, (px.v - camera.cy) / camera.fy, 1.0])
    d = camera.R.T @ d_cam
    return camera.optical_center, d / np.linalg.norm(d)


def triangulate(
    cam1: CameraModel, cam2: CameraModel, px1: PixelPoint, px2: PixelPoint
) -> np.ndarray:
    """Reconstruct a world point (metres) from one pixel in each camera.

    Solves the two-ray least-squares problem for the depths along both
    back-projected rays (the 3x2 normal equations) and returns the midpoint
    of the closest-approach points.
    """
    o1, d1 = _ray(cam1, px1)
    o2, d2 = _ray(cam2, px2)
    if np.linalg.norm(o2 - o1) < 1e-12:
        raise DegenerateGeometryError("cameras share an optical center (zero baseline)")
    A = np.column_stack([d1, -d2])
    AtA = A.T @ A
    if np.linalg.cond(AtA) > RAY_CONDITION_LIMIT:
        raise DegenerateGeometryError("back-projected rays are near-parallel")
    s = np.linalg.solve(AtA, A.T @ (o2 - o1))
    if s[0] <= 0.0 or s[1] <= 0.0:
        raise InconsistentObservationError(
            f"recovered depths {s[0]:.6g}, {s[1]:.6g} m are not both positive"
        )
    return 0.5 * ((o1 + s[0] * d1) + (o2 + s[1] * d2))


def triangulate_beacon(
    cam1: CameraModel, cam2: CameraModel, observation: BeaconObservation
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Triangulate the green, red and blue spheres; results in millimetres."""
    if not observation.complete:
        missing = [s for s in SPHERES if not observation.triangulable(s)]
        raise ValueError(f"observation incomplete, missing spheres: {missing}")
    points = []
    for sphere in SPHERES:
        p = triangulate(cam1, cam2, observation.cam1[sphere], observation.cam2[sphere])
        points.append(p * M_TO_MM)
    return tuple(points)


def rotation_between(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Rotation matrix taking direction p onto direction q (Rodrigues form).

    Parallel inputs return the identity by convention; antiparallel inputs
    raise SingularOrientationError because the rotation axis is not unique.
    """
    p = np.asarray(p, dtype=float).reshape(3)
    q = np.asarray(q, dtype=float).reshape(3)
    np_, nq = np.linalg.norm(p), np.linalg.norm(q)
    if np_ < 1e-12 or nq < 1e-12:
        raise ValueError("rotation_between requires nonzero vectors")
    p = p / np_
    q = q / nq
    w = np.cross(p, q)
    c = float(np.dot(p, q))
    s2 = float(np.dot(w, w))
    if math.sqrt(s2) < 1e-9:
        if c > 0.0:
            return np.eye(3)
        raise SingularOrientationError("directions are antiparallel")
    W = skew(w)
    return np.eye(3) + W + ((1.0 - c) / s2) * (W @ W)


def pose_from_spheres(r_g: np.ndarray, r_r: np.ndarray, r_b: np.ndarray) -> Pose:
    """Beacon pose from the three sphere centres (mm).

    The position is the green sphere; the orientation is the rotation that
    maps the normalized green-to-red direction onto the green-to-blue one.
    """
    r_g = np.asarray(r_g, dtype=float).reshape(3)
    r_r = np.asarray(r_r, dtype=float).reshape(3)
    r_b = np.asarray(r_b, dtype=float).reshape(3)
    dp = r_r - r_g
    dq = r_b - r_g
    if np.linalg.norm(dp) < 1e-9 or np.linalg.norm(dq) < 1e-9:
        raise DegenerateBeaconError("beacon spheres coincide")
    return Pose(position=r_g, orientation=rotation_between(dp, dq))


def rotation_from_euler(yaw_deg: float, pitch_deg: float, roll_deg: float) -> np.ndarray:
    """Compose a rotation from intrinsic Z-Y-X Euler angles in degrees."""
    a, b, c = (math.radians(v) for v in (yaw_deg, pitch_deg, roll_deg))
    ca, sa = math.cos(a), math.sin(a)
    cb, sb = math.cos(b), math.sin(b)
    cc, sc = math.cos(c), math.sin(c)
    return np.array(
        [
            [ca * cb, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc],
            [sa * cb, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc],
            [-sb, cb * sc, cb * cc],
        ]
    )


def euler_from_rotation(R: np.ndarray) -> tuple[float, float, float]:
    """Intrinsic Z-Y-X (yaw, pitch, roll) angles in degrees.

    At gimbal lock (pitch = +-90 deg) the roll is set to 0 and the yaw
    absorbs the remaining rotation.
    """
    R = np.asarray(R, dtype=float)
    check_rotation(R)
    sb = -R[2, 0]
    if abs(sb) >= 1.0 - 1e-12:
        pitch = math.copysign(90.0, sb)
        if sb > 0:
            yaw = math.degrees(math.atan2(-R[0, 1], R[0, 2]))
        else:
            yaw = math.degrees(math.atan2(-R[0, 1], -R[0, 2]))
        return (yaw, pitch, 0.0)
    pitch = math.degrees(math.asin(sb))
    yaw = math.degrees(math.atan2(R[1, 0], R[0, 0]))
    roll = math.degrees(math.atan2(R[2, 1], R[2, 2]))
    return (yaw, pitch, roll)


def make_lookat_camera(
    position_m,
    target_m,
    fx: float = 1144.0,
    fy: float = 1144.0,
    cx: float = 960.0,
    cy: float = 540.0,
    image_size: tuple[int, int] = (1920, 1080),
) -> CameraModel:
    """Camera at `position_m` looking at `target_m`, image x along world-horizontal."""
    position = np.asarray(position_m, dtype=float).reshape(3)
    forward = np.asarray(target_m, dtype=float).reshape(3) - position
    nf = np.linalg.norm(forward)
    if nf < 1e-12:
        raise ValueError("camera position and target coincide")
    forward = forward / nf
    up = np.array([0.0, 0.0, 1.0])
    x_cam = np.cross(forward, up)
    nx = np.linalg.norm(x_cam)
    if nx < 1e-12:
        raise ValueError("camera looks along the world vertical; image orientation undefined")
    x_cam = x_cam / nx
    y_cam = np.cross(forward, x_cam)
    R = np.vstack([x_cam, y_cam, forward])
    return CameraModel(fx=fx, fy=fy, cx=cx, cy=cy, R=R, t=-R @ position, image_size=image_size)


def default_stereo_rig() -> tuple[CameraModel, CameraModel]:
    """Two 1920x1080, ~80 deg FOV cameras 1 m from the workspace, 0.3 m baseline."""
    target = (0.0, 0.0, 0.30)
    return (
        make_lookat_camera((1.0, -0.15, 0.30), target),
        make_lookat_camera((1.0, 0.15, 0.30), target),
    )


def load_cameras(path) -> tuple[CameraModel, CameraModel]:
    """Read a two-camera configuration file (JSON list of camera objects)."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list) or len(data) != 2:
        raise ValueError("camera config must be a JSON list of exactly two cameras")
    return tuple(CameraModel.from_dict(entry) for entry in data)


def save_cameras(cameras, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([cam.to_dict() for cam in cameras], fh, indent=2, sort_keys=True)
        fh.write("\n")

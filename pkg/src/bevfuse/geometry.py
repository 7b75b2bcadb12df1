"""Coordinate frames, rigid transforms, pinhole projection and BEV grid indexing.

Conventions used everywhere in the package:

* ego frame: x forward, y left, z up, origin at the ego vehicle.
* camera frame: x right, y down, z forward (optical axis). A CameraSpec's
  extrinsics map ego coordinates into camera coordinates (camera-from-ego).
* radar poses map sensor coordinates into ego coordinates (ego-from-sensor).
* BEV grid: row index i follows ego-forward x, column j follows ego-left y,
  the grid center is the ego position, cells are half-open [lo, hi) intervals.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidPoseError

ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class Pose:
    """Rigid transform: p_out = rotation @ p_in + translation."""

    rotation: np.ndarray  # (3, 3) orthonormal
    translation: np.ndarray  # (3,) meters

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise InvalidPoseError(
                f"pose shapes must be (3,3)/(3,), got {self.rotation.shape}/{self.translation.shape}"
            )
        self.validate()

    def validate(self):
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if not np.isfinite(self.rotation).all() or err > ORTHO_TOL:
            raise InvalidPoseError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3g})")
        if np.linalg.det(self.rotation) < 0:
            raise InvalidPoseError("rotation must be proper (det +1), got a reflection")
        if not np.isfinite(self.translation).all():
            raise InvalidPoseError("translation is not finite")

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_yaw(yaw: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        """Rotation about the z (up) axis by `yaw` radians, then translation."""
        c, s = np.cos(yaw), np.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return Pose(rot, np.asarray(translation, dtype=np.float64))

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply `other` first, then `self`."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def yaw(self) -> float:
        """Heading angle of the rotated x axis in the horizontal plane."""
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))

    def to_json(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @staticmethod
    def from_json(obj: dict) -> "Pose":
        return Pose(np.asarray(obj["rotation"]), np.asarray(obj["translation"]))


@dataclass(frozen=True)
class CameraSpec:
    """Pinhole camera: 3x3 intrinsics plus camera-from-ego extrinsics."""

    intrinsics: np.ndarray  # (3, 3), pixels
    extrinsics: Pose  # camera-from-ego
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "intrinsics", np.asarray(self.intrinsics, dtype=np.float64))
        k = self.intrinsics
        if k.shape != (3, 3):
            raise ConfigError(f"intrinsics must be 3x3, got {k.shape}")
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise ConfigError("focal lengths must be positive")
        cx, cy = k[0, 2], k[1, 2]
        if not (0 <= cx < self.width and 0 <= cy < self.height):
            raise ConfigError("principal point must lie inside the image")

    def to_json(self) -> dict:
        return {
            "intrinsics": self.intrinsics.tolist(),
            "extrinsics": self.extrinsics.to_json(),
            "width": self.width,
            "height": self.height,
        }

    @staticmethod
    def from_json(obj: dict) -> "CameraSpec":
        return CameraSpec(np.asarray(obj["intrinsics"]), Pose.from_json(obj["extrinsics"]),
                          int(obj["width"]), int(obj["height"]))


@dataclass(frozen=True)
class BevGridSpec:
    """Ego-centered BEV grid; X rows along ego-forward x, Y columns along ego-left y."""

    x_cells: int = 32
    y_cells: int = 32
    cell_size: float = 1.6  # meters per cell

    def __post_init__(self):
        if self.x_cells <= 0 or self.y_cells <= 0 or self.x_cells % 2 or self.y_cells % 2:
            raise ConfigError("cell counts must be positive and even")
        if self.cell_size <= 0:
            raise ConfigError("cell_size must be positive")

    @property
    def x_extent(self) -> float:
        """Half extent along x: cells cover [-x_extent, +x_extent)."""
        return self.x_cells * self.cell_size / 2.0

    @property
    def y_extent(self) -> float:
        return self.y_cells * self.cell_size / 2.0

    def cell_centers(self) -> np.ndarray:
        """(X, Y, 2) array of cell center (x, y) coordinates in the ego frame."""
        xs = (np.arange(self.x_cells) - self.x_cells / 2.0 + 0.5) * self.cell_size
        ys = (np.arange(self.y_cells) - self.y_cells / 2.0 + 0.5) * self.cell_size
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([gx, gy], axis=-1)

    def to_json(self) -> dict:
        return {"x_cells": self.x_cells, "y_cells": self.y_cells, "cell_size": self.cell_size}

    @staticmethod
    def from_json(obj: dict) -> "BevGridSpec":
        return BevGridSpec(int(obj["x_cells"]), int(obj["y_cells"]), float(obj["cell_size"]))


@dataclass(frozen=True)
class SensorRig:
    """All mounted sensors: cameras (camera-from-ego) and radars (ego-from-sensor)."""

    cameras: list[CameraSpec] = field(default_factory=list)
    radar_poses: list[Pose] = field(default_factory=list)

    def __post_init__(self):
        if not self.cameras or not self.radar_poses:
            raise ConfigError("rig needs at least one camera and one radar")

    @property
    def num_cameras(self) -> int:
        return len(self.cameras)

    @property
    def num_radars(self) -> int:
        return len(self.radar_poses)

    def to_json(self) -> dict:
        return {
            "cameras": [c.to_json() for c in self.cameras],
            "radar_poses": [p.to_json() for p in self.radar_poses],
        }

    @staticmethod
    def from_json(obj: dict) -> "SensorRig":
        return SensorRig([CameraSpec.from_json(c) for c in obj["cameras"]],
                         [Pose.from_json(p) for p in obj["radar_poses"]])


def transform_points(points: np.ndarray, pose: Pose) -> np.ndarray:
    """Apply a rigid transform to an (N, 3) array of points."""
    pose.validate()
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[None, :]
    if not np.isfinite(pts).all():
        raise ValueError("points must be finite")
    return pts @ pose.rotation.T + pose.translation


def project_to_image(point_ego: np.ndarray, camera: CameraSpec) -> tuple[float, float] | None:
    """Project an ego-frame point into pixel coordinates.

    Returns None for points at or behind the camera plane (depth <= 0) and
    for projections outside [0, W) x [0, H).
    """
    p_cam = camera.extrinsics.rotation @ np.asarray(point_ego, dtype=np.float64) \
        + camera.extrinsics.translation
    depth = p_cam[2]
    if depth <= 0:
        return None
    uvw = camera.intrinsics @ p_cam
    u, v = uvw[0] / depth, uvw[1] / depth
    if not (0 <= u < camera.width and 0 <= v < camera.height):
        return None
    return float(u), float(v)


def project_points_to_image(points_ego: np.ndarray, camera: CameraSpec):
    """Vectorized projection of (N, 3) ego points.

    Returns (uv, valid): uv is (N, 2) pixel coordinates (undefined where
    invalid), valid is an (N,) bool mask (depth > 0 and inside the image).
    """
    pts = np.asarray(points_ego, dtype=np.float64)
    p_cam = pts @ camera.extrinsics.rotation.T + camera.extrinsics.translation
    depth = p_cam[:, 2]
    safe = np.where(depth > 0, depth, 1.0)
    uvw = p_cam @ camera.intrinsics.T
    uv = uvw[:, :2] / safe[:, None]
    valid = (depth > 0) & (uv[:, 0] >= 0) & (uv[:, 0] < camera.width) \
        & (uv[:, 1] >= 0) & (uv[:, 1] < camera.height)
    return uv, valid


def bev_cell_of(point_ego, grid: BevGridSpec) -> tuple[int, int] | None:
    """Map an ego-frame point to its (row, col) BEV cell, or None if outside."""
    p = np.asarray(point_ego, dtype=np.float64)
    i = int(np.floor(p[0] / grid.cell_size + grid.x_cells / 2.0))
    j = int(np.floor(p[1] / grid.cell_size + grid.y_cells / 2.0))
    if 0 <= i < grid.x_cells and 0 <= j < grid.y_cells:
        return i, j
    return None


def bev_cells_of(points_ego: np.ndarray, grid: BevGridSpec):
    """Vectorized bev_cell_of for (N, 3) or (N, 2) points.

    Returns (ij, valid): ij is (N, 2) int cell indices (clipped where
    invalid), valid is the in-extent mask.
    """
    pts = np.asarray(points_ego, dtype=np.float64)
    i = np.floor(pts[:, 0] / grid.cell_size + grid.x_cells / 2.0).astype(np.int64)
    j = np.floor(pts[:, 1] / grid.cell_size + grid.y_cells / 2.0).astype(np.int64)
    valid = (i >= 0) & (i < grid.x_cells) & (j >= 0) & (j < grid.y_cells)
    ij = np.stack([np.clip(i, 0, grid.x_cells - 1), np.clip(j, 0, grid.y_cells - 1)], axis=1)
    return ij, valid

"""Radar branch: multi-radar point clouds -> BEV saliency counts -> gated embedding.

Point clouds from every radar are brought into the ego frame and binned on the
BEV grid; each cell's point count (clamped to the dictionary capacity) indexes
a learnable embedding table, and a gated unit (sigmoid branch x tanh branch)
squashes the embedded signal into the radar BEV.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import ConfigError
from .geometry import BevGridSpec, SensorRig, bev_cells_of, transform_points

ATTR_DIM = 5  # x, y, z, radial velocity, cross-section


@dataclass(frozen=True)
class RadarPoint:
    """One radar return in its sensor frame."""

    position: np.ndarray  # (3,) meters
    radial_velocity: float  # m/s, positive = receding
    cross_section: float  # dB-scaled reflectivity proxy

    def as_row(self) -> np.ndarray:
        return np.array([*np.asarray(self.position, dtype=np.float64),
                         self.radial_velocity, self.cross_section])


@dataclass
class PointCloudSet:
    """Per-sensor radar returns for one frame.

    per_sensor[i] is an (N_i, 5) float array in sensor i's frame with columns
    (x, y, z, radial_velocity, cross_section).
    """

    per_sensor: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.per_sensor = [np.asarray(c, dtype=np.float64).reshape(-1, ATTR_DIM)
                           for c in self.per_sensor]

    @property
    def num_sensors(self) -> int:
        return len(self.per_sensor)

    def total_points(self) -> int:
        return sum(len(c) for c in self.per_sensor)


def build_saliency(clouds: PointCloudSet, rig: SensorRig, grid: BevGridSpec) -> np.ndarray:
    """Count ego-frame radar points per BEV cell.

    Each sensor's points are moved to the ego frame through the sensor's
    mounting pose, then binned by their (x, y); points outside the grid extent
    are dropped. Returns an (X, Y) int64 count matrix.
    """
    if clouds.num_sensors > rig.num_radars:
        raise ConfigError(
            f"point clouds reference {clouds.num_sensors} sensors but rig has {rig.num_radars}"
        )
    counts = np.zeros((grid.x_cells, grid.y_cells), dtype=np.int64)
    for sensor_idx, cloud in enumerate(clouds.per_sensor):
        if len(cloud) == 0:
            continue
        pts_ego = transform_points(cloud[:, :3], rig.radar_poses[sensor_idx])
        ij, valid = bev_cells_of(pts_ego, grid)
        np.add.at(counts, (ij[valid, 0], ij[valid, 1]), 1)
    return counts


def embed_saliency(saliency: np.ndarray | torch.Tensor, table: torch.Tensor) -> torch.Tensor:
    """Look up an embedding row per cell, clamping counts at the capacity K.

    `table` has K+1 rows (tokens 0..K); counts above K saturate to K. Returns
    an (X, Y, C) tensor that is differentiable w.r.t. the table.
    """
    if isinstance(saliency, np.ndarray):
        saliency = torch.from_numpy(saliency)
    tokens = saliency.long().clamp(0, table.shape[0] - 1)
    return table[tokens]


def gated_unit(embedded: torch.Tensor, w1: torch.Tensor, b1: torch.Tensor,
               w2: torch.Tensor, b2: torch.Tensor) -> torch.Tensor:
    """sigmoid(W1 e + b1) * tanh(W2 e + b2), applied per cell.

    `embedded` is (..., C); weight matrices are (C, C) applied as e @ W^T + b.
    Every output entry lies strictly inside (-1, 1).
    """
    return torch.sigmoid(embedded @ w1.T + b1) * torch.tanh(embedded @ w2.T + b2)


class GatedUnit(nn.Module):
    """Learnable parameters for the gated filter."""

    def __init__(self, channels: int):
        super().__init__()
        std = 1.0 / np.sqrt(channels)
        self.w1 = nn.Parameter(torch.randn(channels, channels) * std)
        self.b1 = nn.Parameter(torch.zeros(channels))
        self.w2 = nn.Parameter(torch.randn(channels, channels) * std)
        self.b2 = nn.Parameter(torch.zeros(channels))

    def forward(self, embedded: torch.Tensor) -> torch.Tensor:
        return gated_unit(embedded, self.w1, self.b1, self.w2, self.b2)


class RadarBackbone(nn.Module):
    """Embedding dictionary + gated unit; maps a saliency count grid to the radar BEV.

    capacity: largest distinguishable per-cell count (table has capacity+1 rows).
    """

    def __init__(self, channels: int = 32, capacity: int = 10):
        super().__init__()
        if capacity < 1:
            raise ConfigError("capacity must be >= 1")
        self.channels = channels
        self.capacity = capacity
        self.embedding = nn.Parameter(torch.randn(capacity + 1, channels) * 0.02)
        self.gate = GatedUnit(channels)

    def forward(self, saliency: np.ndarray | torch.Tensor) -> torch.Tensor:
        """(X, Y) counts -> (X, Y, C) radar BEV with entries in (-1, 1)."""
        embedded = embed_saliency(saliency, self.embedding)
        return self.gate(embedded)

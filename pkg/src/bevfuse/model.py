"""Full camera-radar fusion detector assembled from the package's blocks."""
from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .bev_encoder import BevEncoder
from .detection import ContextHeads, DetectionHead
from .geometry import BevGridSpec, Pose, SensorRig
from .radar_backbone import RadarBackbone


class FusionDetector(nn.Module):
    """Radar backbone + BEV encoder + detection and context heads.

    forward() consumes one frame and optionally the previous BEV (temporal
    carry); `use_radar=False` replaces the radar BEV with zeros, yielding the
    camera-only ablation path without changing the parameter census.
    """

    def __init__(self, rig: SensorRig, grid: BevGridSpec, channels: int = 32,
                 n_heads: int = 4, num_layers: int = 2, num_queries: int = 20,
                 capacity: int = 10, pillar_heights: tuple[float, ...] = (-1.0, 0.0, 1.0)):
        super().__init__()
        self.grid = grid
        self.radar = RadarBackbone(channels=channels, capacity=capacity)
        self.encoder = BevEncoder(rig, grid, channels=channels, n_heads=n_heads,
                                  num_layers=num_layers, pillar_heights=pillar_heights)
        self.head = DetectionHead(channels=channels, num_queries=num_queries,
                                  n_heads=n_heads)
        self.context = ContextHeads(channels=channels)

    def forward(self, images: torch.Tensor, saliency: np.ndarray | torch.Tensor,
                prev_bev: torch.Tensor | None = None, ego_motion: Pose | None = None,
                use_radar: bool = True) -> dict[str, torch.Tensor]:
        radar_bev = self.radar(saliency) if use_radar else None
        bev = self.encoder(images, radar_bev, prev_bev, ego_motion)
        class_logits, box_raw = self.head(bev)
        rain_logit, night_logit = self.context(bev)
        return {
            "bev": bev,
            "class_logits": class_logits,
            "box_raw": box_raw,
            "rain_logit": rain_logit,
            "night_logit": night_logit,
        }

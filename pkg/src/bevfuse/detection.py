"""Set-prediction detection head, context heads, matching and losses.

Boxes carry 10 raw parameters: center (x, y, z), size (l, w, h), yaw encoded
as (sin, cos) in the regression target, and planar velocity (vx, vy). A fixed
set of learnable object queries cross-attends to the flattened BEV and decodes
class logits (real classes + no-object) and box parameters; rain and
time-of-day logits come from two independent linear heads over the pooled BEV.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from torch import nn

from .geometry import BevGridSpec

CLASSES = ("vehicle", "motorcycle", "pedestrian", "barrier")
ATTRIBUTES = ("stopped", "moving")
BOX_PARAMS = 10
Z_SPAN = 4.0  # decoded box centers span [-2, 2] m vertically
MOVING_SPEED = 0.5  # m/s; decoded attribute threshold
CENTER_GAIN = 4.0  # logit scale of the center sigmoid; sets center step size
ANGLE_GAIN = 2.0  # output scale of the sin/cos channels
VELOCITY_GAIN = 4.0  # output scale of the velocity channels (still plain m/s)


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    a = (angle + np.pi) % (2.0 * np.pi) - np.pi
    return float(np.pi) if a == -np.pi else float(a)


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D box in the ego frame."""

    center: np.ndarray  # (3,) meters
    size: np.ndarray  # (l, w, h) meters
    yaw: float  # radians, (-pi, pi]
    velocity: np.ndarray  # (vx, vy) m/s

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, "size", np.asarray(self.size, dtype=np.float64))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=np.float64))
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))
        if (self.size <= 0).any():
            raise ValueError(f"box sizes must be positive, got {self.size}")

    def params(self) -> np.ndarray:
        """10-vector regression target: center, size, sin/cos yaw, velocity."""
        return np.concatenate([self.center, self.size,
                               [np.sin(self.yaw), np.cos(self.yaw)], self.velocity])

    def footprint_corners(self) -> np.ndarray:
        """(4, 2) ground-plane corner coordinates, counterclockwise."""
        l, w = self.size[0], self.size[1]
        local = np.array([[l, w], [-l, w], [-l, -w], [l, -w]]) / 2.0
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + self.center[:2]


@dataclass(frozen=True)
class Annotation:
    """Ground-truth object: box, class index and binary motion attribute."""

    box: Box3D
    class_id: int
    attribute_id: int  # index into ATTRIBUTES

    def __post_init__(self):
        if not 0 <= self.class_id < len(CLASSES):
            raise ValueError(f"class_id {self.class_id} out of range")
        if self.attribute_id not in (0, 1):
            raise ValueError(f"attribute_id {self.attribute_id} out of range")


@dataclass(frozen=True)
class Detection:
    """Predicted object: box, class scores (incl. no-object) and confidence."""

    box: Box3D
    class_id: int
    confidence: float
    attribute_id: int = 0
    scores: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.scores is not None:
            s = np.asarray(self.scores, dtype=np.float64)
            object.__setattr__(self, "scores", s)
            if abs(s.sum() - 1.0) > 1e-6:
                raise ValueError("class scores must sum to 1")


@dataclass(frozen=True)
class ContextPrediction:
    rain_logit: float
    night_logit: float


@dataclass(frozen=True)
class LossBreakdown:
    l_det: float
    l_rain: float
    l_tod: float
    l_joint: float


class DetectionHead(nn.Module):
    """Object queries -> one cross-attention layer over BEV cells -> two branches."""

    def __init__(self, channels: int = 32, num_queries: int = 20, n_heads: int = 4,
                 num_classes: int = len(CLASSES)):
        super().__init__()
        self.num_queries = num_queries
        self.num_classes = num_classes
        self.n_heads = n_heads
        self.object_queries = nn.Parameter(torch.randn(num_queries, channels) * 0.02)
        self.q_proj = nn.Linear(channels, channels)
        self.k_proj = nn.Linear(channels, channels)
        self.v_proj = nn.Linear(channels, channels)
        self.out_proj = nn.Linear(channels, channels)
        self.class_branch = nn.Linear(channels, num_classes + 1)
        self.box_branch = nn.Sequential(
            nn.Linear(channels, channels), nn.ReLU(), nn.Linear(channels, BOX_PARAMS))

    def forward(self, bev: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(X, Y, C) BEV -> class logits (N_q, classes+1) and raw boxes (N_q, 10)."""
        channels = bev.shape[-1]
        cells = bev.reshape(-1, channels)
        dh = channels // self.n_heads
        q = self.q_proj(self.object_queries).reshape(self.num_queries, self.n_heads, dh)
        k = self.k_proj(cells).reshape(-1, self.n_heads, dh)
        v = self.v_proj(cells).reshape(-1, self.n_heads, dh)
        logits = torch.einsum("qhd,nhd->qhn", q, k) / np.sqrt(dh)
        attn = torch.softmax(logits, dim=-1)
        self.last_attention = attn.detach()  # (N_q, heads, N_cells)
        ctx = torch.einsum("qhn,nhd->qhd", attn, v).reshape(self.num_queries, channels)
        hidden = self.object_queries + self.out_proj(ctx)
        return self.class_branch(hidden), self.box_branch(hidden)


class ContextHeads(nn.Module):
    """Rain and time-of-day logits from the globally pooled BEV."""

    def __init__(self, channels: int = 32):
        super().__init__()
        self.rain = nn.Linear(channels, 1)
        self.tod = nn.Linear(channels, 1)

    def forward(self, bev: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        pooled = bev.mean(dim=(0, 1))
        return self.rain(pooled).squeeze(-1), self.tod(pooled).squeeze(-1)


def box_params_from_raw(raw: torch.Tensor, grid: BevGridSpec) -> torch.Tensor:
    """Decode raw head outputs to physical box parameters.

    Centers go through a sigmoid spanning the grid extent (z spans Z_SPAN),
    sizes through an exponential; yaw sin/cos and velocity stay raw. Output
    matches Box3D.params() layout.
    """
    cx = (torch.sigmoid(CENTER_GAIN * raw[:, 0]) - 0.5) * (2.0 * grid.x_extent)
    cy = (torch.sigmoid(CENTER_GAIN * raw[:, 1]) - 0.5) * (2.0 * grid.y_extent)
    cz = (torch.sigmoid(CENTER_GAIN * raw[:, 2]) - 0.5) * Z_SPAN
    sizes = torch.exp(raw[:, 3:6])
    return torch.cat([torch.stack([cx, cy, cz], dim=1), sizes,
                      ANGLE_GAIN * raw[:, 6:8], VELOCITY_GAIN * raw[:, 8:10]], dim=1)


def detections_from_params(params: np.ndarray, class_probs: np.ndarray) -> list[Detection]:
    """Turn decoded parameters + class probabilities into Detection objects.

    Confidence is the best real-class probability; the binary motion attribute
    is decoded from the predicted planar speed.
    """
    dets = []
    n_real = class_probs.shape[1] - 1
    for row, probs in zip(params, class_probs):
        sin_y, cos_y = row[6], row[7]
        yaw = float(np.arctan2(sin_y, cos_y)) if (sin_y or cos_y) else 0.0
        box = Box3D(center=row[:3], size=np.maximum(row[3:6], 1e-3), yaw=yaw,
                    velocity=row[8:10])
        class_id = int(np.argmax(probs[:n_real]))
        speed = float(np.hypot(row[8], row[9]))
        dets.append(Detection(box=box, class_id=class_id,
                              confidence=float(probs[class_id]),
                              attribute_id=int(speed > MOVING_SPEED),
                              scores=probs))
    return dets


def hungarian_match(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment of size min(N_q, N_k).

    Deterministic tie-break: among all minimum-cost assignments, returns the
    one whose row-sorted (row, col) pair list is lexicographically smallest.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix must be finite")
    n_rows, n_cols = cost.shape
    size = min(n_rows, n_cols)
    if size == 0:
        return []

    def lap_total(m: np.ndarray) -> float:
        if min(m.shape) == 0:
            return 0.0
        r, c = linear_sum_assignment(m)
        return float(m[r, c].sum())

    opt = lap_total(cost)
    tol = 1e-9 * max(1.0, float(np.abs(cost).max())) * (size + 1)
    pairs: list[tuple[int, int]] = []
    fixed = 0.0
    row_lo = 0
    cols = list(range(n_cols))
    for slot in range(size):
        need = size - slot - 1
        placed = False
        for r in range(row_lo, n_rows - need):
            for c in cols:
                cand = fixed + cost[r, c]
                if cand - tol > opt:
                    continue
                if need:
                    rest = [c2 for c2 in cols if c2 != c]
                    sub = cost[r + 1:, rest]
                    # cheap bound on the best completion before a full solve
                    lb = sub.min(axis=0).sum() if sub.shape[1] <= sub.shape[0] \
                        else sub.min(axis=1).sum()
                    if cand + lb - tol > opt:
                        continue
                    total = cand + lap_total(sub)
                else:
                    total = cand
                if total <= opt + tol:
                    pairs.append((r, c))
                    fixed += cost[r, c]
                    row_lo = r + 1
                    cols.remove(c)
                    placed = True
                    break
            if placed:
                break
        if not placed:  # numerically impossible; guard against tol misjudgment
            r, c = linear_sum_assignment(cost)
            return sorted(zip(r.tolist(), c.tolist()))
    return pairs


def detection_loss(class_logits: torch.Tensor, box_params: torch.Tensor,
                   target_classes: np.ndarray, target_boxes: np.ndarray,
                   lambda_cls: float = 1.0, lambda_box: float = 5.0):
    """Set-to-set detection loss after Hungarian matching.

    Match cost per (query, target): lambda_cls * (-log p(class)) +
    lambda_box * L1(box params). The loss is lambda_cls times the mean
    cross-entropy over all queries (matched queries against their target
    class, the rest against no-object) plus lambda_box times the summed L1
    over matched pairs normalized by max(N_k, 1).

    Returns (loss tensor, matched pair list).
    """
    num_queries = class_logits.shape[0]
    no_object = class_logits.shape[1] - 1
    n_targets = len(target_classes)
    log_probs = torch.log_softmax(class_logits, dim=1)

    labels = torch.full((num_queries,), no_object, dtype=torch.long)
    pairs: list[tuple[int, int]] = []
    box_loss = class_logits.new_zeros(())
    if n_targets:
        tgt_boxes = torch.as_tensor(target_boxes, dtype=box_params.dtype)
        with torch.no_grad():
            cls_cost = -log_probs[:, torch.as_tensor(target_classes, dtype=torch.long)]
            l1_cost = torch.cdist(box_params, tgt_boxes, p=1)
            cost = lambda_cls * cls_cost + lambda_box * l1_cost
        pairs = hungarian_match(cost.numpy())
        for q_idx, t_idx in pairs:
            labels[q_idx] = int(target_classes[t_idx])
            box_loss = box_loss + torch.abs(box_params[q_idx] - tgt_boxes[t_idx]).sum()
    cls_loss = -log_probs[torch.arange(num_queries), labels].mean()
    loss = lambda_cls * cls_loss + lambda_box * box_loss / max(n_targets, 1)
    return loss, pairs


def binary_ce(logit, label) -> torch.Tensor:
    """Numerically stable binary cross-entropy on a single logit."""
    if isinstance(logit, torch.Tensor):
        x = logit
    else:
        x = torch.as_tensor(float(logit), dtype=torch.float64)
    z = float(label)
    return torch.clamp(x, min=0) - x * z + torch.log1p(torch.exp(-torch.abs(x)))


def joint_loss(l_det, l_rain, l_tod) -> LossBreakdown:
    """Sum the three task losses; reports all four values.

    l_joint is the exact float sum of the three reported components.
    """
    def as_float(v):
        return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)

    d, r, t = as_float(l_det), as_float(l_rain), as_float(l_tod)
    return LossBreakdown(d, r, t, d + r + t)

"""BEV encoder: image features + radar BEV queries + temporal/spatial attention.

The encoder forms BEV queries as radar BEV plus a learnable positional
embedding, lets each cell attend over its own query and the ego-motion-aligned
previous BEV (temporal self-attention), then over image features sampled at
camera projections of pillar reference points (spatial cross-attention),
followed by a per-cell feed-forward. The block repeats for `num_layers`, each
layer consuming the previous layer's BEV output as queries.

Attention here is dense over the small sampled key sets (two temporal keys,
one key per pillar height), which keeps every step exactly testable at toy
grid sizes.
"""
from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .errors import ConfigError
from .geometry import BevGridSpec, Pose, SensorRig, project_points_to_image

FEATURE_STRIDE = 4


class ImageBackbone(nn.Module):
    """Three-stage convolutional stack: (N, 3, H, W) -> (N, C, H/4, W/4)."""

    def __init__(self, channels: int = 32):
        super().__init__()
        self.channels = channels
        self.conv1 = nn.Conv2d(3, channels, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(channels, channels, 3, stride=1, padding=1)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() != 4 or images.shape[1] != 3:
            raise ValueError(f"expected (N, 3, H, W) images, got {tuple(images.shape)}")
        if images.shape[2] % FEATURE_STRIDE or images.shape[3] % FEATURE_STRIDE:
            raise ValueError("image height/width must be divisible by 4")
        x = torch.relu(self.conv1(images))
        x = torch.relu(self.conv2(x))
        return self.conv3(x)


def make_bev_queries(radar_bev: torch.Tensor, pos_embed: torch.Tensor) -> torch.Tensor:
    """Elementwise sum of the radar BEV and the positional embedding."""
    if radar_bev.shape != pos_embed.shape:
        raise ValueError(f"shape mismatch {tuple(radar_bev.shape)} vs {tuple(pos_embed.shape)}")
    return radar_bev + pos_embed


def align_prev_bev(prev: torch.Tensor, ego_motion: Pose, grid: BevGridSpec) -> torch.Tensor:
    """Resample the previous BEV into the current ego frame.

    `ego_motion` maps current-ego coordinates into previous-ego coordinates
    (prev_pose.inverse().compose(cur_pose) for world-frame ego poses); only its
    planar part (yaw + x/y translation) is used. Bilinear sampling, zero fill
    for cells that land outside the previous extent.
    """
    x_cells, y_cells, _ = prev.shape
    centers = grid.cell_centers().reshape(-1, 2)  # current-frame cell centers
    yaw = ego_motion.yaw()
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, -s], [s, c]])
    prev_xy = centers @ rot.T + ego_motion.translation[:2]
    gx = prev_xy[:, 0] / grid.cell_size + x_cells / 2.0 - 0.5
    gy = prev_xy[:, 1] / grid.cell_size + y_cells / 2.0 - 0.5

    i0 = np.floor(gx).astype(np.int64)
    j0 = np.floor(gy).astype(np.int64)
    wx = torch.as_tensor(gx - i0, dtype=prev.dtype)
    wy = torch.as_tensor(gy - j0, dtype=prev.dtype)

    flat = prev.reshape(-1, prev.shape[-1])
    out = torch.zeros_like(flat)
    for di, wxc in ((0, 1.0 - wx), (1, wx)):
        for dj, wyc in ((0, 1.0 - wy), (1, wy)):
            ii, jj = i0 + di, j0 + dj
            ok = (ii >= 0) & (ii < x_cells) & (jj >= 0) & (jj < y_cells)
            idx = np.clip(ii, 0, x_cells - 1) * y_cells + np.clip(jj, 0, y_cells - 1)
            w = (wxc * wyc) * torch.as_tensor(ok, dtype=prev.dtype)
            out = out + w[:, None] * flat[torch.from_numpy(idx)]
    return out.reshape(prev.shape)


def _split_heads(x: torch.Tensor, n_heads: int) -> torch.Tensor:
    """(..., C) -> (..., n_heads, C // n_heads)."""
    return x.reshape(*x.shape[:-1], n_heads, x.shape[-1] // n_heads)


class TemporalSelfAttention(nn.Module):
    """Per-cell multi-head attention over {current query, aligned previous BEV}.

    With no previous BEV the key/value set duplicates the current query. The
    residual connection adds the input queries.
    """

    def __init__(self, channels: int, n_heads: int):
        super().__init__()
        if channels % n_heads:
            raise ConfigError("channels must be divisible by n_heads")
        self.n_heads = n_heads
        self.q_proj = nn.Linear(channels, channels)
        self.k_proj = nn.Linear(channels, channels)
        self.v_proj = nn.Linear(channels, channels)
        self.out_proj = nn.Linear(channels, channels)

    def forward(self, queries: torch.Tensor, prev: torch.Tensor | None) -> torch.Tensor:
        x_cells, y_cells, channels = queries.shape
        q_in = queries.reshape(-1, channels)  # (N, C)
        prev_flat = q_in if prev is None else prev.reshape(-1, channels)
        kv = torch.stack([q_in, prev_flat], dim=1)  # (N, 2, C)

        q = _split_heads(self.q_proj(q_in), self.n_heads)  # (N, H, dh)
        k = _split_heads(self.k_proj(kv), self.n_heads)  # (N, 2, H, dh)
        v = _split_heads(self.v_proj(kv), self.n_heads)
        scale = 1.0 / np.sqrt(q.shape[-1])
        logits = torch.einsum("nhd,nkhd->nhk", q, k) * scale
        attn = torch.softmax(logits, dim=-1)
        self.last_attention = attn.detach()  # (N, heads, 2), rows sum to 1
        ctx = torch.einsum("nhk,nkhd->nhd", attn, v).reshape(-1, channels)
        return queries + self.out_proj(ctx).reshape(x_cells, y_cells, channels)


def compute_reference_pixels(rig: SensorRig, grid: BevGridSpec,
                             pillar_heights: tuple[float, ...]):
    """Project pillar reference points of every BEV cell into every camera.

    Returns (feat_xy, valid): feat_xy is (N_cells, N_cam, n_heights, 2) float32
    continuous feature-map coordinates (column, row) at 1/4 image resolution;
    valid marks projections with positive depth inside the image.
    """
    centers = grid.cell_centers().reshape(-1, 2)
    n_cells, n_h = len(centers), len(pillar_heights)
    feat_xy = np.zeros((n_cells, rig.num_cameras, n_h, 2), dtype=np.float32)
    valid = np.zeros((n_cells, rig.num_cameras, n_h), dtype=bool)
    for h_idx, z in enumerate(pillar_heights):
        pts = np.concatenate([centers, np.full((n_cells, 1), z)], axis=1)
        for cam_idx, cam in enumerate(rig.cameras):
            uv, ok = project_points_to_image(pts, cam)
            # pixel coordinate -> continuous index in the stride-4 feature map
            feat_xy[:, cam_idx, h_idx, 0] = (uv[:, 0] + 0.5) / FEATURE_STRIDE - 0.5
            feat_xy[:, cam_idx, h_idx, 1] = (uv[:, 1] + 0.5) / FEATURE_STRIDE - 0.5
            valid[:, cam_idx, h_idx] = ok
    return torch.from_numpy(feat_xy), torch.from_numpy(valid)


def bilinear_sample(fmap: torch.Tensor, fx: torch.Tensor, fy: torch.Tensor) -> torch.Tensor:
    """Sample a (C, h, w) feature map at continuous (fx, fy) with border clamp.

    fx indexes columns, fy rows; both are flat (M,) tensors. Returns (M, C).
    Reference implementation; the encoder uses the precomputed gather below.
    """
    _, h, w = fmap.shape
    x0 = torch.floor(fx)
    y0 = torch.floor(fy)
    wx = (fx - x0).to(fmap.dtype)
    wy = (fy - y0).to(fmap.dtype)
    x0 = x0.long()
    y0 = y0.long()
    out = None
    for dx, wxc in ((0, 1.0 - wx), (1, wx)):
        for dy, wyc in ((0, 1.0 - wy), (1, wy)):
            xi = (x0 + dx).clamp(0, w - 1)
            yi = (y0 + dy).clamp(0, h - 1)
            val = fmap[:, yi, xi].T * (wxc * wyc)[:, None]
            out = val if out is None else out + val
    return out


def precompute_sampling(feat_xy: torch.Tensor, valid: torch.Tensor,
                        feat_h: int, feat_w: int):
    """Bilinear sampling positions as flat gather indices plus corner weights.

    Border-clamp interpolation over a (feat_h, feat_w) map. Returns
    (corner_idx, corner_w), both (N_cells, N_cam, n_h, 4); invalid samples get
    index 0 and weight 0 so downstream masking never sees NaNs.
    """
    xy = feat_xy.numpy().astype(np.float64)
    fx, fy = xy[..., 0], xy[..., 1]
    fx = np.where(np.isfinite(fx), fx, 0.0)
    fy = np.where(np.isfinite(fy), fy, 0.0)
    x0 = np.floor(np.clip(fx, -1, feat_w))
    y0 = np.floor(np.clip(fy, -1, feat_h))
    wx = fx - x0
    wy = fy - y0
    idx, wgt = [], []
    for dx, wxc in ((0, 1.0 - wx), (1, wx)):
        for dy, wyc in ((0, 1.0 - wy), (1, wy)):
            xi = np.clip(x0 + dx, 0, feat_w - 1).astype(np.int64)
            yi = np.clip(y0 + dy, 0, feat_h - 1).astype(np.int64)
            idx.append(yi * feat_w + xi)
            wgt.append(wxc * wyc)
    corner_idx = np.stack(idx, axis=-1)
    corner_w = np.stack(wgt, axis=-1)
    ok = valid.numpy()
    corner_idx[~ok] = 0
    corner_w[~ok] = 0.0
    # bake per-camera offsets in so sampling is one flat row gather
    n_cam = corner_idx.shape[1]
    cam_offset = (np.arange(n_cam) * (feat_h * feat_w)).reshape(1, n_cam, 1, 1)
    corner_idx = corner_idx + cam_offset
    return torch.from_numpy(corner_idx), torch.from_numpy(corner_w.astype(np.float32))


def gather_samples(feats: torch.Tensor, corner_idx: torch.Tensor,
                   corner_w: torch.Tensor) -> torch.Tensor:
    """Evaluate precomputed bilinear samples for all cameras in one gather.

    feats: (N_cam, C, h, w); corner_idx carries camera offsets already.
    Returns (N_cells, N_cam, n_h, C).
    """
    channels = feats.shape[1]
    rows = feats.permute(0, 2, 3, 1).contiguous().view(-1, channels)
    vals = rows.index_select(0, corner_idx.reshape(-1)) \
        .view(*corner_idx.shape, channels)  # (N, cam, n_h, 4, C)
    return (vals * corner_w.to(feats.dtype)[..., None]).sum(dim=3)


class SpatialCrossAttention(nn.Module):
    """Attention of each BEV cell over image features sampled along its pillar.

    Per camera with at least one valid pillar hit, the cell's query attends
    over that camera's sampled values; camera contexts are averaged and added
    through the output projection. Cells visible in no camera pass through
    unchanged.
    """

    def __init__(self, channels: int, n_heads: int):
        super().__init__()
        if channels % n_heads:
            raise ConfigError("channels must be divisible by n_heads")
        self.n_heads = n_heads
        self.q_proj = nn.Linear(channels, channels)
        self.k_proj = nn.Linear(channels, channels)
        self.v_proj = nn.Linear(channels, channels)
        self.out_proj = nn.Linear(channels, channels)

    def forward(self, bev: torch.Tensor, feats: torch.Tensor,
                corner_idx: torch.Tensor, corner_w: torch.Tensor,
                valid: torch.Tensor) -> torch.Tensor:
        x_cells, y_cells, channels = bev.shape
        n_cells = x_cells * y_cells
        cells = bev.reshape(n_cells, channels)
        sampled = gather_samples(feats, corner_idx, corner_w)  # invalid -> 0

        q = _split_heads(self.q_proj(cells), self.n_heads)  # (N, H, dh)
        k = _split_heads(self.k_proj(sampled), self.n_heads)  # (N, cam, n_h, H, dh)
        v = _split_heads(self.v_proj(sampled), self.n_heads)
        scale = 1.0 / np.sqrt(q.shape[-1])
        logits = torch.einsum("nhd,nckhd->nchk", q, k) * scale  # (N, cam, H, n_h)
        logits = logits.masked_fill(~valid[:, :, None, :], -1e30)
        attn = torch.softmax(logits, dim=-1)
        self.last_attention = attn.detach()  # rows over valid samples sum to 1
        ctx_cam = torch.einsum("nchk,nckhd->nchd", attn, v)  # (N, cam, H, dh)

        cam_hit = valid.any(dim=-1)  # (N, cam)
        denom = cam_hit.sum(dim=1).clamp(min=1).to(bev.dtype)
        ctx = (ctx_cam * cam_hit[:, :, None, None].to(bev.dtype)).sum(dim=1)
        ctx = (ctx / denom[:, None, None]).reshape(n_cells, channels)

        any_hit = cam_hit.any(dim=1, keepdim=True).to(bev.dtype)
        out = cells + any_hit * self.out_proj(ctx)
        return out.reshape(x_cells, y_cells, channels)


class FeedForward(nn.Module):
    """Per-cell two-layer MLP with residual connection."""

    def __init__(self, channels: int, hidden_mult: int = 2):
        super().__init__()
        self.fc1 = nn.Linear(channels, hidden_mult * channels)
        self.fc2 = nn.Linear(hidden_mult * channels, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.fc2(torch.relu(self.fc1(x)))


class EncoderLayer(nn.Module):
    def __init__(self, channels: int, n_heads: int):
        super().__init__()
        self.temporal = TemporalSelfAttention(channels, n_heads)
        self.spatial = SpatialCrossAttention(channels, n_heads)
        self.ffn = FeedForward(channels)

    def forward(self, x, prev, feats, corner_idx, corner_w, valid):
        x = self.temporal(x, prev)
        x = self.spatial(x, feats, corner_idx, corner_w, valid)
        return self.ffn(x)


class BevEncoder(nn.Module):
    """Full encoder stack bound to a sensor rig and BEV grid.

    forward(images, radar_bev, prev_bev, ego_motion) -> (X, Y, C) BEV features.
    """

    def __init__(self, rig: SensorRig, grid: BevGridSpec, channels: int = 32,
                 n_heads: int = 4, num_layers: int = 2,
                 pillar_heights: tuple[float, ...] = (-1.0, 0.0, 1.0)):
        super().__init__()
        sizes = {(c.height, c.width) for c in rig.cameras}
        if len(sizes) != 1:
            raise ConfigError("all cameras must share one image size")
        (img_h, img_w), = sizes
        self.grid = grid
        self.channels = channels
        self.pos_embed = nn.Parameter(torch.randn(grid.x_cells, grid.y_cells, channels) * 0.02)
        self.backbone = ImageBackbone(channels)
        self.layers = nn.ModuleList(EncoderLayer(channels, n_heads) for _ in range(num_layers))
        self.image_hw = (img_h, img_w)
        feat_xy, valid = compute_reference_pixels(rig, grid, pillar_heights)
        corner_idx, corner_w = precompute_sampling(
            feat_xy, valid, img_h // FEATURE_STRIDE, img_w // FEATURE_STRIDE)
        self.register_buffer("ref_xy", feat_xy, persistent=False)
        self.register_buffer("ref_valid", valid, persistent=False)
        self.register_buffer("ref_corner_idx", corner_idx, persistent=False)
        self.register_buffer("ref_corner_w", corner_w, persistent=False)

    def forward(self, images: torch.Tensor, radar_bev: torch.Tensor | None,
                prev_bev: torch.Tensor | None = None,
                ego_motion: Pose | None = None) -> torch.Tensor:
        if tuple(images.shape[-2:]) != self.image_hw:
            raise ValueError(f"expected {self.image_hw} images per the rig, "
                             f"got {tuple(images.shape[-2:])}")
        if radar_bev is None:
            radar_bev = torch.zeros_like(self.pos_embed)
        x = make_bev_queries(radar_bev, self.pos_embed)
        aligned = None
        if prev_bev is not None:
            motion = ego_motion if ego_motion is not None else Pose.identity()
            aligned = align_prev_bev(prev_bev, motion, self.grid)
        feats = self.backbone(images)
        for layer in self.layers:
            x = layer(x, aligned, feats, self.ref_corner_idx, self.ref_corner_w,
                      self.ref_valid)
        return x

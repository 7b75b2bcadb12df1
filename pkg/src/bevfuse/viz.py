"""Static BEV visualization: ground truth vs predictions, side by side."""
from __future__ import annotations

import numpy as np
from PIL import Image

from .detection import CLASSES, Annotation, Detection
from .errors import DataError
from .geometry import BevGridSpec
from .synthetic import CLASS_COLORS

PANEL_PX = 320
MARGIN_PX = 8


def _to_px(xy: np.ndarray, grid: BevGridSpec) -> np.ndarray:
    """Ego (x, y) -> panel pixel (col, row); ego-forward points up."""
    col = (grid.y_extent - xy[:, 1]) / (2.0 * grid.y_extent) * (PANEL_PX - 1)
    row = (grid.x_extent - xy[:, 0]) / (2.0 * grid.x_extent) * (PANEL_PX - 1)
    return np.stack([col, row], axis=1)


def _draw_segment(canvas: np.ndarray, a: np.ndarray, b: np.ndarray, color):
    n = int(max(abs(b - a).max() * 2, 1)) + 1
    for t in np.linspace(0.0, 1.0, n):
        c = a + (b - a) * t
        col, row = int(round(c[0])), int(round(c[1]))
        if 0 <= row < canvas.shape[0] and 0 <= col < canvas.shape[1]:
            canvas[row, col] = color


def _draw_box(canvas: np.ndarray, corners_px: np.ndarray, color):
    for k in range(4):
        _draw_segment(canvas, corners_px[k], corners_px[(k + 1) % 4], color)


def _draw_panel(canvas: np.ndarray, boxes, grid: BevGridSpec):
    canvas[...] = 0.08
    border = np.array([0.3, 0.3, 0.3])
    canvas[0, :] = border
    canvas[-1, :] = border
    canvas[:, 0] = border
    canvas[:, -1] = border
    center = PANEL_PX // 2
    canvas[center - 2:center + 3, center] = (0.9, 0.9, 0.9)
    canvas[center, center - 2:center + 3] = (0.9, 0.9, 0.9)
    for box, class_id in boxes:
        color = np.asarray(CLASS_COLORS[CLASSES[class_id]])
        corners = _to_px(box.footprint_corners(), grid)
        _draw_box(canvas, corners, color)


def render_bev_comparison(annotations: list[Annotation], detections: list[Detection],
                          grid: BevGridSpec, out_path: str,
                          confidence_threshold: float = 0.3):
    """Write a two-panel PNG: ground truth on the left, predictions on the right."""
    width = 2 * PANEL_PX + 3 * MARGIN_PX
    height = PANEL_PX + 2 * MARGIN_PX
    canvas = np.full((height, width, 3), 0.02, dtype=np.float64)
    left = canvas[MARGIN_PX:MARGIN_PX + PANEL_PX, MARGIN_PX:MARGIN_PX + PANEL_PX]
    right = canvas[MARGIN_PX:MARGIN_PX + PANEL_PX,
                   2 * MARGIN_PX + PANEL_PX:2 * MARGIN_PX + 2 * PANEL_PX]
    _draw_panel(left, [(a.box, a.class_id) for a in annotations], grid)
    kept = [d for d in detections if d.confidence >= confidence_threshold]
    _draw_panel(right, [(d.box, d.class_id) for d in kept], grid)
    img = np.round(np.clip(canvas, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(img, mode="RGB").save(out_path)


def find_frame(dataset, frame_id: str):
    for scene in dataset.scenes:
        for frame in scene.frames:
            if frame.frame_id == frame_id:
                return frame
    raise DataError(f"frame {frame_id!r} not found in dataset")

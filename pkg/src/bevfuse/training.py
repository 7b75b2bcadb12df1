"""Training loop, checkpoint container and evaluation orchestration.

One optimizer step consumes one scene: frames run forward in temporal order
with the previous BEV carried (detached) between frames, the per-frame
detection / rain / time-of-day losses are averaged over the scene, summed into
the joint loss and backpropagated. `with_rb=False` zeroes the radar BEV,
`with_mtl=False` drops the two context losses; both leave the parameter
census untouched so ablations stay comparable.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import metrics as metrics_mod
from .detection import binary_ce, box_params_from_raw, detection_loss, \
    detections_from_params, joint_loss, Detection, LossBreakdown
from .errors import ConfigError, DataError, SchemaError
from .metrics import EvalConfig, GtFrame, MetricsReport
from .model import FusionDetector
from .radar_backbone import build_saliency
from .synthetic import Scene, SceneDataset

CHECKPOINT_MAGIC = b"BFCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    steps: int = 2000
    batch_size: int = 1  # scenes per step; temporal order preserved inside a scene
    seed: int = 0
    with_rb: bool = True
    with_mtl: bool = True
    capacity: int = 10
    optimizer: str = "adam"  # "adam" or "sgd" (the literal update rule)
    channels: int = 32
    n_heads: int = 4
    num_layers: int = 2
    num_queries: int = 20
    lambda_cls: float = 1.0
    lambda_box: float = 5.0
    early_stop: bool = False
    plateau_window: int = 50
    plateau_rel_tol: float = 1e-4

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.steps <= 0:
            raise ConfigError("steps must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class Checkpoint:
    """Self-describing parameter snapshot plus config, step and loss history."""

    state: dict[str, np.ndarray]  # float32 tensors, name -> array
    config: TrainConfig
    step: int
    loss_history: list[LossBreakdown] = field(default_factory=list)


def build_model(config: TrainConfig, dataset: SceneDataset) -> FusionDetector:
    """Seeded model construction; same (config, rig, grid) -> same init draws."""
    torch.manual_seed(config.seed)
    return FusionDetector(dataset.rig, dataset.grid, channels=config.channels,
                          n_heads=config.n_heads, num_layers=config.num_layers,
                          num_queries=config.num_queries, capacity=config.capacity)


def _frame_inputs(frame, dataset: SceneDataset):
    images = torch.from_numpy(np.ascontiguousarray(frame.images))
    saliency = build_saliency(frame.clouds, dataset.rig, dataset.grid)
    targets_cls = np.array([a.class_id for a in frame.annotations], dtype=np.int64)
    targets_box = np.stack([a.box.params() for a in frame.annotations]) \
        if frame.annotations else np.zeros((0, 10))
    return images, saliency, targets_cls, targets_box


def _scene_losses(model: FusionDetector, scene: Scene, dataset: SceneDataset,
                  config: TrainConfig):
    """Forward a scene in temporal order; returns mean per-frame loss tensors."""
    det_losses, rain_losses, tod_losses = [], [], []
    prev_bev = None
    prev_pose = None
    for frame in scene.frames:
        images, saliency, tcls, tbox = _frame_inputs(frame, dataset)
        ego_motion = None
        if prev_pose is not None:
            ego_motion = prev_pose.inverse().compose(frame.ego_pose)
        out = model(images, saliency, prev_bev=prev_bev, ego_motion=ego_motion,
                    use_radar=config.with_rb)
        prev_bev = out["bev"].detach()
        prev_pose = frame.ego_pose
        box_params = box_params_from_raw(out["box_raw"], dataset.grid)
        if not torch.isfinite(box_params).all() or not torch.isfinite(out["class_logits"]).all():
            raise RuntimeError(f"non-finite l_det inputs (exploded forward) "
                               f"at frame {frame.frame_id}")
        l_det, _ = detection_loss(out["class_logits"], box_params, tcls, tbox,
                                  lambda_cls=config.lambda_cls,
                                  lambda_box=config.lambda_box)
        det_losses.append(l_det)
        rain_losses.append(binary_ce(out["rain_logit"], frame.rain))
        tod_losses.append(binary_ce(out["night_logit"], frame.night))
    n = len(scene.frames)
    return (sum(det_losses) / n, sum(rain_losses) / n, sum(tod_losses) / n)


def _check_finite(value: torch.Tensor, term: str, step: int):
    if not torch.isfinite(value):
        raise RuntimeError(f"non-finite {term} ({float(value)}) at step {step}")


def train(config: TrainConfig, dataset: SceneDataset, log_every: int = 0) -> Checkpoint:
    """Run the fixed-step training loop and return the final checkpoint."""
    scenes = dataset.split_scenes("train")
    if not scenes:
        raise DataError("dataset has no train split")
    torch.set_num_threads(1)
    model = build_model(config, dataset)
    if config.optimizer == "adam":
        opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    else:
        opt = torch.optim.SGD(model.parameters(), lr=config.learning_rate)

    order_rng = np.random.default_rng(config.seed)
    order: list[int] = []
    history: list[LossBreakdown] = []
    for step in range(config.steps):
        batch = []
        for _ in range(max(config.batch_size, 1)):
            if not order:
                order = list(order_rng.permutation(len(scenes)))
            batch.append(scenes[order.pop(0)])
        per_scene = [_scene_losses(model, scene, dataset, config) for scene in batch]
        l_det = sum(p[0] for p in per_scene) / len(per_scene)
        l_rain = sum(p[1] for p in per_scene) / len(per_scene)
        l_tod = sum(p[2] for p in per_scene) / len(per_scene)
        _check_finite(l_det, "l_det", step)
        if config.with_mtl:
            _check_finite(l_rain, "l_rain", step)
            _check_finite(l_tod, "l_tod", step)
            total = l_det + l_rain + l_tod
            breakdown = joint_loss(l_det, l_rain, l_tod)
        else:
            total = l_det
            breakdown = joint_loss(l_det, 0.0, 0.0)
        opt.zero_grad()
        total.backward()
        opt.step()
        history.append(breakdown)
        if log_every and (step % log_every == 0 or step == config.steps - 1):
            print(f"step {step:5d}  l_det {breakdown.l_det:.4f}  "
                  f"l_rain {breakdown.l_rain:.4f}  l_tod {breakdown.l_tod:.4f}")
        if config.early_stop and _plateaued(history, config):
            break
    state = {name: p.detach().numpy().astype(np.float32).copy()
             for name, p in model.named_parameters()}
    return Checkpoint(state=state, config=config, step=len(history), loss_history=history)


def _plateaued(history: list[LossBreakdown], config: TrainConfig) -> bool:
    w = config.plateau_window
    if len(history) < 2 * w:
        return False
    recent = np.mean([h.l_joint for h in history[-w:]])
    prior = np.mean([h.l_joint for h in history[-2 * w:-w]])
    return abs(prior - recent) < config.plateau_rel_tol * max(abs(prior), 1e-12)


def smoothed_det_loss(history: list[LossBreakdown], window: int = 20) -> tuple[float, float]:
    """(initial, final) window-averaged detection loss."""
    vals = [h.l_det for h in history]
    w = min(window, len(vals))
    return float(np.mean(vals[:w])), float(np.mean(vals[-w:]))


def load_model(ckpt: Checkpoint, dataset: SceneDataset) -> FusionDetector:
    model = build_model(ckpt.config, dataset)
    state = {name: torch.from_numpy(arr.copy()) for name, arr in ckpt.state.items()}
    model.load_state_dict(state)
    model.eval()
    return model


# ---------------------------------------------------------------------------
# Checkpoint file format: magic, version, header length, JSON header, raw
# little-endian float32 tensor data in header order.


def save_checkpoint(ckpt: Checkpoint, path: str):
    tensors = []
    blobs = []
    offset = 0
    for name in sorted(ckpt.state):
        arr = np.ascontiguousarray(ckpt.state[name], dtype="<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "schema_version": CHECKPOINT_VERSION,
        "config": asdict(ckpt.config),
        "step": ckpt.step,
        "loss_history": [[h.l_det, h.l_rain, h.l_tod, h.l_joint]
                         for h in ckpt.loss_history],
        "tensors": tensors,
        "dtype": "<f4",
    }
    head = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str) -> Checkpoint:
    if not os.path.exists(path):
        raise SchemaError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise SchemaError(f"{path}: not a checkpoint file")
        version, head_len = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise SchemaError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(head_len).decode("utf-8"))
        data = fh.read()
    state = {}
    for meta in header["tensors"]:
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = meta["offset"]
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=start)
        state[meta["name"]] = arr.reshape(shape).copy()
    config = TrainConfig(**header["config"])
    history = [LossBreakdown(*row) for row in header["loss_history"]]
    return Checkpoint(state=state, config=config, step=header["step"],
                      loss_history=history)


# ---------------------------------------------------------------------------
# Inference + evaluation


def predict_scene(model: FusionDetector, scene: Scene, dataset: SceneDataset,
                  use_radar: bool = True) -> dict[str, list[Detection]]:
    """Inference over one scene in temporal order (previous BEV carried)."""
    preds: dict[str, list[Detection]] = {}
    with torch.no_grad():
        prev_bev = None
        prev_pose = None
        for frame in scene.frames:
            images, saliency, _, _ = _frame_inputs(frame, dataset)
            ego_motion = None
            if prev_pose is not None:
                ego_motion = prev_pose.inverse().compose(frame.ego_pose)
            out = model(images, saliency, prev_bev=prev_bev, ego_motion=ego_motion,
                        use_radar=use_radar)
            prev_bev = out["bev"]
            prev_pose = frame.ego_pose
            params = box_params_from_raw(out["box_raw"], dataset.grid).numpy()
            probs = torch.softmax(out["class_logits"], dim=1).numpy()
            preds[frame.frame_id] = detections_from_params(params, probs)
    return preds


def predict_dataset(model: FusionDetector, dataset: SceneDataset,
                    split: str = "val", use_radar: bool = True) -> dict[str, list[Detection]]:
    """Scene-by-scene inference over a split; all queries emitted per frame."""
    torch.set_num_threads(1)
    preds: dict[str, list[Detection]] = {}
    for scene in dataset.split_scenes(split):
        preds.update(predict_scene(model, scene, dataset, use_radar))
    return preds


def dataset_gt_frames(dataset: SceneDataset, split: str = "val") -> list[GtFrame]:
    frames = []
    for scene in dataset.split_scenes(split):
        for frame in scene.frames:
            frames.append(GtFrame(frame_id=frame.frame_id, rain=frame.rain,
                                  night=frame.night, annotations=list(frame.annotations)))
    return frames


def evaluate_checkpoint(ckpt: Checkpoint, dataset: SceneDataset, subset: str = "all",
                        split: str = "val",
                        eval_config: EvalConfig = EvalConfig()) -> MetricsReport:
    """Run inference on the chosen split and score the requested subset."""
    model = load_model(ckpt, dataset)
    preds = predict_dataset(model, dataset, split, use_radar=ckpt.config.with_rb)
    gt_frames = dataset_gt_frames(dataset, split)
    if subset in ("rain", "night"):
        gt_frames = metrics_mod.filter_subset(gt_frames, subset)
    elif subset != "all":
        raise ValueError(f"unknown subset {subset!r}")
    return metrics_mod.evaluate_frames(gt_frames, preds, eval_config)


def predictions_json(preds: dict[str, list[Detection]]) -> dict:
    """Prediction file payload in the metrics module's schema."""
    from .detection import ATTRIBUTES, CLASSES
    return {
        "schema_version": 1,
        "predictions": [
            {
                "frame_id": frame_id,
                "detections": [
                    {
                        "class": CLASSES[d.class_id],
                        "confidence": d.confidence,
                        "center": d.box.center.tolist(),
                        "size": d.box.size.tolist(),
                        "yaw": d.box.yaw,
                        "velocity": d.box.velocity.tolist(),
                        "attribute": ATTRIBUTES[d.attribute_id],
                    }
                    for d in dets
                ],
            }
            for frame_id, dets in sorted(preds.items())
        ],
    }

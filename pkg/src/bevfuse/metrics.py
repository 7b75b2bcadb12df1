"""nuScenes-style detection metrics: center-distance AP, TP errors and NDS.

Matching is greedy in descending confidence on ground-plane center distance,
AP integrates a 101-point interpolated precision-recall curve pooled over all
frames of the split, and the composite score is
NDS = 0.5 * mAP + sum over the five TP metrics of 0.1 * max(1 - mTP, 0).

The module is usable standalone on prediction/ground-truth JSON files.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .detection import ATTRIBUTES, CLASSES, Annotation, Box3D, Detection
from .errors import DataError, SchemaError

TP_METRIC_NAMES = ("ate", "ase", "aoe", "ave", "aae")


@dataclass(frozen=True)
class EvalConfig:
    dist_thresholds: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    tp_threshold: float = 2.0
    classes: tuple[str, ...] = CLASSES

    def __post_init__(self):
        t = self.dist_thresholds
        if any(b <= a for a, b in zip(t, t[1:])) or t[0] <= 0:
            raise ValueError("distance thresholds must be positive and strictly increasing")


@dataclass
class GtFrame:
    frame_id: str
    rain: int
    night: int
    annotations: list[Annotation] = field(default_factory=list)


@dataclass
class MatchResult:
    """Per-frame, per-class greedy matching output, ordered by confidence."""

    confidences: np.ndarray  # descending
    tp: np.ndarray  # bool, aligned with confidences
    pairs: list[tuple[Detection, Annotation]]


@dataclass
class MetricsReport:
    per_class_ap: dict[str, dict[str, float]]
    per_class_tp_errors: dict[str, dict[str, float]]
    mean_ap: float
    mate: float
    mase: float
    maoe: float
    mave: float
    maae: float
    nds: float
    num_frames: int
    classes: list[str]
    thresholds: list[float]

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "per_class_ap": self.per_class_ap,
            "per_class_tp_errors": self.per_class_tp_errors,
            "mAP": self.mean_ap,
            "mATE": self.mate,
            "mASE": self.mase,
            "mAOE": self.maoe,
            "mAVE": self.mave,
            "mAAE": self.maae,
            "NDS": self.nds,
            "num_frames": self.num_frames,
            "classes": self.classes,
            "thresholds": self.thresholds,
        }


def match_detections(preds: list[Detection], gts: list[Annotation],
                     threshold: float) -> MatchResult:
    """Greedy confidence-ordered matching for one frame and one class.

    Each prediction, in descending confidence, matches the nearest unmatched
    ground truth within `threshold` meters of ground-plane center distance;
    everything else is a false positive.
    """
    order = sorted(range(len(preds)), key=lambda k: -preds[k].confidence)
    tp = np.zeros(len(preds), dtype=bool)
    conf = np.array([preds[k].confidence for k in order], dtype=np.float64)
    taken = np.zeros(len(gts), dtype=bool)
    pairs = []
    for rank, k in enumerate(order):
        det = preds[k]
        best_j, best_d = -1, threshold
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            d = float(np.hypot(det.box.center[0] - gt.box.center[0],
                               det.box.center[1] - gt.box.center[1]))
            if d < best_d:
                best_j, best_d = j, d
        if best_j >= 0:
            taken[best_j] = True
            tp[rank] = True
            pairs.append((det, gts[best_j]))
    return MatchResult(conf, tp, pairs)


def average_precision(tp: np.ndarray, n_gt: int) -> float:
    """101-point interpolated AP from confidence-ordered TP flags.

    AP is 0 when there is no ground truth (a positive count of false
    positives cannot make it better).
    """
    if n_gt <= 0:
        return 0.0
    tp = np.asarray(tp, dtype=np.float64)
    if len(tp) == 0:
        return 0.0
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(1.0 - tp)
    recall = tp_cum / n_gt
    precision = tp_cum / (tp_cum + fp_cum)
    ap = 0.0
    for r in np.linspace(0.0, 1.0, 101):
        mask = recall >= r - 1e-12
        ap += float(precision[mask].max()) if mask.any() else 0.0
    return ap / 101.0


def _aligned_iou(size_a: np.ndarray, size_b: np.ndarray) -> float:
    """3D IoU of two boxes after aligning centers and yaw (pure scale mismatch)."""
    inter = float(np.prod(np.minimum(size_a, size_b)))
    union = float(np.prod(size_a)) + float(np.prod(size_b)) - inter
    return inter / union


def tp_metrics(pairs: list[tuple[Detection, Annotation]]) -> dict[str, float]:
    """Mean translation/scale/orientation/velocity/attribute errors over pairs.

    With no pairs every metric defaults to 1.0 (the worst value that still
    clamps to zero contribution in NDS).
    """
    if not pairs:
        return {name: 1.0 for name in TP_METRIC_NAMES}
    ate, ase, aoe, ave, aae = [], [], [], [], []
    for det, gt in pairs:
        ate.append(np.hypot(det.box.center[0] - gt.box.center[0],
                            det.box.center[1] - gt.box.center[1]))
        ase.append(1.0 - _aligned_iou(det.box.size, gt.box.size))
        d = abs(det.box.yaw - gt.box.yaw) % (2.0 * np.pi)
        aoe.append(min(d, 2.0 * np.pi - d))
        ave.append(np.hypot(det.box.velocity[0] - gt.box.velocity[0],
                            det.box.velocity[1] - gt.box.velocity[1]))
        aae.append(0.0 if det.attribute_id == gt.attribute_id else 1.0)
    return {name: float(np.mean(vals))
            for name, vals in zip(TP_METRIC_NAMES, (ate, ase, aoe, ave, aae))}


def nds(mean_ap: float, mtps) -> float:
    """NDS = 0.5 * mAP + sum of 0.1 * max(1 - mTP, 0) over the five TP metrics."""
    if not 0.0 <= mean_ap <= 1.0:
        raise ValueError(f"mAP must be in [0, 1], got {mean_ap}")
    mtps = list(mtps)
    if len(mtps) != len(TP_METRIC_NAMES):
        raise ValueError(f"expected {len(TP_METRIC_NAMES)} TP metrics, got {len(mtps)}")
    return 0.5 * mean_ap + sum(0.1 * max(1.0 - m, 0.0) for m in mtps)


def filter_subset(frames: list[GtFrame], predicate: str) -> list[GtFrame]:
    """Select the frames whose rain/night label matches the predicate."""
    if predicate not in ("rain", "night"):
        raise ValueError(f"unknown subset predicate {predicate!r}")
    for f in frames:
        if f.rain not in (0, 1) or f.night not in (0, 1):
            raise DataError(f"frame {f.frame_id} is missing a rain/night label")
    key = (lambda f: f.rain) if predicate == "rain" else (lambda f: f.night)
    return [f for f in frames if key(f) == 1]


def evaluate_frames(gt_frames: list[GtFrame],
                    pred_by_frame: dict[str, list[Detection]],
                    config: EvalConfig = EvalConfig()) -> MetricsReport:
    """Full evaluation over in-memory frames.

    Classes with zero ground truth and zero predictions across the split are
    excluded from the class means; classes with ground truth but no matched
    pairs contribute AP = 0 and TP errors of 1.0.
    """
    per_class_ap: dict[str, dict[str, float]] = {}
    per_class_tp: dict[str, dict[str, float]] = {}
    ap_values: list[float] = []
    tp_rows: list[dict[str, float]] = []

    for class_id, class_name in enumerate(config.classes):
        n_gt = 0
        n_pred = 0
        pooled: dict[float, list[tuple[np.ndarray, np.ndarray]]] = \
            {t: [] for t in config.dist_thresholds}
        pairs: list[tuple[Detection, Annotation]] = []
        for frame in gt_frames:
            gts = [a for a in frame.annotations if a.class_id == class_id]
            preds = [d for d in pred_by_frame.get(frame.frame_id, [])
                     if d.class_id == class_id]
            n_gt += len(gts)
            n_pred += len(preds)
            for thr in config.dist_thresholds:
                m = match_detections(preds, gts, thr)
                pooled[thr].append((m.confidences, m.tp))
            pairs.extend(match_detections(preds, gts, config.tp_threshold).pairs)
        if n_gt == 0 and n_pred == 0:
            continue  # class absent from this split entirely

        aps = {}
        for thr in config.dist_thresholds:
            conf = np.concatenate([c for c, _ in pooled[thr]]) if pooled[thr] else np.array([])
            tp = np.concatenate([t for _, t in pooled[thr]]) if pooled[thr] else np.array([])
            order = np.argsort(-conf, kind="stable")
            ap = average_precision(tp[order], n_gt)
            aps[f"{thr:g}"] = ap
            ap_values.append(ap)
        per_class_ap[class_name] = aps
        errors = tp_metrics(pairs)
        per_class_tp[class_name] = errors
        tp_rows.append(errors)

    mean_ap = float(np.mean(ap_values)) if ap_values else 0.0
    mtps = {name: (float(np.mean([row[name] for row in tp_rows])) if tp_rows else 1.0)
            for name in TP_METRIC_NAMES}
    return MetricsReport(
        per_class_ap=per_class_ap,
        per_class_tp_errors=per_class_tp,
        mean_ap=mean_ap,
        mate=mtps["ate"], mase=mtps["ase"], maoe=mtps["aoe"],
        mave=mtps["ave"], maae=mtps["aae"],
        nds=nds(mean_ap, [mtps[n] for n in TP_METRIC_NAMES]),
        num_frames=len(gt_frames),
        classes=list(config.classes),
        thresholds=list(config.dist_thresholds),
    )


# ---------------------------------------------------------------------------
# File schemas


def _field(obj: dict, key: str, path: str):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"{path}: missing field {key!r}")
    return obj[key]


def _vector(obj: dict, key: str, length: int, path: str) -> np.ndarray:
    v = _field(obj, key, path)
    if not isinstance(v, list) or len(v) != length \
            or not all(isinstance(x, (int, float)) for x in v):
        raise SchemaError(f"{path}.{key}: expected {length} numbers")
    return np.asarray(v, dtype=np.float64)


def _number(obj: dict, key: str, path: str) -> float:
    v = _field(obj, key, path)
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise SchemaError(f"{path}.{key}: expected a number")
    return float(v)


def _class_id(name, config: EvalConfig, path: str) -> int:
    if name not in config.classes:
        raise SchemaError(f"{path}: unknown class {name!r}")
    return config.classes.index(name)


def _attribute_id(name, path: str) -> int:
    if name not in ATTRIBUTES:
        raise SchemaError(f"{path}: unknown attribute {name!r}")
    return ATTRIBUTES.index(name)


def _box_from_json(obj: dict, path: str) -> Box3D:
    size = _vector(obj, "size", 3, path)
    if (size <= 0).any():
        raise SchemaError(f"{path}.size: sizes must be positive")
    return Box3D(center=_vector(obj, "center", 3, path), size=size,
                 yaw=_number(obj, "yaw", path), velocity=_vector(obj, "velocity", 2, path))


def annotation_from_json(obj: dict, config: EvalConfig, path: str) -> Annotation:
    return Annotation(box=_box_from_json(obj, path),
                      class_id=_class_id(_field(obj, "class", path), config, path),
                      attribute_id=_attribute_id(_field(obj, "attribute", path), path))


def detection_from_json(obj: dict, config: EvalConfig, path: str) -> Detection:
    conf = _number(obj, "confidence", path)
    if not 0.0 <= conf <= 1.0:
        raise SchemaError(f"{path}.confidence: must be in [0, 1]")
    return Detection(box=_box_from_json(obj, path),
                     class_id=_class_id(_field(obj, "class", path), config, path),
                     confidence=conf,
                     attribute_id=_attribute_id(_field(obj, "attribute", path), path))


def _unwrap(doc, key: str, what: str):
    """Accept either a bare list or a {"schema_version": 1, key: [...]} wrapper."""
    if isinstance(doc, list):
        return doc
    if isinstance(doc, dict) and key in doc:
        version = doc.get("schema_version")
        if version != 1:
            raise SchemaError(f"{what}: unsupported schema_version {version!r}")
        body = doc[key]
        if isinstance(body, list):
            return body
    raise SchemaError(f"{what}: expected a list of frames or a versioned {key!r} wrapper")


def gt_frames_from_json(doc, config: EvalConfig = EvalConfig()) -> list[GtFrame]:
    frames = []
    for idx, fr in enumerate(_unwrap(doc, "frames", "ground truth")):
        path = f"frames[{idx}]"
        frame_id = _field(fr, "frame_id", path)
        rain = _field(fr, "rain", path)
        night = _field(fr, "night", path)
        if rain not in (0, 1) or night not in (0, 1):
            raise SchemaError(f"{path}: rain/night labels must be 0 or 1")
        anns = _field(fr, "annotations", path)
        if not isinstance(anns, list):
            raise SchemaError(f"{path}.annotations: expected a list")
        frames.append(GtFrame(
            frame_id=str(frame_id), rain=int(rain), night=int(night),
            annotations=[annotation_from_json(a, config, f"{path}.annotations[{i}]")
                         for i, a in enumerate(anns)]))
    ids = [f.frame_id for f in frames]
    if len(set(ids)) != len(ids):
        raise SchemaError("ground truth: duplicate frame_id values")
    return frames


def predictions_from_json(doc, config: EvalConfig = EvalConfig()) -> dict[str, list[Detection]]:
    preds: dict[str, list[Detection]] = {}
    for idx, fr in enumerate(_unwrap(doc, "predictions", "predictions")):
        path = f"predictions[{idx}]"
        frame_id = str(_field(fr, "frame_id", path))
        dets = _field(fr, "detections", path)
        if not isinstance(dets, list):
            raise SchemaError(f"{path}.detections: expected a list")
        preds.setdefault(frame_id, []).extend(
            detection_from_json(d, config, f"{path}.detections[{i}]")
            for i, d in enumerate(dets))
    return preds


def _load_json(path: str, what: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise SchemaError(f"{what}: file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{what}: invalid JSON at line {exc.lineno}, column {exc.colno}: "
                          f"{exc.msg}") from None


def evaluate(pred_path: str, gt_path: str, config: EvalConfig = EvalConfig(),
             subset: str | None = None) -> MetricsReport:
    """Evaluate prediction and ground-truth files; optionally on a labeled subset."""
    gt_frames = gt_frames_from_json(_load_json(gt_path, "ground truth"), config)
    preds = predictions_from_json(_load_json(pred_path, "predictions"), config)
    if subset in ("rain", "night"):
        gt_frames = filter_subset(gt_frames, subset)
    elif subset not in (None, "all"):
        raise ValueError(f"unknown subset {subset!r}")
    return evaluate_frames(gt_frames, preds, config)

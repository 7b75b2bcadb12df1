"""Independent end-to-end evaluator used as an oracle for metrics.evaluate.

Deliberately written against the documented contract only (greedy
confidence-ordered matching on ground-plane distance, frame-pooled 101-point
AP, class-mean TP errors with the zero-pair 1.0 convention, absent-class
exclusion, NDS clamp), sharing no code with the package implementation.
"""
import numpy as np

THRESHOLDS = (0.5, 1.0, 2.0, 4.0)
TP_THRESHOLD = 2.0
CLASS_NAMES = ("vehicle", "motorcycle", "pedestrian", "barrier")


def _greedy_match(dets, gts, threshold):
    """dets/gts: lists of dicts. Returns (conf list, tp list, pairs)."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i]["confidence"])
    used = [False] * len(gts)
    conf, tp, pairs = [], [], []
    for i in order:
        d = dets[i]
        best, best_dist = None, threshold
        for j, g in enumerate(gts):
            if used[j]:
                continue
            dist = np.hypot(d["center"][0] - g["center"][0],
                            d["center"][1] - g["center"][1])
            if dist < best_dist:
                best, best_dist = j, dist
        conf.append(d["confidence"])
        if best is None:
            tp.append(False)
        else:
            used[best] = True
            tp.append(True)
            pairs.append((d, gts[best]))
    return conf, tp, pairs


def _ap_101(conf, tp, n_gt):
    if n_gt == 0 or not conf:
        return 0.0
    order = np.argsort(-np.asarray(conf), kind="stable")
    flags = np.asarray(tp, dtype=float)[order]
    cum_tp = np.cumsum(flags)
    cum_fp = np.cumsum(1 - flags)
    rec = cum_tp / n_gt
    prec = cum_tp / (cum_tp + cum_fp)
    total = 0.0
    for r in np.linspace(0, 1, 101):
        candidates = prec[rec >= r - 1e-12]
        total += candidates.max() if len(candidates) else 0.0
    return total / 101


def _pair_errors(pairs):
    if not pairs:
        return {"ate": 1.0, "ase": 1.0, "aoe": 1.0, "ave": 1.0, "aae": 1.0}
    rows = []
    for d, g in pairs:
        ate = np.hypot(d["center"][0] - g["center"][0], d["center"][1] - g["center"][1])
        mins = [min(a, b) for a, b in zip(d["size"], g["size"])]
        inter = mins[0] * mins[1] * mins[2]
        vol_d = d["size"][0] * d["size"][1] * d["size"][2]
        vol_g = g["size"][0] * g["size"][1] * g["size"][2]
        ase = 1.0 - inter / (vol_d + vol_g - inter)
        diff = abs(d["yaw"] - g["yaw"]) % (2 * np.pi)
        aoe = min(diff, 2 * np.pi - diff)
        ave = np.hypot(d["velocity"][0] - g["velocity"][0],
                       d["velocity"][1] - g["velocity"][1])
        aae = 0.0 if d["attribute"] == g["attribute"] else 1.0
        rows.append((ate, ase, aoe, ave, aae))
    means = np.mean(rows, axis=0)
    return dict(zip(("ate", "ase", "aoe", "ave", "aae"), means))


def reference_evaluate(gt_frames, preds_by_frame):
    """gt_frames: list of dicts with frame_id/rain/night/annotations (dicts).

    preds_by_frame: frame_id -> list of detection dicts. Returns a metrics
    dict with mAP, the five mean TP errors and NDS.
    """
    ap_values = []
    tp_rows = []
    for cls in CLASS_NAMES:
        n_gt = sum(sum(1 for a in f["annotations"] if a["class"] == cls)
                   for f in gt_frames)
        n_pred = sum(sum(1 for d in preds_by_frame.get(f["frame_id"], [])
                         if d["class"] == cls) for f in gt_frames)
        if n_gt == 0 and n_pred == 0:
            continue
        for thr in THRESHOLDS:
            conf, tp = [], []
            for f in gt_frames:
                gts = [a for a in f["annotations"] if a["class"] == cls]
                dets = [d for d in preds_by_frame.get(f["frame_id"], [])
                        if d["class"] == cls]
                c, t, _ = _greedy_match(dets, gts, thr)
                conf.extend(c)
                tp.extend(t)
            ap_values.append(_ap_101(conf, tp, n_gt))
        pairs = []
        for f in gt_frames:
            gts = [a for a in f["annotations"] if a["class"] == cls]
            dets = [d for d in preds_by_frame.get(f["frame_id"], []) if d["class"] == cls]
            pairs.extend(_greedy_match(dets, gts, TP_THRESHOLD)[2])
        tp_rows.append(_pair_errors(pairs))

    mean_ap = float(np.mean(ap_values)) if ap_values else 0.0
    mtp = {k: (float(np.mean([r[k] for r in tp_rows])) if tp_rows else 1.0)
           for k in ("ate", "ase", "aoe", "ave", "aae")}
    nds = 0.5 * mean_ap + sum(0.1 * max(1.0 - mtp[k], 0.0) for k in mtp)
    return {"mAP": mean_ap, **mtp, "NDS": nds}

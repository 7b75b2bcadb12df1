"""Module-toggle ablations (radar backbone / multi-task heads) and the
embedding-capacity sweep, with per-subset NDS and mAP.

Runs are seed-isolated, so the four toggle combinations and the capacity
sweep can execute concurrently in worker processes; each worker reloads the
dataset from disk and trains one configuration.
"""
from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor

from .metrics import EvalConfig
from .synthetic import read_dataset
from .training import TrainConfig, evaluate_checkpoint, smoothed_det_loss, train

SUBSETS = ("all", "rain", "night")
TOGGLE_ROWS = ((False, False), (False, True), (True, False), (True, True))


def run_single(data_dir: str, config: TrainConfig) -> dict:
    """Train one configuration and evaluate NDS/mAP on every subset."""
    dataset = read_dataset(data_dir)
    ckpt = train(config, dataset)
    det_start, det_final = smoothed_det_loss(ckpt.loss_history)
    subsets = {}
    for subset in SUBSETS:
        report = evaluate_checkpoint(ckpt, dataset, subset=subset)
        subsets[subset] = {"nds": report.nds, "map": report.mean_ap,
                           "num_frames": report.num_frames}
    return {
        "with_rb": config.with_rb,
        "with_mtl": config.with_mtl,
        "seed": config.seed,
        "capacity": config.capacity,
        "l_det_smoothed": [det_start, det_final],
        "subsets": subsets,
    }


def _worker(args) -> dict:
    data_dir, config_dict = args
    return run_single(data_dir, TrainConfig(**config_dict))


def ablation_suite(data_dir: str, base_config: TrainConfig, seeds: list[int],
                   k_sweep: list[int] | None = None, jobs: int = 1) -> dict:
    """Train {±RB, ±MTL} x seeds (and optionally the capacity sweep).

    Returns a report dict with one row per (toggles, seed) in canonical order;
    identical seeds/data across rows make the comparison paired.
    """
    tasks = []
    for with_rb, with_mtl in TOGGLE_ROWS:
        for seed in seeds:
            cfg = dataclasses.replace(base_config, with_rb=with_rb,
                                      with_mtl=with_mtl, seed=seed)
            tasks.append(("ablation", (data_dir, dataclasses.asdict(cfg))))
    for k in k_sweep or []:
        for seed in seeds:
            cfg = dataclasses.replace(base_config, with_rb=True, with_mtl=True,
                                      capacity=k, seed=seed)
            tasks.append(("k_sweep", (data_dir, dataclasses.asdict(cfg))))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_worker, [t[1] for t in tasks]))
    else:
        results = [_worker(t[1]) for t in tasks]

    report = {"schema_version": 1, "seeds": list(seeds), "ablation": [], "k_sweep": []}
    for (kind, _), row in zip(tasks, results):
        report[kind].append(row)
    report["ablation"].sort(key=lambda r: (r["with_rb"], r["with_mtl"], r["seed"]))
    report["k_sweep"].sort(key=lambda r: (r["capacity"], r["seed"]))
    return report


def write_report(report: dict, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1)

"""Report files for a run directory: IoU tables, acquisition summaries, plot data."""

from __future__ import annotations

import csv
import os

import numpy as np

from .config import ExperimentConfig
from .datapool import build_region_grid
from .dataset import Dataset
from .errors import IncompleteRunError
from .experiment import (ACQUISITIONS_NAME, CONFIG_SNAPSHOT, build_report,
                         read_jsonl)

REPORT_DIR = "report"


def write_report(run_dir: str, dataset: Dataset | None = None) -> list[str]:
    """Emit CSV tables into <run_dir>/report; returns the paths written.

    The per-class acquisition pixel summary needs ground-truth labels; it is
    produced when a dataset is given or loadable from the config snapshot.
    """
    report = build_report(run_dir)
    out_dir = os.path.join(run_dir, REPORT_DIR)
    os.makedirs(out_dir, exist_ok=True)
    written: list[str] = []

    num_classes = len(report.cycles[0].per_class_teacher)
    iou_path = os.path.join(out_dir, "iou_table.csv")
    with open(iou_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["cycle", "labeled_fraction"]
                   + [f"iou_class_{c}" for c in range(num_classes)]
                   + ["miou_teacher", "miou_student"])
        for row in report.cycles:
            w.writerow([row.cycle, f"{row.labeled_fraction:.6f}"]
                       + [f"{v:.4f}" if not np.isnan(v) else "" for v in row.per_class_teacher]
                       + [f"{row.miou_teacher:.4f}", f"{row.miou_student:.4f}"])
    written.append(iou_path)

    plot_path = os.path.join(out_dir, "miou_vs_fraction.csv")
    with open(plot_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["labeled_fraction", "miou_teacher", "miou_student"])
        for row in report.cycles:
            w.writerow([f"{row.labeled_fraction:.6f}", f"{row.miou_teacher:.4f}",
                        f"{row.miou_student:.4f}"])
    written.append(plot_path)

    acquisitions = read_jsonl(os.path.join(run_dir, ACQUISITIONS_NAME))
    if acquisitions:
        if dataset is None:
            cfg_path = os.path.join(run_dir, CONFIG_SNAPSHOT)
            if os.path.exists(cfg_path):
                cfg = ExperimentConfig.load(cfg_path)
                if cfg.data.dir and os.path.isdir(cfg.data.dir):
                    from .experiment import load_dataset_for
                    dataset = load_dataset_for(cfg)
        if dataset is not None:
            written.append(_acquisition_summary(run_dir, out_dir, acquisitions, dataset))
    return written


def _acquisition_summary(run_dir: str, out_dir: str, acquisitions: list[dict],
                         dataset: Dataset) -> str:
    cfg = ExperimentConfig.load(os.path.join(run_dir, CONFIG_SNAPSHOT))
    grid = build_region_grid(dataset.height, dataset.width,
                             cfg.cycle.region_h, cfg.cycle.region_w)
    k = dataset.num_classes
    cycles = sorted({rec["cycle"] for rec in acquisitions})
    path = os.path.join(out_dir, "acquisition_summary.csv")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["cycle"] + [f"class_{c}_pixels" for c in range(k)]
                   + ["ignore_pixels", "total_pixels"])
        for cycle in cycles:
            counts = np.zeros(k + 1, dtype=np.int64)
            for rec in acquisitions:
                if rec["cycle"] != cycle:
                    continue
                region = grid.region((rec["row"], rec["col"]))
                lbl = dataset.labels[rec["image_id"]][region.slices].ravel()
                counts[k] += int((lbl == dataset.ignore_index).sum())
                lbl = lbl[lbl != dataset.ignore_index]
                counts[:k] += np.bincount(lbl, minlength=k)[:k]
            w.writerow([cycle] + counts.tolist() + [int(counts.sum())])
    return path

"""Command line interface; every pipeline step is independently invocable."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
import torch

from . import acquire
from .config import ExperimentConfig, load_preset
from .datapool import PoolState, init_split
from .dataset import save_dataset
from .errors import InvalidArgumentError, SegalError
from .experiment import (device_from_env, load_dataset_for, run_experiment,
                         score_unlabeled_pool, simulate_budget, build_report)
from .models import SmallSegNet, load_checkpoint, restore_pair
from .report import write_report
from .synth import generate_synthetic
from .trainer import evaluate


def _load_config(args) -> ExperimentConfig:
    if args.preset:
        cfg = load_preset(args.preset)
    else:
        cfg = ExperimentConfig.load(args.config)
    if getattr(args, "data_dir", None):
        cfg.data.dir = args.data_dir
    if getattr(args, "seed", None) is not None:
        cfg.cycle.seed = args.seed
    return cfg


def _add_config_args(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--config", help="path to a config file")
    g.add_argument("--preset", help="shipped preset name (camvid, cityscapes, desk)")
    p.add_argument("--data-dir", help="override [data] dir")
    p.add_argument("--seed", type=int, help="override [cycle] seed")


def cmd_synth(args) -> int:
    shares = tuple(float(s) for s in args.shares.split(","))
    ds = generate_synthetic(num_classes=args.classes, shares=shares,
                            height=args.size, width=args.size,
                            train_images=args.train, val_images=args.val,
                            test_images=args.test, seed=args.seed)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds.all_ids())} images to {args.out}")
    return 0


def cmd_split(args) -> int:
    cfg = _load_config(args)
    dataset = load_dataset_for(cfg)
    pool = init_split(dataset, cfg.cycle.initial_fraction, cfg.cycle.seed,
                      cfg.cycle.region_h, cfg.cycle.region_w)
    pool.save(args.out)
    print(f"labeled fraction {pool.labeled_fraction():.4f} -> {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    if args.budget_only:
        fractions = simulate_budget(cfg)
        for i, frac in enumerate(fractions):
            print(f"after {i} acquisition rounds: labeled fraction {frac:.6f}")
        return 0
    dataset = load_dataset_for(cfg)
    report = run_experiment(cfg, dataset, args.out, resume=args.resume,
                            stop_after_cycle=args.stop_after_cycle,
                            deterministic=args.deterministic)
    last = report.cycles[-1]
    print(f"final labeled fraction {report.final_labeled_fraction:.4f}, "
          f"teacher mIoU {last.miou_teacher:.4f}, student mIoU {last.miou_student:.4f}")
    return 0


def cmd_train_cycle(args) -> int:
    args.budget_only = False
    args.stop_after_cycle = args.cycle
    args.resume = True if os.path.exists(os.path.join(args.out, "state.json")) else False
    args.deterministic = True
    return cmd_run(args)


def cmd_score(args) -> int:
    cfg = _load_config(args)
    dataset = load_dataset_for(cfg)
    pool = PoolState.load(args.pool)
    payload = load_checkpoint(args.checkpoint)
    model = SmallSegNet(cfg.data.num_classes, cfg.model.base_width)
    model.load_state_dict(payload["extra"]["best_teacher_state"])
    rng = np.random.default_rng(cfg.cycle.seed)
    scores = score_unlabeled_pool(pool, dataset, model, cfg.cycle.metric, rng,
                                  device_from_env())
    with open(args.out, "w") as f:
        for s in scores:
            f.write(json.dumps({"image_id": s.image_id, "row": s.region_id[0],
                                "col": s.region_id[1], "score": s.score,
                                "unlabeled_pixels": s.unlabeled_pixel_count}) + "\n")
    print(f"scored {len(scores)} regions -> {args.out}")
    return 0


def cmd_select(args) -> int:
    cfg = _load_config(args)
    scores = []
    with open(args.scores) as f:
        for line in f:
            rec = json.loads(line)
            scores.append(acquire.RegionScore(rec["image_id"],
                                              (rec["row"], rec["col"]),
                                              rec["score"], rec["unlabeled_pixels"]))
    budget = cfg.cycle.global_budget if cfg.cycle.selection == "global" else None
    picks = acquire.select_regions(scores, cfg.cycle.per_image_k, global_budget=budget)
    for image_id, (row, col) in picks:
        print(f"{image_id} {row} {col}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    dataset = load_dataset_for(cfg)
    payload = load_checkpoint(args.checkpoint)
    pair = restore_pair(payload, lambda: SmallSegNet(cfg.data.num_classes,
                                                     cfg.model.base_width))
    device = device_from_env()
    net = pair.teacher if args.network == "teacher" and pair.teacher is not None \
        else pair.student
    net.to(device)
    per_class, miou, _ = evaluate(net, dataset, dataset.test_ids or dataset.train_ids,
                                  device)
    print("per-class IoU:", ", ".join("nan" if np.isnan(v) else f"{v:.4f}"
                                      for v in per_class))
    print(f"mIoU ({args.network}): {miou:.4f}")
    return 0


def cmd_report(args) -> int:
    paths = write_report(args.run_dir)
    rep = build_report(args.run_dir)
    for row in rep.cycles:
        print(f"cycle {row.cycle}: fraction {row.labeled_fraction:.4f} "
              f"teacher mIoU {row.miou_teacher:.4f}")
    for p in paths:
        print("wrote", p)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="segal",
        description="Region-based active learning for semantic segmentation "
                    "with teacher-student semi-supervised training")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic shapes dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--shares", default="0.55,0.30,0.10,0.05")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--val", type=int, default=24)
    p.add_argument("--test", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("split", help="write the initial pool state")
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("run", help="run the full acquisition loop")
    _add_config_args(p)
    p.add_argument("--out", help="run directory")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--deterministic", action="store_true", default=True)
    p.add_argument("--stop-after-cycle", type=int, default=None)
    p.add_argument("--budget-only", action="store_true",
                   help="pool bookkeeping only; print labeled fractions and exit")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("train-cycle", help="run up to and including one cycle")
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--cycle", type=int, required=True)
    p.set_defaults(fn=cmd_train_cycle)

    p = sub.add_parser("score", help="score unlabeled regions with a checkpoint teacher")
    _add_config_args(p)
    p.add_argument("--pool", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("select", help="pick top regions from a score file")
    _add_config_args(p)
    p.add_argument("--scores", required=True)
    p.set_defaults(fn=cmd_select)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--network", choices=("teacher", "student"), default="teacher")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="write report CSVs for a run directory")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(fn=cmd_report)

    args = parser.parse_args(argv)
    if args.command == "run" and not args.budget_only and not args.out:
        parser.error("run needs --out unless --budget-only")
    try:
        return args.fn(args)
    except SegalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

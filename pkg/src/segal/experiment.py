"""Cycle orchestration: init split -> [train -> score -> select -> reveal] -> final train.

Owns the run directory (lock file), per-cycle persistence, and resumability.
A run interrupted at any checkpoint and resumed reproduces the uninterrupted
acquisition log bit-exactly because every stochastic choice flows from seeded
generators whose states are checkpointed.
"""

from __future__ import annotations

import glob
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from . import acquire
from .config import ExperimentConfig, check_config_hash
from .datapool import PoolState, Status, init_split, init_split_ids
from .dataset import Dataset, load_dataset
from .errors import IncompleteRunError, InvalidArgumentError, RunLockedError
from .models import (ModelPair, SmallSegNet, forward, load_checkpoint,
                     restore_pair, save_checkpoint)
from .replay import ReplayBuffer
from .trainer import EpochLog, evaluate, train_cycle

STATE_NAME = "state.json"
LOCK_NAME = "LOCK"
METRICS_NAME = "metrics.jsonl"
ACQUISITIONS_NAME = "acquisitions.jsonl"
EVALS_NAME = "evals.jsonl"
CONFIG_SNAPSHOT = "config.cfg"


@dataclass
class CycleEval:
    cycle: int
    labeled_fraction: float
    per_class_teacher: list[float]
    miou_teacher: float
    per_class_student: list[float]
    miou_student: float

    def to_dict(self) -> dict:
        return self.__dict__.copy()


@dataclass
class ExperimentReport:
    config_digest: str
    cycles: list[CycleEval] = field(default_factory=list)
    final_labeled_fraction: float = 0.0
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        return {"config_digest": self.config_digest,
                "cycles": [c.to_dict() for c in self.cycles],
                "final_labeled_fraction": self.final_labeled_fraction,
                "wall_clock": self.wall_clock}


class _RunLock:
    def __init__(self, run_dir: str):
        self.path = os.path.join(run_dir, LOCK_NAME)

    def __enter__(self):
        if os.path.exists(self.path):
            try:
                pid = int(open(self.path).read().strip())
                os.kill(pid, 0)
                raise RunLockedError(f"run directory locked by live pid {pid}")
            except (ValueError, ProcessLookupError, PermissionError):
                pass  # stale lock
        with open(self.path, "w") as f:
            f.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        if os.path.exists(self.path):
            os.remove(self.path)


def _append_jsonl(path: str, record: dict) -> None:
    with open(path, "a") as f:
        f.write(json.dumps(record) + "\n")


def read_jsonl(path: str) -> list[dict]:
    if not os.path.exists(path):
        return []
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def _rng_for(seed: int, kind: int, cycle: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, kind, cycle)))


def device_from_env() -> str:
    dev = os.environ.get("SEGAL_DEVICE", "").strip()
    if dev:
        return dev
    return "cuda" if torch.cuda.is_available() else "cpu"


def score_unlabeled_pool(pool: PoolState, dataset: Dataset, teacher: torch.nn.Module,
                         metric: str, rng: np.random.Generator,
                         device: str) -> list[acquire.RegionScore]:
    """Teacher scores un-augmented images in eval mode; known pixels excluded."""
    out: list[acquire.RegionScore] = []
    for image_id in pool.unlabeled_stream():
        img = dataset.images[image_id]
        x = torch.from_numpy(img.transpose(2, 0, 1)[None]).float().to(device)
        logits = forward(teacher, x, train=False)
        probs = torch.softmax(logits, dim=1)[0].cpu().numpy().transpose(1, 2, 0)
        score_map = acquire.pixel_scores(probs, metric, rng)
        out.extend(acquire.region_scores(score_map, pool.grid,
                                         pool.known_mask(image_id), image_id))
    return out


def simulate_budget(cfg: ExperimentConfig) -> list[float]:
    """Pool bookkeeping only: labeled fraction after init and each acquisition.

    Uses the preset's dataset geometry; no pixel data, no training. Which
    regions get picked does not change the totals on exactly-tiling grids.
    """
    d = cfg.data
    if d.train_images <= 0 or d.height <= 0 or d.width <= 0:
        raise InvalidArgumentError("budget simulation needs [data] geometry")
    ids = [f"img{i:05d}" for i in range(d.train_images)]
    pool = init_split_ids(ids, d.height, d.width, cfg.cycle.initial_fraction,
                          cfg.cycle.seed, cfg.cycle.region_h, cfg.cycle.region_w)
    fractions = [pool.labeled_fraction()]
    for cycle in range(cfg.cycle.num_cycles):
        selections = []
        for image_id in pool.unlabeled_stream():
            rankable = pool.unknown_region_ids(image_id)
            selections.extend((image_id, rid)
                              for rid in rankable[:cfg.cycle.per_image_k])
        pool.reveal_regions(selections, cycle)
        fractions.append(pool.labeled_fraction())
    return fractions


def _model_factory(cfg: ExperimentConfig):
    def factory():
        return SmallSegNet(cfg.data.num_classes, cfg.model.base_width)
    return factory


def _latest_midcycle_ckpt(run_dir: str, cycle: int) -> str | None:
    paths = sorted(glob.glob(os.path.join(run_dir, "checkpoints",
                                          f"cycle_{cycle:02d}_ep*.pt")))
    return paths[-1] if paths else None


def run_experiment(cfg: ExperimentConfig, dataset: Dataset, out_dir: str,
                   resume: bool = False, stop_after_cycle: int | None = None,
                   deterministic: bool = True) -> ExperimentReport:
    """Execute the full acquisition loop; checkpointed per cycle and resumable.

    stop_after_cycle=j ends the process after training cycle j completes and
    its acquisition (if any) is revealed; a later resume continues seamlessly.
    """
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    os.makedirs(os.path.join(out_dir, "pool"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
    device = device_from_env()
    if deterministic:
        torch.use_deterministic_algorithms(True)

    state_path = os.path.join(out_dir, STATE_NAME)
    snapshot_path = os.path.join(out_dir, CONFIG_SNAPSHOT)
    with _RunLock(out_dir):
        t_start = time.monotonic()
        if resume and os.path.exists(state_path):
            state = json.load(open(state_path))
            check_config_hash(cfg, state["digest"])
        else:
            if os.path.exists(state_path) and not resume:
                raise InvalidArgumentError(
                    f"{out_dir} already holds a run; pass resume=True to continue")
            cfg.save(snapshot_path)
            state = {"digest": cfg.digest(), "trainings_done": 0,
                     "acquisitions_done": 0, "done": False, "wall_clock": 0.0}
            json.dump(state, open(state_path, "w"))

        num_cycles = cfg.cycle.num_cycles
        factory = _model_factory(cfg)

        def save_state():
            state["wall_clock"] += time.monotonic() - save_state.t0
            save_state.t0 = time.monotonic()
            json.dump(state, open(state_path, "w"))
        save_state.t0 = t_start

        # pool of record: after `acquisitions_done` rounds
        pool_path = os.path.join(out_dir, "pool",
                                 f"cycle_{state['acquisitions_done']:02d}.json")
        if state["trainings_done"] == 0 and state["acquisitions_done"] == 0 \
                and not os.path.exists(pool_path):
            pool = init_split(dataset, cfg.cycle.initial_fraction, cfg.cycle.seed,
                              cfg.cycle.region_h, cfg.cycle.region_w)
            pool.save(pool_path)
        else:
            pool = PoolState.load(pool_path)

        pair: ModelPair | None = None
        replay_buffer = ReplayBuffer(cfg.cycle.replay_capacity)
        best_teacher_state = None

        if state["trainings_done"] > 0:
            last_ckpt = os.path.join(out_dir, "checkpoints",
                                     f"cycle_{state['trainings_done'] - 1:02d}.pt")
            payload = load_checkpoint(last_ckpt)
            pair = restore_pair(payload, factory)
            pair.student.to(device)
            if pair.teacher is not None:
                pair.teacher.to(device)
            replay_buffer = ReplayBuffer.from_state(payload["extra"]["replay"])
            best_teacher_state = payload["extra"]["best_teacher_state"]

        while not state["done"]:
            t = state["trainings_done"]
            a = state["acquisitions_done"]
            if t == num_cycles + 1:
                state["done"] = True
                save_state()
                break
            if t > a and t <= num_cycles and a < num_cycles:
                # acquisition round a (scores from training t-1 == a)
                rng = _rng_for(cfg.cycle.seed, 2, a)
                scoring_model = factory()
                scoring_model.load_state_dict(best_teacher_state)
                scoring_model.to(device)
                scores = score_unlabeled_pool(pool, dataset, scoring_model,
                                              cfg.cycle.metric, rng, device)
                budget = cfg.cycle.global_budget if cfg.cycle.selection == "global" else None
                selections = acquire.select_regions(scores, cfg.cycle.per_image_k,
                                                    global_budget=budget)
                score_by_key = {(s.image_id, s.region_id): s.score for s in scores}
                pool.reveal_regions(selections, cycle=a)
                for image_id, rid in selections:
                    _append_jsonl(os.path.join(out_dir, ACQUISITIONS_NAME),
                                  {"cycle": a, "image_id": image_id,
                                   "row": rid[0], "col": rid[1],
                                   "score": score_by_key[(image_id, rid)],
                                   "metric": cfg.cycle.metric})
                state["acquisitions_done"] = a + 1
                pool.save(os.path.join(out_dir, "pool", f"cycle_{a + 1:02d}.json"))
                save_state()
                if stop_after_cycle is not None and t - 1 >= stop_after_cycle:
                    break
                continue

            # training cycle t
            cycle = t
            torch.manual_seed(cfg.cycle.seed * 10_000 + cycle)
            if pair is None or cfg.train.reinit_per_cycle:
                pair = ModelPair(factory().to(device))
            rng = _rng_for(cfg.cycle.seed, 1, cycle)
            start_epoch = 0
            optimizer = None
            cyc_best_state, cyc_best_miou = None, -1.0
            mid = _latest_midcycle_ckpt(out_dir, cycle)
            if mid is not None:
                payload = load_checkpoint(mid)
                pair = restore_pair(payload, factory)
                pair.student.to(device)
                if pair.teacher is not None:
                    pair.teacher.to(device)
                optimizer = torch.optim.SGD(pair.student.parameters(), lr=cfg.train.lr0,
                                            momentum=cfg.train.sgd_momentum,
                                            weight_decay=cfg.train.weight_decay)
                optimizer.load_state_dict(payload["optimizer"])
                extra = payload["extra"]
                rng.bit_generator.state = extra["rng_state"]
                replay_buffer = ReplayBuffer.from_state(extra["replay"])
                start_epoch = extra["epoch"] + 1
                cyc_best_state = extra["best_teacher_state"]
                cyc_best_miou = extra["best_val_miou"]

            epochs = cfg.train.epochs_for_cycle(cycle, num_cycles)

            def on_epoch_end(cyc, epoch, pair_, opt, log: EpochLog,
                             best_state, best_miou):
                _append_jsonl(os.path.join(out_dir, METRICS_NAME), log.to_dict())
                if (epoch + 1) % cfg.train.checkpoint_every == 0 and epoch + 1 < epochs:
                    save_checkpoint(
                        os.path.join(out_dir, "checkpoints",
                                     f"cycle_{cyc:02d}_ep{epoch:03d}.pt"),
                        pair_, opt,
                        extra={"cycle": cyc, "epoch": epoch,
                               "rng_state": rng.bit_generator.state,
                               "replay": replay_buffer.state(),
                               "best_teacher_state": best_state,
                               "best_val_miou": best_miou})

            result = train_cycle(pool, dataset, pair, cfg.train, replay_buffer,
                                 cycle, rng, epochs=epochs, aug_cfg=cfg.augment,
                                 device=device, start_epoch=start_epoch,
                                 optimizer=optimizer,
                                 best_teacher_state=cyc_best_state,
                                 best_val_miou=cyc_best_miou,
                                 on_epoch_end=on_epoch_end)
            pair = result.pair
            best_teacher_state = result.best_teacher_state

            eval_model = factory()
            eval_model.load_state_dict(best_teacher_state)
            eval_model.to(device)
            per_t, miou_t, _ = evaluate(eval_model, dataset,
                                        dataset.test_ids or dataset.train_ids, device)
            per_s, miou_s, _ = evaluate(pair.student, dataset,
                                        dataset.test_ids or dataset.train_ids, device)
            _append_jsonl(os.path.join(out_dir, EVALS_NAME),
                          CycleEval(cycle, pool.labeled_fraction(), per_t, miou_t,
                                    per_s, miou_s).to_dict())

            save_checkpoint(os.path.join(out_dir, "checkpoints", f"cycle_{cycle:02d}.pt"),
                            pair, None,
                            extra={"cycle": cycle, "train_complete": True,
                                   "replay": replay_buffer.state(),
                                   "best_teacher_state": best_teacher_state,
                                   "best_val_miou": result.best_val_miou})
            state["trainings_done"] = t + 1
            save_state()

        report = build_report(out_dir)
        with open(os.path.join(out_dir, "report.json"), "w") as f:
            json.dump(report.to_dict(), f, indent=1)
        return report


def build_report(run_dir: str) -> ExperimentReport:
    """Assemble the per-cycle evaluation table from a (possibly partial) run."""
    state_path = os.path.join(run_dir, STATE_NAME)
    if not os.path.exists(state_path):
        raise IncompleteRunError(f"no {STATE_NAME} in {run_dir}")
    state = json.load(open(state_path))
    rows = read_jsonl(os.path.join(run_dir, EVALS_NAME))
    if not rows:
        raise IncompleteRunError("no completed training cycles to report")
    cycles = [CycleEval(**row) for row in rows]
    return ExperimentReport(config_digest=state["digest"], cycles=cycles,
                            final_labeled_fraction=cycles[-1].labeled_fraction,
                            wall_clock=state.get("wall_clock", 0.0))


def load_dataset_for(cfg: ExperimentConfig) -> Dataset:
    if not cfg.data.dir:
        raise InvalidArgumentError("config has no [data] dir")
    return load_dataset(cfg.data.dir, num_classes=cfg.data.num_classes,
                        ignore_index=cfg.data.ignore_index)

"""Per-cycle teacher-student training loop.

Each SSL step samples a labeled and an unlabeled batch, pseudo-labels weak
views with the teacher, trains the student on strong views (class-mixed within
the batch, plus a balanced-mix replay stream once active), steps SGD under a
poly learning-rate decay, and EMA-updates the teacher. Warmup epochs at the
start of every cycle are supervised-only. The loop is a single logical thread;
all stochasticity flows from the cycle rng, so runs are bit-reproducible.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, asdict

import numpy as np
import torch

from . import augment as aug
from .config import AugmentConfig, TrainSchedule
from .datapool import ClassDistribution, PoolState, class_pixel_distribution
from .dataset import Dataset
from .errors import CannotTrainError
from .losses import eta, pseudo_label, supervised_loss, weighted_unsup_loss
from .metrics import ConfusionMatrix
from .models import ModelPair, ema_update, forward
from .replay import ReplayBuffer


@dataclass
class EpochLog:
    cycle: int
    epoch: int
    phase: str
    l_sup: float
    l_unsup1: float
    l_unsup2: float
    eta1: float
    eta2: float
    l_total: float
    lr: float
    val_miou_teacher: float | None = None
    val_miou_student: float | None = None
    val_loss_teacher: float | None = None
    val_loss_student: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainCycleResult:
    pair: ModelPair
    logs: list[EpochLog]
    best_teacher_state: dict
    best_val_miou: float


def _to_image_tensor(arrs: list[np.ndarray], device) -> torch.Tensor:
    batch = np.stack(arrs).transpose(0, 3, 1, 2)
    return torch.from_numpy(np.ascontiguousarray(batch)).float().to(device)


def _supervised_target(dataset: Dataset, pool: PoolState, image_id: str) -> np.ndarray:
    """Ground truth where revealed, ignore elsewhere."""
    label = dataset.labels[image_id]
    known = pool.known_mask(image_id)
    return np.where(known, label, dataset.ignore_index).astype(np.int64)


class _UnsupBatch:
    """Strong views with transported-and-mixed pseudo labels for one stream."""

    __slots__ = ("images", "labels", "confidence", "valid", "etas")

    def __init__(self, images, labels, confidence, valid, etas):
        self.images = images
        self.labels = labels
        self.confidence = confidence
        self.valid = valid
        self.etas = etas


def _build_unsup_batch(ids: list[str], dataset: Dataset, pool: PoolState,
                       pair: ModelPair, schedule: TrainSchedule,
                       aug_cfg: AugmentConfig, dist: ClassDistribution,
                       balanced: bool, rng: np.random.Generator,
                       device) -> _UnsupBatch | None:
    """Weak views -> teacher pseudo labels -> strong views -> ClassMix."""
    weak_imgs, weak_known, weak_gt = [], [], []
    for image_id in ids:
        img, _, tf = aug.weak_augment(dataset.images[image_id], None, rng,
                                      aug_cfg.crop_h, aug_cfg.crop_w, aug_cfg.flip_prob)
        weak_imgs.append(img)
        weak_known.append(tf.apply(pool.known_mask(image_id)))
        weak_gt.append(tf.apply(dataset.labels[image_id]))
    pseudo = pseudo_label(pair.teacher, _to_image_tensor(weak_imgs, device))

    strong_imgs, strong_lbls, strong_confs, strong_valids = [], [], [], []
    for i, image_id in enumerate(ids):
        known = weak_known[i]
        merged_lbl = np.where(known, weak_gt[i], pseudo.labels[i]).astype(np.int64)
        merged_conf = np.where(known, 1.0, pseudo.confidence[i]).astype(np.float32)
        s_img, tf_s = aug.strong_augment(weak_imgs[i], rng, aug_cfg.scale_min,
                                         aug_cfg.scale_max, aug_cfg.jitter,
                                         aug_cfg.flip_prob)
        geom_valid = tf_s.valid_mask()
        lbl_s = tf_s.transport(merged_lbl, fill=dataset.ignore_index)
        conf_s = tf_s.transport(merged_conf, fill=0.0)
        known_s = tf_s.transport(known, fill=False)
        strong_imgs.append(s_img)
        strong_lbls.append(lbl_s)
        strong_confs.append(conf_s)
        # pseudo labels never compete with revealed ground truth
        strong_valids.append(geom_valid & ~known_s & (lbl_s != dataset.ignore_index))

    n = len(ids)
    perm = rng.permutation(n)
    mixed = []
    for i in range(n):
        src = int(perm[i])
        present_mask = strong_valids[src] | (strong_lbls[src] != dataset.ignore_index)
        present = set(int(c) for c in np.unique(strong_lbls[src][present_mask])
                      if c != dataset.ignore_index)
        if not present or src == i:
            mixed.append((strong_imgs[i], strong_lbls[i], strong_confs[i],
                          strong_valids[i]))
            continue
        classes = aug.select_mix_classes(present, set(dist.head), set(dist.tail),
                                         balanced, rng)
        img, lbl, conf = aug.classmix(strong_imgs[src], strong_lbls[src],
                                      strong_confs[src], strong_imgs[i],
                                      strong_lbls[i], strong_confs[i], classes)
        mask = aug.class_mask(strong_lbls[src], classes)
        valid = np.where(mask, strong_valids[src], strong_valids[i])
        mixed.append((img, lbl, conf, valid))

    images = _to_image_tensor([m[0] for m in mixed], device)
    labels = torch.from_numpy(np.stack([m[1] for m in mixed])).long().to(device)
    confidence = torch.from_numpy(np.stack([m[2] for m in mixed])).float().to(device)
    valid = torch.from_numpy(np.stack([m[3] for m in mixed])).to(device)
    etas = [eta(m[2], schedule.confidence_threshold, m[3]) for m in mixed]
    return _UnsupBatch(images, labels, confidence, valid, etas)


def _unsup_term(pair: ModelPair, batch: _UnsupBatch, schedule: TrainSchedule,
                device) -> tuple[torch.Tensor, float, float]:
    """Mean over images of eta_i * per-image weighted CE; returns (term, mean eta, term value)."""
    logits = forward(pair.student, batch.images, train=True)
    weights = batch.confidence if schedule.confidence_weighting \
        else torch.ones_like(batch.confidence)
    term = logits.sum() * 0.0
    n = batch.images.shape[0]
    for i in range(n):
        if batch.etas[i] == 0.0:
            continue
        li = weighted_unsup_loss(logits[i:i + 1], batch.labels[i:i + 1],
                                 weights[i:i + 1], batch.valid[i:i + 1])
        term = term + batch.etas[i] * li
    term = term / n
    return term, float(np.mean(batch.etas)), float(term.detach())


def evaluate(model: torch.nn.Module, dataset: Dataset, ids: list[str], device,
             batch_size: int = 8) -> tuple[list[float], float, float]:
    """Eval-mode mIoU and mean CE loss over the given split, no augmentation."""
    cm = ConfusionMatrix(dataset.num_classes)
    loss_sum, pixel_count = 0.0, 0
    for start in range(0, len(ids), batch_size):
        chunk = ids[start:start + batch_size]
        x = _to_image_tensor([dataset.images[i] for i in chunk], device)
        y = torch.from_numpy(np.stack([dataset.labels[i] for i in chunk])).long().to(device)
        logits = forward(model, x, train=False)
        pred = logits.argmax(dim=1).cpu().numpy()
        for j, image_id in enumerate(chunk):
            cm.accumulate(pred[j], dataset.labels[image_id], dataset.ignore_index)
        valid = y != dataset.ignore_index
        if bool(valid.any()):
            ce = torch.nn.functional.cross_entropy(
                logits, y, ignore_index=dataset.ignore_index, reduction="none")
            loss_sum += float(ce[valid].sum())
            pixel_count += int(valid.sum())
    per_class, miou = cm.iou()
    mean_loss = loss_sum / max(1, pixel_count)
    return per_class, miou, mean_loss


def train_cycle(pool: PoolState, dataset: Dataset, pair: ModelPair,
                schedule: TrainSchedule, replay_buffer: ReplayBuffer,
                cycle_index: int, rng: np.random.Generator, *,
                epochs: int | None = None, aug_cfg: AugmentConfig | None = None,
                device: str = "cpu", start_epoch: int = 0,
                optimizer: torch.optim.Optimizer | None = None,
                best_teacher_state: dict | None = None,
                best_val_miou: float = -1.0,
                on_epoch_end=None) -> TrainCycleResult:
    """Run one active-learning cycle's training; returns the pair and epoch logs.

    Epochs default to schedule.epochs. Warmup epochs use only labeled data;
    the teacher is spawned as an exact student copy when SSL starts. The
    balanced replay stream activates from schedule.balanced_classmix_start_cycle.
    """
    aug_cfg = aug_cfg or AugmentConfig()
    epochs = schedule.epochs if epochs is None else epochs
    labeled_ids = pool.labeled_stream()
    if not labeled_ids:
        raise CannotTrainError("no labeled images in the pool")
    unlabeled_ids = pool.unlabeled_stream()
    steps = schedule.steps_per_epoch or math.ceil(len(labeled_ids) / schedule.batch_size)
    max_iter = max(1, epochs * steps)
    if optimizer is None:
        optimizer = torch.optim.SGD(pair.student.parameters(), lr=schedule.lr0,
                                    momentum=schedule.sgd_momentum,
                                    weight_decay=schedule.weight_decay)
    dist = class_pixel_distribution(pool, dataset)
    bcm_active = (schedule.balanced_classmix
                  and cycle_index >= schedule.balanced_classmix_start_cycle)
    logs: list[EpochLog] = []

    for epoch in range(start_epoch, epochs):
        ssl_phase = epoch >= schedule.warmup_epochs and len(unlabeled_ids) > 0
        if ssl_phase and not pair.has_teacher:
            pair.spawn_teacher()
        sums = {"l_sup": 0.0, "u1": 0.0, "u2": 0.0, "eta1": 0.0, "eta2": 0.0}
        lr = schedule.lr0
        for step in range(steps):
            it = epoch * steps + step
            lr = schedule.lr0 * (1.0 - it / max_iter) ** schedule.poly_power
            for group in optimizer.param_groups:
                group["lr"] = lr

            idx = rng.integers(0, len(labeled_ids), size=schedule.batch_size)
            imgs, lbls = [], []
            for i in idx:
                image_id = labeled_ids[int(i)]
                img, lbl, _ = aug.weak_augment(dataset.images[image_id],
                                               _supervised_target(dataset, pool, image_id),
                                               rng, aug_cfg.crop_h, aug_cfg.crop_w,
                                               aug_cfg.flip_prob)
                imgs.append(img)
                lbls.append(lbl)
            x = _to_image_tensor(imgs, device)
            y = torch.from_numpy(np.stack(lbls)).long().to(device)
            logits = forward(pair.student, x, train=True)
            l_sup = supervised_loss(logits, y, dataset.ignore_index)
            loss = l_sup
            u1_val = u2_val = eta1_val = eta2_val = 0.0

            if ssl_phase:
                uidx = rng.integers(0, len(unlabeled_ids), size=schedule.batch_size)
                uids = [unlabeled_ids[int(i)] for i in uidx]
                if schedule.balanced_classmix:
                    for image_id in uids:
                        replay_buffer.push(image_id)
                batch1 = _build_unsup_batch(uids, dataset, pool, pair, schedule,
                                            aug_cfg, dist, balanced=False,
                                            rng=rng, device=device)
                term1, eta1_val, u1_val = _unsup_term(pair, batch1, schedule, device)
                loss = loss + term1
                if bcm_active and len(replay_buffer) > 0:
                    rids = replay_buffer.sample(schedule.batch_size, rng)
                    batch2 = _build_unsup_batch(rids, dataset, pool, pair, schedule,
                                                aug_cfg, dist, balanced=True,
                                                rng=rng, device=device)
                    term2, eta2_val, u2_val = _unsup_term(pair, batch2, schedule, device)
                    loss = loss + term2

            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            if pair.has_teacher:
                ema_update(pair, schedule.ema_momentum)

            sums["l_sup"] += float(l_sup.detach())
            sums["u1"] += u1_val
            sums["u2"] += u2_val
            sums["eta1"] += eta1_val
            sums["eta2"] += eta2_val

        mean = {k: v / steps for k, v in sums.items()}
        # logged components are derived so Eq.-style decomposition holds exactly
        l_unsup1 = mean["u1"] / mean["eta1"] if mean["eta1"] > 0 else 0.0
        l_unsup2 = mean["u2"] / mean["eta2"] if mean["eta2"] > 0 else 0.0
        l_total = mean["l_sup"] + mean["eta1"] * l_unsup1 + mean["eta2"] * l_unsup2
        log = EpochLog(cycle=cycle_index, epoch=epoch,
                       phase="ssl" if ssl_phase else "warmup",
                       l_sup=mean["l_sup"], l_unsup1=l_unsup1, l_unsup2=l_unsup2,
                       eta1=mean["eta1"], eta2=mean["eta2"], l_total=l_total, lr=lr)

        run_val = dataset.val_ids and (
            (epoch + 1) % schedule.val_every == 0 or epoch == epochs - 1)
        if run_val:
            _, miou_s, loss_s = evaluate(pair.student, dataset, dataset.val_ids, device)
            log.val_miou_student = miou_s
            log.val_loss_student = loss_s
            if pair.has_teacher:
                _, miou_t, loss_t = evaluate(pair.teacher, dataset, dataset.val_ids, device)
                log.val_miou_teacher = miou_t
                log.val_loss_teacher = loss_t
                if miou_t >= best_val_miou:
                    best_val_miou = miou_t
                    best_teacher_state = copy.deepcopy(pair.teacher.state_dict())
        logs.append(log)
        if on_epoch_end is not None:
            on_epoch_end(cycle_index, epoch, pair, optimizer, log,
                         best_teacher_state, best_val_miou)

    if not pair.has_teacher:
        pair.spawn_teacher()
    if best_teacher_state is None:
        best_teacher_state = copy.deepcopy(pair.teacher.state_dict())
        best_val_miou = float("nan")
    return TrainCycleResult(pair=pair, logs=logs,
                            best_teacher_state=best_teacher_state,
                            best_val_miou=best_val_miou)

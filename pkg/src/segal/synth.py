"""Synthetic long-tail shapes dataset for desk-scale experiments.

Images are colored geometric shapes on a textured background. Class pixel
shares follow the requested long-tail ratios (class 0 is the background);
later classes draw on top, so targets for earlier classes are inflated by the
expected cover. Per-image color jitter and pixel noise keep the task from
being solvable by memorizing a single color per class.
"""

from __future__ import annotations

import colorsys

import numpy as np

from .dataset import Dataset
from .errors import InvalidArgumentError


def default_palette(num_classes: int) -> np.ndarray:
    """Background plus shape colors; the last two classes are deliberately close."""
    colors = [(0.46, 0.52, 0.46)]
    if num_classes == 4:
        colors += [(0.62, 0.40, 0.24), (0.25, 0.42, 0.72), (0.34, 0.38, 0.68)]
    else:
        for c in range(1, num_classes):
            hue = (c - 1) / max(1, num_classes - 1)
            if c == num_classes - 1:  # pull the rarest class toward its neighbor
                hue = (c - 1.35) / max(1, num_classes - 1)
            colors.append(colorsys.hsv_to_rgb(hue, 0.55, 0.68))
    return np.array(colors, dtype=np.float32)


def _draw_rect(label: np.ndarray, rng: np.random.Generator, area: float, cls: int) -> None:
    h_img, w_img = label.shape
    aspect = rng.uniform(0.6, 1.7)
    h = int(np.clip(round(np.sqrt(area * aspect)), 2, h_img))
    w = int(np.clip(round(area / h), 2, w_img))
    y0 = int(rng.integers(0, h_img - h + 1))
    x0 = int(rng.integers(0, w_img - w + 1))
    label[y0:y0 + h, x0:x0 + w] = cls


def _draw_ellipse(label: np.ndarray, rng: np.random.Generator, area: float, cls: int) -> None:
    h_img, w_img = label.shape
    aspect = rng.uniform(0.6, 1.7)
    ry = np.sqrt(area * aspect / np.pi)
    rx = area / (np.pi * ry)
    ry = float(np.clip(ry, 1.5, h_img / 2))
    rx = float(np.clip(rx, 1.5, w_img / 2))
    cy = float(rng.uniform(ry, h_img - ry))
    cx = float(rng.uniform(rx, w_img - rx))
    yy, xx = np.mgrid[0:h_img, 0:w_img]
    mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    label[mask] = cls


def _draw_triangle(label: np.ndarray, rng: np.random.Generator, area: float, cls: int) -> None:
    h_img, w_img = label.shape
    aspect = rng.uniform(0.7, 1.5)
    h = int(np.clip(round(np.sqrt(2 * area * aspect)), 3, h_img))
    w = int(np.clip(round(2 * area / h), 3, w_img))
    y0 = int(rng.integers(0, h_img - h + 1))
    x0 = int(rng.integers(0, w_img - w + 1))
    flip = rng.random() < 0.5
    yy, xx = np.mgrid[0:h, 0:w]
    tri = xx * h <= (h - yy) * w if not flip else xx * h <= yy * w
    sub = label[y0:y0 + h, x0:x0 + w]
    sub[tri] = cls


_SHAPE_FNS = (_draw_rect, _draw_ellipse, _draw_triangle)


def _render_image(label: np.ndarray, palette: np.ndarray, rng: np.random.Generator,
                  noise: float, color_jitter: float) -> np.ndarray:
    h, w = label.shape
    shifted = palette + rng.normal(0.0, color_jitter, size=palette.shape)
    img = shifted[label].astype(np.float32)
    # low-frequency background texture
    coarse = rng.normal(0.0, 0.09, size=(8, 8)).astype(np.float32)
    texture = np.kron(coarse, np.ones((h // 8 + 1, w // 8 + 1), dtype=np.float32))[:h, :w]
    img[label == 0] += texture[label == 0, None]
    img += rng.normal(0.0, noise, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_synthetic(num_classes: int = 4,
                       shares: tuple[float, ...] = (0.55, 0.30, 0.10, 0.05),
                       height: int = 64, width: int = 64,
                       train_images: int = 200, val_images: int = 0,
                       test_images: int = 0, seed: int = 0,
                       noise: float = 0.05, color_jitter: float = 0.06,
                       ignore_index: int = 255) -> Dataset:
    """Deterministic shapes dataset; realized class shares track `shares`."""
    if num_classes < 3:
        raise InvalidArgumentError("need at least 3 classes (background + 2 shapes)")
    shares_arr = np.asarray(shares, dtype=np.float64)
    if len(shares_arr) != num_classes or (shares_arr <= 0).any() \
            or abs(shares_arr.sum() - 1.0) > 1e-6:
        raise InvalidArgumentError(f"infeasible class shares {shares}")
    if shares_arr[0] < 0.25:
        raise InvalidArgumentError("background share below 0.25 leaves no room for texture")

    rng = np.random.default_rng(seed)
    palette = default_palette(num_classes)
    total_px = height * width

    counts = {"train": train_images, "val": val_images, "test": test_images}
    images: dict[str, np.ndarray] = {}
    labels: dict[str, np.ndarray] = {}
    split_ids: dict[str, list[str]] = {"train": [], "val": [], "test": []}
    serial = 0
    for split in ("train", "val", "test"):
        for _ in range(counts[split]):
            image_id = f"synth_{serial:04d}"
            serial += 1
            label = np.zeros((height, width), dtype=np.int32)
            for cls in range(1, num_classes):
                # later classes draw on top: inflate by the expected cover
                later = float(shares_arr[cls + 1:].sum())
                target = shares_arr[cls] / max(1e-9, 1.0 - later) * total_px
                target *= rng.uniform(0.92, 1.08)
                draw = _SHAPE_FNS[(cls - 1) % len(_SHAPE_FNS)]
                for attempt in range(8):
                    deficit = target - int((label == cls).sum())
                    if deficit < max(8.0, 0.03 * target):
                        break
                    area = deficit * rng.uniform(0.6, 1.0) if attempt == 0 else deficit
                    draw(label, rng, float(area), cls)
            images[image_id] = _render_image(label, palette, rng, noise, color_jitter)
            labels[image_id] = label
            split_ids[split].append(image_id)

    return Dataset(num_classes=num_classes, images=images, labels=labels,
                   train_ids=split_ids["train"], val_ids=split_ids["val"],
                   test_ids=split_ids["test"], ignore_index=ignore_index)


def realized_shares(dataset: Dataset, ids: list[str] | None = None) -> np.ndarray:
    """Dataset-average per-class pixel shares (ignore pixels excluded)."""
    ids = ids if ids is not None else dataset.train_ids
    counts = np.zeros(dataset.num_classes, dtype=np.int64)
    for image_id in ids:
        lbl = dataset.labels[image_id]
        lbl = lbl[lbl != dataset.ignore_index]
        counts += np.bincount(lbl, minlength=dataset.num_classes)[:dataset.num_classes]
    return counts / counts.sum()

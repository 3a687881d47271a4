"""Weak/strong augmentation pipelines and the class-mask mixing machinery.

Everything here is a pure function of (inputs, rng): safe to run in parallel
across a mini-batch given independent rng streams. Strong views are derived
from the weak view, so a single geometric record transports teacher maps from
weak to strong space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class WeakTransform:
    """Crop offset plus horizontal flip; invertible on the crop extent."""

    crop_y0: int
    crop_x0: int
    crop_h: int
    crop_w: int
    hflip: bool

    def apply(self, arr: np.ndarray) -> np.ndarray:
        out = arr[self.crop_y0:self.crop_y0 + self.crop_h,
                  self.crop_x0:self.crop_x0 + self.crop_w]
        if self.hflip:
            out = out[:, ::-1]
        return np.ascontiguousarray(out)


@dataclass(frozen=True)
class StrongTransform:
    """Geometric part of the strong view: scale, flip, and re-crop/pad to size.

    Maps weak-view pixel maps into the strong view; photometric jitter is not
    recorded (it does not move pixels).
    """

    scale: float
    hflip: bool
    in_h: int
    in_w: int

    @property
    def scaled_h(self) -> int:
        return max(1, int(round(self.in_h * self.scale)))

    @property
    def scaled_w(self) -> int:
        return max(1, int(round(self.in_w * self.scale)))

    def _offsets(self) -> tuple[int, int]:
        # center alignment for both crop (scaled > in) and pad (scaled < in)
        dy = (self.scaled_h - self.in_h) // 2
        dx = (self.scaled_w - self.in_w) // 2
        return dy, dx

    def _source_index(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per output pixel: nearest weak-view source index and validity."""
        dy, dx = self._offsets()
        ys = np.arange(self.in_h) + dy
        xs = np.arange(self.in_w) + dx
        valid_y = (ys >= 0) & (ys < self.scaled_h)
        valid_x = (xs >= 0) & (xs < self.scaled_w)
        src_y = np.clip(((ys + 0.5) / self.scale - 0.5).round().astype(int), 0, self.in_h - 1)
        src_x = np.clip(((xs + 0.5) / self.scale - 0.5).round().astype(int), 0, self.in_w - 1)
        valid = valid_y[:, None] & valid_x[None, :]
        return src_y, src_x, valid

    def transport(self, arr: np.ndarray, fill) -> np.ndarray:
        """Carry a weak-view map (nearest-neighbor) into the strong view."""
        src_y, src_x, valid = self._source_index()
        out = arr[np.ix_(src_y, src_x)].copy()
        out[~valid] = fill
        if self.hflip:
            out = out[:, ::-1]
        return np.ascontiguousarray(out)

    def transport_image(self, img: np.ndarray, fill: float = 0.0) -> np.ndarray:
        """Bilinear variant for images (channels last)."""
        scaled = _resize_bilinear(img, self.scaled_h, self.scaled_w)
        dy, dx = self._offsets()
        out = np.full((self.in_h, self.in_w) + img.shape[2:], fill, dtype=img.dtype)
        ys = slice(max(0, -dy), min(self.in_h, self.scaled_h - dy))
        xs = slice(max(0, -dx), min(self.in_w, self.scaled_w - dx))
        out[ys, xs] = scaled[ys.start + dy: ys.stop + dy, xs.start + dx: xs.stop + dx]
        if self.hflip:
            out = out[:, ::-1]
        return np.ascontiguousarray(out)

    def valid_mask(self) -> np.ndarray:
        """Strong-view pixels that correspond to a weak-view pixel."""
        _, _, valid = self._source_index()
        if self.hflip:
            valid = valid[:, ::-1]
        return np.ascontiguousarray(valid)

    def inverse_transport(self, arr: np.ndarray, fill) -> np.ndarray:
        """Best-effort inverse for maps; exact on the overlap at integer scales."""
        out_map = arr[:, ::-1] if self.hflip else arr
        dy, dx = self._offsets()
        inv = np.full((self.in_h, self.in_w), fill, dtype=arr.dtype)
        ys = np.clip(((np.arange(self.in_h) + 0.5) * self.scale - 0.5).round().astype(int) - dy,
                     -1, self.in_h)
        xs = np.clip(((np.arange(self.in_w) + 0.5) * self.scale - 0.5).round().astype(int) - dx,
                     -1, self.in_w)
        ok_y = (ys >= 0) & (ys < self.in_h)
        ok_x = (xs >= 0) & (xs < self.in_w)
        grid = np.ix_(np.flatnonzero(ok_y), np.flatnonzero(ok_x))
        inv[grid] = out_map[np.ix_(ys[ok_y], xs[ok_x])]
        return inv


def _resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape[:2]
    if (out_h, out_w) == (h, w):
        return img.copy()
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None] if img.ndim == 3 else (ys - y0)[:, None]
    fx = (xs - x0)[None, :, None] if img.ndim == 3 else (xs - x0)[None, :]
    a = img[np.ix_(y0, x0)]
    b = img[np.ix_(y0, x1)]
    c = img[np.ix_(y1, x0)]
    d = img[np.ix_(y1, x1)]
    top = a * (1 - fx) + b * fx
    bot = c * (1 - fx) + d * fx
    return (top * (1 - fy) + bot * fy).astype(img.dtype)


def weak_augment(image: np.ndarray, label: np.ndarray | None, rng: np.random.Generator,
                 crop_h: int | None = None, crop_w: int | None = None,
                 flip_prob: float = 0.5):
    """Horizontal flip (p=0.5) plus random crop; label gets the same transform.

    Returns (image, label_or_none, WeakTransform). Crop defaults to full size.
    """
    h, w = image.shape[:2]
    ch = h if crop_h in (None, 0) else crop_h
    cw = w if crop_w in (None, 0) else crop_w
    if ch > h or cw > w:
        raise InvalidArgumentError(f"crop {ch}x{cw} larger than image {h}x{w}")
    y0 = int(rng.integers(0, h - ch + 1))
    x0 = int(rng.integers(0, w - cw + 1))
    flip = bool(rng.random() < flip_prob)
    tf = WeakTransform(y0, x0, ch, cw, flip)
    out_img = tf.apply(image)
    out_lbl = tf.apply(label) if label is not None else None
    return out_img, out_lbl, tf


def strong_augment(image: np.ndarray, rng: np.random.Generator,
                   scale_min: float = 0.5, scale_max: float = 2.0,
                   jitter: float = 0.25, flip_prob: float = 0.5):
    """Random scale, flip, and color jitter on a weak view; returns (image, transform).

    The geometric part is recorded so teacher maps can be transported; the
    output stays the input size (center crop/pad) with values clamped to [0,1].
    """
    h, w = image.shape[:2]
    scale = float(rng.uniform(scale_min, scale_max))
    flip = bool(rng.random() < flip_prob)
    tf = StrongTransform(scale=scale, hflip=flip, in_h=h, in_w=w)
    out = tf.transport_image(image)
    out = _color_jitter(out, rng, jitter)
    return np.clip(out, 0.0, 1.0).astype(np.float32), tf


def _color_jitter(img: np.ndarray, rng: np.random.Generator, strength: float) -> np.ndarray:
    if strength <= 0:
        return img
    out = img.astype(np.float32)
    b = float(rng.uniform(1 - strength, 1 + strength))
    c = float(rng.uniform(1 - strength, 1 + strength))
    s = float(rng.uniform(1 - strength, 1 + strength))
    out = out * b
    mean = out.mean()
    out = (out - mean) * c + mean
    gray = out @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
    out = (out - gray[..., None]) * s + gray[..., None]
    return out


def select_mix_classes(present: set[int], head: set[int], tail: set[int],
                       balanced: bool, rng: np.random.Generator) -> set[int]:
    """Pick ceil(|present|/2) classes to paste from the source image.

    Unbalanced: uniform over the present classes. Balanced: fill from
    present∩tail first (uniform order), then from present∩head, so tail
    classes dominate the pasted mask whenever they are present at all.
    """
    if not present:
        raise InvalidArgumentError("no classes present in source label map")
    k = -(-len(present) // 2)
    if not balanced:
        chosen = rng.choice(sorted(present), size=k, replace=False)
        return {int(c) for c in chosen}
    tail_pool = sorted(present & tail)
    head_pool = sorted(present & head)
    order = list(rng.permutation(tail_pool)) + list(rng.permutation(head_pool))
    return {int(c) for c in order[:k]}


def class_mask(label: np.ndarray, classes: Iterable[int]) -> np.ndarray:
    """Boolean mask of pixels whose label is one of the given classes."""
    classes = list(classes)
    if not classes:
        return np.zeros(label.shape, dtype=bool)
    return np.isin(label, classes)


def classmix(src_img: np.ndarray, src_lbl: np.ndarray, src_conf: np.ndarray,
             tgt_img: np.ndarray, tgt_lbl: np.ndarray, tgt_conf: np.ndarray,
             classes: Iterable[int]):
    """Paste all source pixels of the chosen classes onto the target.

    Image, label, and per-pixel confidence are mixed through the same mask so
    confidence weights stay aligned with the mixed labels.
    """
    if src_img.shape != tgt_img.shape or src_lbl.shape != tgt_lbl.shape \
            or src_conf.shape != tgt_conf.shape or src_lbl.shape != src_img.shape[:2]:
        raise InvalidArgumentError("classmix shape mismatch")
    mask = class_mask(src_lbl, classes)
    img = np.where(mask[..., None], src_img, tgt_img)
    lbl = np.where(mask, src_lbl, tgt_lbl)
    conf = np.where(mask, src_conf, tgt_conf)
    return img, lbl, conf

"""In-memory dataset plus the on-disk layout (images, label maps, manifest)."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import InvalidArgumentError

DEFAULT_IGNORE_INDEX = 255

MANIFEST_NAME = "manifest.txt"
IMAGE_DIR = "images"
LABEL_DIR = "labels"


@dataclass
class Dataset:
    """Images in [0,1] (H,W,3 float32), per-pixel class labels, and split ids.

    Label values are class indices in {0..K-1} or ignore_index; ignore pixels
    are excluded from loss and IoU but remain acquirable annotation.
    """

    num_classes: int
    images: dict[str, np.ndarray]
    labels: dict[str, np.ndarray]
    train_ids: list[str]
    val_ids: list[str] = field(default_factory=list)
    test_ids: list[str] = field(default_factory=list)
    ignore_index: int = DEFAULT_IGNORE_INDEX

    def __post_init__(self):
        self.validate()

    @property
    def height(self) -> int:
        return next(iter(self.images.values())).shape[0]

    @property
    def width(self) -> int:
        return next(iter(self.images.values())).shape[1]

    def all_ids(self) -> list[str]:
        return self.train_ids + self.val_ids + self.test_ids

    def validate(self) -> None:
        if not self.images:
            raise InvalidArgumentError("dataset has no images")
        shapes = {img.shape for img in self.images.values()}
        if len(shapes) != 1:
            raise InvalidArgumentError(f"images must share one shape, got {shapes}")
        shape = shapes.pop()
        if len(shape) != 3 or shape[2] != 3:
            raise InvalidArgumentError(f"images must be HxWx3, got {shape}")
        for image_id in self.all_ids():
            if image_id not in self.images or image_id not in self.labels:
                raise InvalidArgumentError(f"manifest id {image_id!r} missing image or label")
            lbl = self.labels[image_id]
            if lbl.shape != shape[:2]:
                raise InvalidArgumentError(f"label shape mismatch for {image_id!r}")
            bad = (lbl != self.ignore_index) & ((lbl < 0) | (lbl >= self.num_classes))
            if bad.any():
                raise InvalidArgumentError(f"label values out of range for {image_id!r}")


def save_dataset(dataset: Dataset, root: str) -> None:
    """Write images/<id>.png, labels/<id>.png and a 'split id' manifest."""
    os.makedirs(os.path.join(root, IMAGE_DIR), exist_ok=True)
    os.makedirs(os.path.join(root, LABEL_DIR), exist_ok=True)
    for image_id, img in dataset.images.items():
        arr = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(os.path.join(root, IMAGE_DIR, f"{image_id}.png"))
        lbl = dataset.labels[image_id].astype(np.uint8)
        Image.fromarray(lbl, mode="L").save(os.path.join(root, LABEL_DIR, f"{image_id}.png"))
    with open(os.path.join(root, MANIFEST_NAME), "w") as f:
        f.write(f"# num_classes {dataset.num_classes}\n")
        f.write(f"# ignore_index {dataset.ignore_index}\n")
        for split, ids in (("train", dataset.train_ids), ("val", dataset.val_ids),
                           ("test", dataset.test_ids)):
            for image_id in ids:
                f.write(f"{split} {image_id}\n")


def load_dataset(root: str, num_classes: int | None = None,
                 ignore_index: int | None = None) -> Dataset:
    """Load the on-disk layout written by save_dataset (or hand-assembled)."""
    manifest = os.path.join(root, MANIFEST_NAME)
    if not os.path.isfile(manifest):
        raise InvalidArgumentError(f"no {MANIFEST_NAME} in {root}")
    splits: dict[str, list[str]] = {"train": [], "val": [], "test": []}
    meta: dict[str, int] = {}
    with open(manifest) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] in ("num_classes", "ignore_index"):
                    meta[parts[0]] = int(parts[1])
                continue
            split, image_id = line.split(maxsplit=1)
            if split not in splits:
                raise InvalidArgumentError(f"unknown split {split!r} in manifest")
            splits[split].append(image_id)
    if num_classes is None:
        num_classes = meta.get("num_classes")
    if num_classes is None:
        raise InvalidArgumentError("num_classes not given and not in manifest")
    if ignore_index is None:
        ignore_index = meta.get("ignore_index", DEFAULT_IGNORE_INDEX)

    images: dict[str, np.ndarray] = {}
    labels: dict[str, np.ndarray] = {}
    for image_id in splits["train"] + splits["val"] + splits["test"]:
        img_path = os.path.join(root, IMAGE_DIR, f"{image_id}.png")
        lbl_path = os.path.join(root, LABEL_DIR, f"{image_id}.png")
        images[image_id] = np.asarray(Image.open(img_path).convert("RGB"),
                                      dtype=np.float32) / 255.0
        labels[image_id] = np.asarray(Image.open(lbl_path), dtype=np.int32)
    return Dataset(num_classes=num_classes, images=images, labels=labels,
                   train_ids=splits["train"], val_ids=splits["val"],
                   test_ids=splits["test"], ignore_index=ignore_index)

"""Labeling pool state: region grid, per-image known masks, and class accounting.

The pool is the single source of truth for which pixels have ground truth
revealed. Reveals only ever happen at region granularity (or whole images at
the initial split), so the pool stores revealed region ids per image and
materializes boolean masks on demand. All transitions are single-writer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import Dataset
from .errors import DuplicateAcquisitionError, EmptyPoolError, InvalidArgumentError

RegionID = tuple[int, int]

POOL_FORMAT_VERSION = 1


class Status(str, Enum):
    LABELED = "labeled"
    UNLABELED = "unlabeled"
    PARTIAL = "partial"


@dataclass(frozen=True)
class Region:
    """One grid cell: (row, col) id plus its pixel extent."""

    row: int
    col: int
    y0: int
    x0: int
    h: int
    w: int

    @property
    def region_id(self) -> RegionID:
        return (self.row, self.col)

    @property
    def area(self) -> int:
        return self.h * self.w

    @property
    def slices(self) -> tuple[slice, slice]:
        return (slice(self.y0, self.y0 + self.h), slice(self.x0, self.x0 + self.w))


class RegionGrid:
    """Disjoint tiling of an H×W image into nominally region_h×region_w cells.

    When the region size does not divide the image, the last row/column of
    cells is smaller (ragged) so the grid still tiles the image exactly.
    """

    def __init__(self, height: int, width: int, region_h: int, region_w: int):
        if min(height, width, region_h, region_w) <= 0:
            raise InvalidArgumentError("grid dimensions must be positive")
        self.height = height
        self.width = width
        self.region_h = region_h
        self.region_w = region_w
        self.rows = math.ceil(height / region_h)
        self.cols = math.ceil(width / region_w)
        self._regions: dict[RegionID, Region] = {}
        for r in range(self.rows):
            y0 = r * region_h
            h = min(region_h, height - y0)
            for c in range(self.cols):
                x0 = c * region_w
                w = min(region_w, width - x0)
                self._regions[(r, c)] = Region(r, c, y0, x0, h, w)

    def __len__(self) -> int:
        return self.rows * self.cols

    def __iter__(self):
        return iter(self._regions.values())

    def region(self, region_id: RegionID) -> Region:
        try:
            return self._regions[tuple(region_id)]
        except KeyError:
            raise InvalidArgumentError(f"no region {region_id} in {self.rows}x{self.cols} grid")

    def region_ids(self) -> list[RegionID]:
        return sorted(self._regions.keys())


def build_region_grid(height: int, width: int, region_h: int, region_w: int) -> RegionGrid:
    return RegionGrid(height, width, region_h, region_w)


@dataclass
class AcquisitionRecord:
    cycle: int
    image_id: str
    row: int
    col: int

    def as_tuple(self) -> tuple[int, str, int, int]:
        return (self.cycle, self.image_id, self.row, self.col)


@dataclass(frozen=True)
class ClassDistribution:
    """Per-class pixel counts over known, non-ignore pixels with head/tail split.

    A class is tail iff its labeled-pixel share is < 1/K; head otherwise.
    """

    pixel_count: np.ndarray
    head: frozenset[int]
    tail: frozenset[int]

    @classmethod
    def from_counts(cls, counts: np.ndarray) -> "ClassDistribution":
        counts = np.asarray(counts, dtype=np.int64)
        total = int(counts.sum())
        if total == 0:
            raise EmptyPoolError("no known, non-ignore pixels to build a class distribution")
        k = len(counts)
        shares = counts / total
        tail = frozenset(int(c) for c in range(k) if shares[c] < 1.0 / k)
        head = frozenset(range(k)) - tail
        return cls(pixel_count=counts, head=head, tail=tail)

    @property
    def shares(self) -> np.ndarray:
        return self.pixel_count / self.pixel_count.sum()


class PoolState:
    """Per-image labeling status plus the region grid and acquisition history."""

    def __init__(self, image_ids: Sequence[str], grid: RegionGrid, seed: int):
        if len(set(image_ids)) != len(image_ids):
            raise InvalidArgumentError("duplicate image ids in pool")
        self.grid = grid
        self.seed = seed
        self.image_ids: list[str] = list(image_ids)
        self._full: dict[str, bool] = {i: False for i in image_ids}
        self._revealed: dict[str, set[RegionID]] = {i: set() for i in image_ids}
        self.acquisition_log: list[AcquisitionRecord] = []

    # -- status and masks ---------------------------------------------------

    def _check_id(self, image_id: str) -> None:
        if image_id not in self._full:
            raise InvalidArgumentError(f"unknown image id {image_id!r}")

    def status(self, image_id: str) -> Status:
        self._check_id(image_id)
        if self._full[image_id]:
            return Status.LABELED
        revealed = self._revealed[image_id]
        if not revealed:
            return Status.UNLABELED
        if len(revealed) == len(self.grid):
            return Status.LABELED
        return Status.PARTIAL

    def known_mask(self, image_id: str) -> np.ndarray:
        self._check_id(image_id)
        mask = np.zeros((self.grid.height, self.grid.width), dtype=bool)
        if self._full[image_id]:
            mask[:] = True
            return mask
        for rid in self._revealed[image_id]:
            mask[self.grid.region(rid).slices] = True
        return mask

    def known_pixel_count(self, image_id: str) -> int:
        self._check_id(image_id)
        if self._full[image_id]:
            return self.grid.height * self.grid.width
        return sum(self.grid.region(rid).area for rid in self._revealed[image_id])

    def revealed_regions(self, image_id: str) -> frozenset[RegionID]:
        self._check_id(image_id)
        return frozenset(self._revealed[image_id])

    def unknown_region_ids(self, image_id: str) -> list[RegionID]:
        """Region ids that still contain at least one unknown pixel."""
        self._check_id(image_id)
        if self._full[image_id]:
            return []
        revealed = self._revealed[image_id]
        return [rid for rid in self.grid.region_ids() if rid not in revealed]

    def ids_with_status(self, *statuses: Status) -> list[str]:
        wanted = set(statuses)
        return [i for i in self.image_ids if self.status(i) in wanted]

    def labeled_stream(self) -> list[str]:
        """Images contributing supervised loss (at least one known pixel)."""
        return [i for i in self.image_ids if self.status(i) is not Status.UNLABELED]

    def unlabeled_stream(self) -> list[str]:
        """Images contributing unsupervised loss (at least one unknown pixel)."""
        return [i for i in self.image_ids if self.status(i) is not Status.LABELED]

    # -- transitions ----------------------------------------------------------

    def mark_fully_labeled(self, image_id: str) -> None:
        self._check_id(image_id)
        self._full[image_id] = True

    def reveal_regions(self, selections: Iterable[tuple[str, RegionID]], cycle: int) -> "PoolState":
        """Reveal ground truth over each selected region; appends to the log.

        Every selection must target a region with at least one unknown pixel;
        a duplicate or already-known region raises DuplicateAcquisitionError
        and leaves the pool unchanged.
        """
        selections = [(img, (int(r), int(c))) for img, (r, c) in selections]
        seen: set[tuple[str, RegionID]] = set()
        for image_id, rid in selections:
            self._check_id(image_id)
            self.grid.region(rid)
            key = (image_id, rid)
            if key in seen:
                raise DuplicateAcquisitionError(f"region {rid} of {image_id!r} selected twice")
            seen.add(key)
            if self._full[image_id] or rid in self._revealed[image_id]:
                raise DuplicateAcquisitionError(f"region {rid} of {image_id!r} already known")
        for image_id, rid in selections:
            self._revealed[image_id].add(rid)
            self.acquisition_log.append(AcquisitionRecord(cycle, image_id, rid[0], rid[1]))
        return self

    # -- accounting -----------------------------------------------------------

    def labeled_fraction(self) -> float:
        total = len(self.image_ids) * self.grid.height * self.grid.width
        if total == 0:
            return 0.0
        known = sum(self.known_pixel_count(i) for i in self.image_ids)
        return known / total

    # -- persistence ------------------------------------------------------------

    def to_json(self) -> str:
        images = []
        for image_id in self.image_ids:
            status = self.status(image_id)
            entry: dict = {"id": image_id, "status": status.value}
            if status is Status.PARTIAL:
                entry["known_rle"] = _rle_encode(self.known_mask(image_id))
            images.append(entry)
        doc = {
            "version": POOL_FORMAT_VERSION,
            "seed": self.seed,
            "height": self.grid.height,
            "width": self.grid.width,
            "region_h": self.grid.region_h,
            "region_w": self.grid.region_w,
            "images": images,
            "acquisition_log": [rec.as_tuple() for rec in self.acquisition_log],
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "PoolState":
        doc = json.loads(text)
        if doc.get("version") != POOL_FORMAT_VERSION:
            raise InvalidArgumentError(f"unsupported pool format version {doc.get('version')}")
        grid = RegionGrid(doc["height"], doc["width"], doc["region_h"], doc["region_w"])
        ids = [e["id"] for e in doc["images"]]
        pool = cls(ids, grid, seed=int(doc["seed"]))
        statuses = {e["id"]: e["status"] for e in doc["images"]}
        for cycle, image_id, row, col in doc["acquisition_log"]:
            pool._revealed[image_id].add((row, col))
            pool.acquisition_log.append(AcquisitionRecord(int(cycle), image_id, int(row), int(col)))
        for e in doc["images"]:
            if e["status"] == Status.LABELED.value and not pool._revealed[e["id"]]:
                pool._full[e["id"]] = True
        # integrity: stored RLE must reproduce the mask implied by the log
        for e in doc["images"]:
            if pool.status(e["id"]).value != statuses[e["id"]]:
                raise InvalidArgumentError(f"pool file inconsistent for image {e['id']!r}")
            if "known_rle" in e:
                decoded = _rle_decode(e["known_rle"], grid.height, grid.width)
                if not np.array_equal(decoded, pool.known_mask(e["id"])):
                    raise InvalidArgumentError(f"RLE mask mismatch for image {e['id']!r}")
        return pool

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path) -> "PoolState":
        with open(path) as f:
            return cls.from_json(f.read())


def _rle_encode(mask: np.ndarray) -> list[int]:
    """Run-length encode the True runs of a flattened mask as [start, len, ...]."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if not flat.any():
        return []
    padded = np.concatenate(([False], flat, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    starts, ends = edges[::2], edges[1::2]
    out: list[int] = []
    for s, e in zip(starts, ends):
        out.extend((int(s), int(e - s)))
    return out


def _rle_decode(runs: Sequence[int], height: int, width: int) -> np.ndarray:
    flat = np.zeros(height * width, dtype=bool)
    for i in range(0, len(runs), 2):
        start, length = runs[i], runs[i + 1]
        flat[start : start + length] = True
    return flat.reshape(height, width)


def init_split(dataset: Dataset, fraction: float, seed: int,
               region_h: int, region_w: int) -> PoolState:
    """Uniformly sample round(fraction*N) train images (min 1) as fully labeled."""
    pool = init_split_ids(dataset.train_ids, dataset.height, dataset.width,
                          fraction, seed, region_h, region_w)
    return pool


def init_split_ids(image_ids: Sequence[str], height: int, width: int, fraction: float,
                   seed: int, region_h: int, region_w: int) -> PoolState:
    """Split over bare ids; lets budget dry runs skip loading pixel data."""
    if not 0.0 < fraction < 1.0:
        raise InvalidArgumentError(f"initial fraction must be in (0,1), got {fraction}")
    n = len(image_ids)
    if n == 0:
        raise InvalidArgumentError("empty image id list")
    # round-half-up with a floor of one image
    n_labeled = max(1, math.floor(fraction * n + 0.5))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(n, size=n_labeled, replace=False)
    grid = build_region_grid(height, width, region_h, region_w)
    pool = PoolState(image_ids, grid, seed=seed)
    for idx in chosen:
        pool.mark_fully_labeled(image_ids[int(idx)])
    return pool


def class_pixel_distribution(pool: PoolState, dataset: Dataset) -> ClassDistribution:
    """Counts over known, non-ignore pixels; raises EmptyPoolError when none."""
    k = dataset.num_classes
    counts = np.zeros(k, dtype=np.int64)
    for image_id in pool.image_ids:
        status = pool.status(image_id)
        if status is Status.UNLABELED:
            continue
        label = dataset.labels[image_id]
        if status is Status.LABELED:
            known = label.ravel()
        else:
            parts = [label[pool.grid.region(rid).slices].ravel()
                     for rid in pool.revealed_regions(image_id)]
            known = np.concatenate(parts) if parts else np.empty(0, dtype=label.dtype)
        known = known[known != dataset.ignore_index]
        if known.size:
            counts += np.bincount(known, minlength=k)[:k]
    return ClassDistribution.from_counts(counts)

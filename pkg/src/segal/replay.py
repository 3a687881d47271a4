"""Bounded FIFO buffer of unlabeled-image ids feeding the balanced mixing stream."""

from __future__ import annotations

from collections import deque

import numpy as np

from .errors import EmptyBufferError, InvalidArgumentError


class ReplayBuffer:
    """Holds at most `capacity` image ids; oldest entry is evicted first.

    Stores ids only: pseudo labels are recomputed with the current teacher at
    sampling time, so buffered content never goes stale. Callers must only
    push ids whose image still has unlabeled pixels (status != LABELED).
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InvalidArgumentError(f"replay capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.items: deque[str] = deque()
        self.insertions = 0

    def __len__(self) -> int:
        return len(self.items)

    def push(self, image_id: str) -> "ReplayBuffer":
        self.items.append(image_id)
        self.insertions += 1
        if len(self.items) > self.capacity:
            self.items.popleft()
        return self

    def sample(self, n: int, rng: np.random.Generator) -> list[str]:
        """n uniform draws with replacement; never mutates the buffer."""
        if not self.items:
            raise EmptyBufferError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, len(self.items), size=n)
        items = list(self.items)
        return [items[int(i)] for i in idx]

    def state(self) -> dict:
        return {"capacity": self.capacity, "items": list(self.items),
                "insertions": self.insertions}

    @classmethod
    def from_state(cls, state: dict) -> "ReplayBuffer":
        buf = cls(state["capacity"])
        buf.items.extend(state["items"])
        buf.insertions = int(state["insertions"])
        return buf

"""Reservoir-sampled episodic memory."""
from __future__ import annotations

from typing import Any, Generic, TypeVar

import numpy as np

T = TypeVar("T")


class ReplayBuffer(Generic[T]):
    """Fixed-capacity uniform sample of everything ever pushed.

    After ``N`` pushes each pushed item is held with probability
    ``min(1, capacity / N)``.
    """

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.seen_count = 0
        self.slots: list[T] = []

    def __len__(self) -> int:
        return len(self.slots)

    def __iter__(self):
        return iter(self.slots)

    def __repr__(self) -> str:
        return f"ReplayBuffer(capacity={self.capacity}, seen={self.seen_count}, stored={len(self.slots)})"

    def push(self, item: T, rng: np.random.Generator) -> None:
        if self.seen_count < self.capacity:
            self.slots.append(item)
        else:
            j = int(rng.integers(0, self.seen_count + 1))
            if j < self.capacity:
                self.slots[j] = item
        self.seen_count += 1

    def sample(self, n: int, rng: np.random.Generator) -> list[T]:
        """Up to ``n`` distinct stored items, drawn uniformly without replacement."""
        if n < 0:
            raise ValueError(f"sample size must be non-negative, got {n}")
        m = min(n, len(self.slots))
        if m == 0:
            return []
        idx = rng.choice(len(self.slots), size=m, replace=False)
        return [self.slots[i] for i in idx]


def reservoir_push(buf: ReplayBuffer, item: Any, rng: np.random.Generator) -> ReplayBuffer:
    buf.push(item, rng)
    return buf


def sample(buf: ReplayBuffer, n: int, rng: np.random.Generator) -> list:
    return buf.sample(n, rng)


def simulate_reservoir(capacity: int, n_items: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Slot contents after pushing items ``0..n_items-1`` in ``trials`` independent runs at once.

    Same replacement rule as :meth:`ReplayBuffer.push`, vectorised across
    trials; with ``trials=1`` it consumes the generator exactly like a single
    buffer.  Returns an int array of shape ``(trials, min(capacity, n_items))``.
    """
    if capacity <= 0 or trials <= 0 or n_items < 0:
        raise ValueError("capacity and trials must be positive and n_items non-negative")
    m = min(capacity, n_items)
    slots = np.tile(np.arange(m, dtype=np.int64), (trials, 1))
    rows = np.arange(trials)
    for i in range(capacity, n_items):
        j = rng.integers(0, i + 1, size=trials)
        hit = j < capacity
        slots[rows[hit], j[hit]] = i
    return slots

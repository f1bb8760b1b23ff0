"""Bounded FIFO transition memory with uniform batch sampling.

Transitions store compact (case_id, gaze_index) descriptors; pixel states are
re-rendered on demand since rendering is pure and cheap.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .env import Action
from .errors import SamplingError

StateRef = "tuple[str, int]"  # (case_id, gaze_index)


@dataclass(frozen=True)
class Transition:
    state: tuple
    action: Action
    reward: float
    next_state: tuple


class ReplayMemory:
    """Ring buffer of at most ``capacity`` transitions, evicting oldest-first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._head = 0        # slot that holds the oldest item once full
        self.inserted = 0     # lifetime insertion counter

    def __len__(self) -> int:
        return len(self._items)

    def push(self, t: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(t)
        else:
            self._items[self._head] = t
            self._head = (self._head + 1) % self.capacity
        self.inserted += 1

    def contents(self) -> list:
        """Stored transitions, oldest first."""
        return self._items[self._head:] + self._items[:self._head]

    def sample_batch(self, n: int, rng: np.random.Generator) -> list:
        """n uniform draws; without replacement when enough are stored."""
        size = len(self._items)
        if size == 0:
            raise SamplingError("cannot sample from an empty replay memory")
        replace = size < n
        idx = rng.choice(size, size=n, replace=replace)
        return [self._items[i] for i in idx]

    def dump_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["case_id", "gaze_index", "action", "reward",
                             "next_case_id", "next_gaze_index"])
            for t in self.contents():
                writer.writerow([t.state[0], t.state[1], Action(t.action).name,
                                 repr(float(t.reward)), t.next_state[0], t.next_state[1]])

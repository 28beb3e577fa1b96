"""Transition records and the paired global / per-block replay buffers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, DataError, ShapeError

ORIGINS = ("environment", "augmented")


@dataclass
class TransitionRecord:
    """One replayable step: (s, a, r, s', done) plus bookkeeping.

    `action` holds one index per block; a projected step keeps the full
    joint tuple (the untouched blocks sit at their no-op index) and
    names the forced block in `block_tag`.  `done` marks true terminal
    entry, not episode timeouts, so targets bootstrap through time
    limits.
    """

    state: np.ndarray
    action: tuple[int, ...]
    reward: float
    next_state: np.ndarray
    done: bool = False
    origin: str = "environment"
    block_tag: int | None = None

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=np.float64)
        self.next_state = np.asarray(self.next_state, dtype=np.float64)
        self.action = tuple(int(a) for a in self.action)
        self.reward = float(self.reward)
        if self.origin not in ORIGINS:
            raise DataError(f"unknown origin {self.origin!r}")
        if self.block_tag is not None and self.block_tag >= len(self.action):
            raise DataError(
                f"block_tag {self.block_tag} outside the {len(self.action)}-block action"
            )


def batch_arrays(records):
    """Stack a list of records into (states, actions, rewards, next_states, dones)."""
    if not records:
        raise DataError("empty batch")
    states = np.stack([r.state for r in records])
    actions = np.array([r.action for r in records], dtype=np.int64)
    rewards = np.array([r.reward for r in records])
    next_states = np.stack([r.next_state for r in records])
    dones = np.array([r.done for r in records], dtype=np.float64)
    return states, actions, rewards, next_states, dones


class RingBuffer:
    """Fixed-capacity FIFO over transition records with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigurationError(f"capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self._data: list[TransitionRecord] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._data)

    def append(self, record: TransitionRecord) -> None:
        if len(self._data) < self.capacity:
            self._data.append(record)
        else:
            self._data[self._next] = record
        self._next = (self._next + 1) % self.capacity

    def sample(self, rng: np.random.Generator, n: int) -> list[TransitionRecord]:
        """Uniform sample with replacement."""
        if not self._data:
            raise DataError("cannot sample from an empty buffer")
        idx = rng.integers(0, len(self._data), size=n)
        return [self._data[i] for i in idx]

    def recent(self, n: int) -> list[TransitionRecord]:
        """The latest `n` records in insertion order (all, if fewer)."""
        if len(self._data) < self.capacity:
            return self._data[-n:] if n < len(self._data) else list(self._data)
        # ring is full: walk backwards from the write cursor
        n = min(n, self.capacity)
        return [self._data[(self._next - i) % self.capacity] for i in range(n, 0, -1)]

    def sample_recent(self, rng: np.random.Generator, n: int, window: int):
        pool = self.recent(window)
        idx = rng.integers(0, len(pool), size=n)
        return [pool[i] for i in idx]


@dataclass
class ReplayBuffers:
    """A global buffer D plus one per-block buffer D_k.

    Every record lands in D; a block-tagged record is additionally
    stored in the matching D_k, so |D_k| <= |D| and each tagged record
    lives in exactly one block buffer.
    """

    n_blocks: int
    capacity: int = 100_000
    block_capacity: int | None = None
    global_buffer: RingBuffer = field(init=False)
    block_buffers: list[RingBuffer] = field(init=False)

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ConfigurationError("need at least one block")
        cap_k = self.block_capacity or self.capacity
        self.global_buffer = RingBuffer(self.capacity)
        self.block_buffers = [RingBuffer(cap_k) for _ in range(self.n_blocks)]

    def add(self, record: TransitionRecord) -> None:
        if record.block_tag is not None and not 0 <= record.block_tag < self.n_blocks:
            raise ShapeError(
                f"block_tag {record.block_tag} outside 0..{self.n_blocks - 1}"
            )
        self.global_buffer.append(record)
        if record.block_tag is not None:
            self.block_buffers[record.block_tag].append(record)

    def __len__(self) -> int:
        return len(self.global_buffer)

"""Episodic memory of raw samples plus their trunk representations at store time."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, StateError
from .nn import Network, forward

log = logging.getLogger(__name__)


@dataclass
class TaskMemory:
    """Stored samples of one task. ``representations`` are frozen anchors."""

    task_id: int
    inputs: np.ndarray  # (q, input_dim)
    labels: np.ndarray  # (q,)
    representations: np.ndarray  # (q, feature_dim)

    def __post_init__(self):
        self.inputs.setflags(write=False)
        self.labels.setflags(write=False)
        self.representations.setflags(write=False)

    def __len__(self):
        return self.labels.shape[0]


@dataclass
class MemoryStore:
    per_task_quota: int
    tasks: dict[int, TaskMemory] = field(default_factory=dict)

    def __len__(self):
        return sum(len(m) for m in self.tasks.values())

    @property
    def task_ids(self) -> list[int]:
        return sorted(self.tasks)

    def union(self):
        """All entries concatenated in task order: (inputs, labels, task_ids, representations)."""
        if not self.tasks:
            raise StateError("memory is empty")
        mems = [self.tasks[k] for k in self.task_ids]
        return (
            np.concatenate([m.inputs for m in mems]),
            np.concatenate([m.labels for m in mems]),
            np.concatenate([np.full(len(m), m.task_id, dtype=np.int64) for m in mems]),
            np.concatenate([m.representations for m in mems]),
        )


def store_mem(store: MemoryStore, task_id: int, dataset, net: Network, quota: int | None = None,
              seed: int = 0) -> TaskMemory:
    """Sample ``quota`` training examples without replacement and remember them.

    Each entry keeps the trunk output computed now, which later serves as the
    distillation target for that sample.
    """
    quota = store.per_task_quota if quota is None else quota
    if quota < 1:
        raise ConfigError(f"memory quota must be >= 1, got {quota}")
    if task_id in store.tasks:
        raise StateError(f"task {task_id} already stored")
    n = len(dataset)
    if quota > n:
        log.warning("quota %d exceeds dataset size %d; storing the whole dataset", quota, n)
        quota = n
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=quota, replace=False))
    inputs = dataset.inputs[idx].copy()
    reps = forward(net, inputs, cache=False)
    mem = TaskMemory(task_id, inputs, dataset.labels[idx].copy(), reps)
    store.tasks[task_id] = mem
    return mem


def sample_ref_batch(store: MemoryStore, batch_size: int, rng: np.random.Generator):
    """Uniform draw with replacement over the union of all stored entries."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    inputs, labels, task_ids, reps = store.union()
    idx = rng.integers(0, labels.shape[0], size=batch_size)
    return inputs[idx], labels[idx], task_ids[idx], reps[idx]


def check_consistent(store: MemoryStore, input_dim: int, feature_dim: int) -> None:
    for m in store.tasks.values():
        if m.inputs.shape[1] != input_dim or m.representations.shape[1] != feature_dim:
            raise ShapeError(f"memory for task {m.task_id} does not match the network")

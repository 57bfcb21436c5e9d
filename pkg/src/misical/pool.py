"""Dataset partitions, budget accounting, rewards, and histogram tracking.

A pool starts with every patch unlabelled, moves an initial random
subset into the labelled partition, and then only grows the labelled
side one patch at a time until the annotation budget is hit. Ground
truth is carried as per-class pixel counts so the categorical reward
and the labelled-pixel histogram both derive from one field.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, ValidationError
from .features import shannon_entropy
from .poolio import PoolArrays, PatchRecord


def initial_size(n_records: int, initial_fraction: float) -> int:
    return int(np.floor(initial_fraction * n_records))


def budget_size(n_records: int, total_fraction: float) -> int:
    return int(np.floor(total_fraction * n_records))


def reward_categorical(patch: PatchRecord | np.ndarray, target: int) -> float:
    """1.0 iff the patch contains at least one ground-truth pixel of `target`."""
    counts = patch.gt_pixel_counts if isinstance(patch, PatchRecord) else np.asarray(patch)
    if not 0 <= target < len(counts):
        raise ValidationError(f"target class {target} out of range for {len(counts)} classes")
    return 1.0 if counts[target] >= 1 else 0.0


def histogram_entropy(h: np.ndarray) -> float:
    """Shannon entropy (nats) of the normalized pixel-count histogram."""
    h = np.asarray(h, dtype=np.float64)
    total = h.sum()
    if total <= 0:
        raise ValidationError("histogram entropy needs at least one labelled pixel")
    return shannon_entropy(h / total)


class Pool:
    """Partitioned patch pool with single-writer labelling.

    Mutation happens only through `label_patch` / `label_many`; reads
    (candidate sampling, histogram snapshots) are safe to share between
    those calls.
    """

    def __init__(self, data: PoolArrays, initial_indices: np.ndarray, budget_total: int):
        self.data = data
        self.n_records = len(data.ids)
        self.budget_total = budget_total
        self.labelled = np.zeros(self.n_records, dtype=bool)
        self.labelled[initial_indices] = True
        self.initial_indices = np.sort(initial_indices)
        self.labelled_count = int(self.labelled.sum())
        self.histogram = data.gt_counts[initial_indices].sum(axis=0, dtype=np.uint64) \
            if len(initial_indices) else np.zeros(data.n_classes, dtype=np.uint64)
        self._index_of = {int(pid): i for i, pid in enumerate(data.ids)}

    # -- views ---------------------------------------------------------

    @property
    def n_classes(self) -> int:
        return self.data.n_classes

    @property
    def remaining_budget(self) -> int:
        return self.budget_total - self.labelled_count

    @property
    def budget_exhausted(self) -> bool:
        return self.labelled_count >= self.budget_total

    def unlabelled_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.labelled)

    def index_of(self, patch_id: int) -> int:
        try:
            return self._index_of[int(patch_id)]
        except KeyError:
            raise ValidationError(f"unknown patch id {patch_id}") from None

    def features_for(self, indices: np.ndarray) -> np.ndarray:
        """(len(indices), 3 + C) float64 action features."""
        bald = self.data.bald[indices].astype(np.float64)
        bits = self.data.presence[indices].astype(np.float64)
        return np.hstack([bald, bits])

    def rewards_for(self, indices: np.ndarray, target: int) -> np.ndarray:
        if not 0 <= target < self.n_classes:
            raise ValidationError(f"target class {target} out of range for {self.n_classes} classes")
        return (self.data.gt_counts[indices, target] >= 1).astype(np.float64)

    def labelled_entropy(self) -> float:
        return histogram_entropy(self.histogram)

    # -- mutation ------------------------------------------------------

    def label_index(self, index: int) -> np.ndarray:
        """Move one patch (by array index) into the labelled partition.

        Relabelling is a hard failure: a patch can only be labelled once.
        Returns the updated histogram.
        """
        if self.labelled[index]:
            raise ValidationError(f"patch id {int(self.data.ids[index])} is already labelled")
        if self.budget_exhausted:
            raise ValidationError("annotation budget exhausted")
        self.labelled[index] = True
        self.labelled_count += 1
        self.histogram += self.data.gt_counts[index].astype(np.uint64)
        return self.histogram

    def label_patch(self, patch_id: int) -> np.ndarray:
        return self.label_index(self.index_of(patch_id))

    def label_many(self, indices: np.ndarray) -> np.ndarray:
        for i in indices:
            self.label_index(int(i))
        return self.histogram

    # -- sampling ------------------------------------------------------

    def sample_candidates(self, m: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform sample without replacement of up to `m` unlabelled indices.

        An empty result signals loop termination, not an error.
        """
        if m < 1:
            raise ValidationError("candidate count must be >= 1")
        free = self.unlabelled_indices()
        if len(free) <= m:
            return free
        return free[rng.choice(len(free), size=m, replace=False)]


def init_pool(
    data: PoolArrays,
    total_fraction: float,
    initial_fraction: float | None = None,
    initial_count: int | None = None,
    rng: np.random.Generator | None = None,
    seed: int | None = None,
) -> Pool:
    """Partition a pool: seeded uniform initial subset, budget in patch counts.

    Exactly one of `initial_fraction` / `initial_count` must be given.
    The initial subset may equal the whole budget, in which case the
    selection loop is a no-op.
    """
    n = len(data.ids)
    if n == 0:
        raise ConfigError("pool has no records")
    if not 0.0 < total_fraction <= 1.0:
        raise ConfigError(f"total_fraction must be in (0, 1], got {total_fraction}")
    if (initial_fraction is None) == (initial_count is None):
        raise ConfigError("give exactly one of initial_fraction / initial_count")
    if initial_fraction is not None:
        if not 0.0 < initial_fraction <= 1.0:
            raise ConfigError(f"initial_fraction must be in (0, 1], got {initial_fraction}")
        n_init = initial_size(n, initial_fraction)
    else:
        n_init = int(initial_count)
    budget = budget_size(n, total_fraction)
    if not 0 <= n_init <= budget:
        raise ConfigError(f"initial size {n_init} exceeds total budget {budget}")
    if rng is None:
        rng = np.random.default_rng(seed)
    initial = rng.choice(n, size=n_init, replace=False) if n_init else np.zeros(0, dtype=np.intp)
    return Pool(data, initial, budget)

"""Prioritized experience replay with a sum tree and an n-step accumulator.

Sampling draws experience i with probability p_i^eta / sum_k p_k^eta via
stratified descent of the tree (one draw per equal-mass segment), and
corrects the induced bias with importance weights (1 / (N * P(i)))^zeta,
normalized by the batch maximum so every returned weight is in (0, 1].
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ValidationError

PRIORITY_FLOOR = 1e-3


@dataclass
class Experience:
    """One stored transition: anchored action features plus its n-step reward.

    `next_candidates` is the feature matrix of the selection event that
    followed the anchor; None means terminal/flush, which bootstraps 0.
    """

    action_features: np.ndarray
    reward_n: float
    next_candidates: np.ndarray | None = None
    insertion_index: int = -1


class SumTree:
    """Flat binary tree over leaf masses; internal nodes cache subtree sums.

    Leaves hold priorities already raised to eta. The leaf count is the
    next power of two at or above the requested capacity; spare leaves
    stay at mass zero and are never sampled.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("sum tree capacity must be >= 1")
        self.n_leaves = 1 << max(1, (capacity - 1).bit_length()) if capacity > 1 else 1
        self.nodes = np.zeros(2 * self.n_leaves, dtype=np.float64)
        self._dirty = False

    def set_leaves(self, idx, values) -> None:
        self.nodes[self.n_leaves + np.asarray(idx)] = values
        self._dirty = True

    def leaf_values(self) -> np.ndarray:
        return self.nodes[self.n_leaves:]

    def _refresh(self) -> None:
        if not self._dirty:
            return
        nodes = self.nodes
        hi = self.n_leaves
        while hi > 1:
            lo = hi // 2
            nodes[lo:hi] = nodes[2 * lo:2 * hi:2] + nodes[2 * lo + 1:2 * hi:2]
            hi = lo
        self._dirty = False

    @property
    def total(self) -> float:
        self._refresh()
        return float(self.nodes[1])

    def find(self, targets) -> np.ndarray:
        """Vectorized prefix-sum descent; returns leaf indices for each target."""
        self._refresh()
        t = np.array(targets, dtype=np.float64)
        if t.size == 0:
            return np.zeros(0, dtype=np.int64)
        idx = np.ones(t.size, dtype=np.int64)
        while idx[0] < self.n_leaves:  # all indices sit on the same level
            left = idx * 2
            left_sum = self.nodes[left]
            go_left = t < left_sum
            idx = np.where(go_left, left, left + 1)
            t = np.where(go_left, t, t - left_sum)
        return idx - self.n_leaves

    def verify(self, rtol: float = 1e-9) -> bool:
        """Check every internal node against the sum of its children."""
        self._refresh()
        nodes = self.nodes
        for i in range(1, self.n_leaves):
            s = nodes[2 * i] + nodes[2 * i + 1]
            if abs(nodes[i] - s) > rtol * max(abs(s), 1.0):
                return False
        return True


class PrioritizedReplayBuffer:
    """Ring buffer with proportional prioritization (|TD error| + floor)."""

    def __init__(self, capacity: int, p_min: float = PRIORITY_FLOOR):
        if capacity < 1:
            raise ConfigError("buffer capacity must be >= 1")
        if p_min <= 0:
            raise ConfigError("priority floor must be > 0")
        self.capacity = capacity
        self.p_min = p_min
        self.data: list[Experience | None] = [None] * capacity
        self.priorities = np.zeros(capacity, dtype=np.float64)
        self.tree = SumTree(capacity)
        self.size = 0
        self.head = 0
        self._eta = 1.0
        self._push_count = 0

    def __len__(self) -> int:
        return self.size

    def _set_eta(self, eta: float) -> None:
        if eta == self._eta:
            return
        self._eta = eta
        if self.size:
            idx = np.arange(self.size)
            self.tree.set_leaves(idx, self.priorities[idx] ** eta)

    def push(self, experience: Experience) -> None:
        """Store with the current maximum priority (floored at p_min).

        New experiences therefore get sampled at least once with high
        probability. When full, the oldest entry is overwritten.
        """
        p = max(float(self.priorities[: self.size].max()) if self.size else 0.0, self.p_min)
        slot = self.head
        experience.insertion_index = self._push_count
        self.data[slot] = experience
        self.priorities[slot] = p
        self.tree.set_leaves(slot, p ** self._eta)
        self.head = (self.head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self._push_count += 1

    def sample(self, batch: int, eta: float, zeta: float, rng: np.random.Generator):
        """Stratified prioritized draw.

        Returns (experiences, is_weights, leaf_ids); weights are
        max-normalized so at least one equals 1.
        """
        if self.size == 0:
            raise ValidationError("cannot sample from an empty buffer")
        if batch < 1:
            raise ValidationError("batch size must be >= 1")
        if eta < 0:
            raise ConfigError(f"priority exponent must be >= 0, got {eta}")
        if not 0.0 <= zeta <= 1.0:
            raise ConfigError(f"importance exponent must be in [0, 1], got {zeta}")
        self._set_eta(eta)
        total = self.tree.total
        segment = total / batch
        targets = (np.arange(batch) + rng.random(batch)) * segment
        leaf_ids = self.tree.find(targets)
        masses = self.tree.leaf_values()[leaf_ids]
        # w_i = (1 / (N * P(i)))^zeta computed as (total / (N * mass))^zeta,
        # which is exactly 1.0 for uniform masses.
        raw = (total / (self.size * masses)) ** zeta
        weights = raw / raw.max()
        experiences = [self.data[i] for i in leaf_ids]
        return experiences, weights, leaf_ids

    def update_priorities(self, leaf_ids, td_errors) -> None:
        """Set priority to |TD error| + p_min and refresh ancestor sums."""
        leaf_ids = np.asarray(leaf_ids)
        if np.any((leaf_ids < 0) | (leaf_ids >= self.size)):
            raise ValidationError("priority update for an unoccupied leaf")
        p = np.abs(np.asarray(td_errors, dtype=np.float64)) + self.p_min
        self.priorities[leaf_ids] = p
        self.tree.set_leaves(leaf_ids, p ** self._eta)


class NStepAccumulator:
    """Sliding window turning per-step rewards into n-step returns.

    Once n rewards are buffered it emits an Experience anchored at the
    oldest entry's features with reward sum_{i<n} gamma^i * R_{t+i};
    `flush` drains the tail with shortened sums at episode end.
    """

    def __init__(self, n: int, gamma: float):
        if n < 1:
            raise ConfigError("n-step window must be >= 1")
        if not 0.0 <= gamma <= 1.0:
            raise ConfigError(f"discount must be in [0, 1], got {gamma}")
        self.n = n
        self.gamma = gamma
        self.window: deque[tuple[float, np.ndarray]] = deque()

    def _emit(self) -> Experience:
        rewards = np.fromiter((r for r, _ in self.window), dtype=np.float64,
                              count=len(self.window))
        discounts = self.gamma ** np.arange(len(rewards))
        reward_n = float(np.dot(discounts, rewards))
        _, features = self.window.popleft()
        return Experience(action_features=features, reward_n=reward_n)

    def add(self, reward: float, features: np.ndarray) -> Experience | None:
        self.window.append((float(reward), features))
        if len(self.window) < self.n:
            return None
        return self._emit()

    def flush(self) -> list[Experience]:
        out = []
        while self.window:
            out.append(self._emit())
        return out


@dataclass(frozen=True)
class ZetaSchedule:
    """Linear anneal of the importance-weight exponent toward 1."""

    start: float
    total_steps: int

    def __post_init__(self):
        if not 0.0 <= self.start <= 1.0:
            raise ConfigError(f"zeta start must be in [0, 1], got {self.start}")
        if self.total_steps < 0:
            raise ConfigError("zeta schedule length must be >= 0")


def anneal_zeta(step: int, schedule: ZetaSchedule) -> float:
    """Interpolate from the start value to 1 over total_steps, then hold."""
    if schedule.total_steps == 0:
        return 1.0
    frac = min(step / schedule.total_steps, 1.0)
    return schedule.start + (1.0 - schedule.start) * frac

"""Reference acquisition policies sharing one selection-event harness.

Every ranker returns exactly min(k, len(candidates)) distinct ids and
is deterministic given its inputs (and seed, where one applies). Score
ties always break toward the lower patch id.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError

POLICY_NAMES = ("random", "entropy", "bald", "coreset", "misical")


def _top_k_by_score(ids: np.ndarray, scores: np.ndarray, k: int) -> np.ndarray:
    order = np.lexsort((ids, -scores))
    return ids[order[:k]]


def rank_random(ids: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform k-subset without replacement."""
    ids = np.asarray(ids)
    k = min(k, len(ids))
    return ids[rng.choice(len(ids), size=k, replace=False)]


def rank_bald(ids: np.ndarray, features: np.ndarray, k: int) -> np.ndarray:
    """Top-k by the mean-pooled BALD feature (column 2 of the action features)."""
    return _top_k_by_score(np.asarray(ids), np.asarray(features)[:, 2], min(k, len(ids)))


def rank_entropy(ids: np.ndarray, entropy: np.ndarray | None, k: int) -> np.ndarray:
    """Top-k by the stored mean predictive entropy column."""
    if entropy is None:
        raise ConfigError(
            "the pool carries no entropy column (header flag bit 0); "
            "regenerate it with entropy enabled to use the entropy policy")
    return _top_k_by_score(np.asarray(ids), np.asarray(entropy, dtype=np.float64),
                           min(k, len(ids)))


def coreset_greedy(ids: np.ndarray, features: np.ndarray,
                   labelled_features: np.ndarray, k: int) -> np.ndarray:
    """Farthest-first selection against the labelled set plus prior picks.

    Each step takes the candidate whose Euclidean distance to the
    nearest already-chosen-or-labelled feature vector is largest. With
    nothing labelled yet the first pick falls to the lowest id.
    """
    ids = np.asarray(ids)
    x = np.asarray(features, dtype=np.float64)
    k = min(k, len(ids))
    if k == 0:
        return ids[:0]
    lab = np.asarray(labelled_features, dtype=np.float64)
    if lab.size:
        # squared distances via |a|^2 + |b|^2 - 2ab, min over the labelled set
        d2 = (np.square(x).sum(1)[:, None] + np.square(lab).sum(1)[None, :]
              - 2.0 * x @ lab.T).min(axis=1)
        d2 = np.maximum(d2, 0.0)
    else:
        d2 = np.full(len(ids), np.inf)
    chosen = np.empty(k, dtype=ids.dtype)
    taken = np.zeros(len(ids), dtype=bool)
    for step in range(k):
        masked = np.where(taken, -np.inf, d2)
        order = np.lexsort((ids, -masked))
        pick = order[0]
        chosen[step] = ids[pick]
        taken[pick] = True
        gap = np.square(x - x[pick]).sum(axis=1)
        d2 = np.minimum(d2, gap)
    return chosen


def coreset_cover_radius(points: np.ndarray, centers: np.ndarray) -> float:
    """Max distance from any point to its nearest center."""
    p = np.asarray(points, dtype=np.float64)
    c = np.asarray(centers, dtype=np.float64)
    d2 = (np.square(p).sum(1)[:, None] + np.square(c).sum(1)[None, :] - 2.0 * p @ c.T)
    return float(np.sqrt(np.maximum(d2, 0.0).min(axis=1).max()))


class BasePolicy:
    """Selection policy plugged into the shared event loop.

    The harness calls `select` once per event; policies that learn get
    `after_label` with the realized rewards. Budget accounting, logging
    and termination live in the harness, never here.
    """

    name = "base"
    trains = False

    def select(self, pool, cand_idx: np.ndarray, k: int, event: int,
               rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def after_label(self, pool, selected_idx, rewards, event, rng) -> float | None:
        return None

    def epsilon_at(self, event: int) -> float | None:
        return None

    def end_run(self) -> None:
        pass


class RandomPolicy(BasePolicy):
    name = "random"

    def select(self, pool, cand_idx, k, event, rng):
        picked = rank_random(pool.data.ids[cand_idx], k, rng)
        return np.array([pool.index_of(i) for i in picked])


class BaldPolicy(BasePolicy):
    name = "bald"

    def select(self, pool, cand_idx, k, event, rng):
        picked = rank_bald(pool.data.ids[cand_idx], pool.features_for(cand_idx), k)
        return np.array([pool.index_of(i) for i in picked])


class EntropyPolicy(BasePolicy):
    name = "entropy"

    def select(self, pool, cand_idx, k, event, rng):
        col = pool.data.entropy[cand_idx] if pool.data.entropy is not None else None
        picked = rank_entropy(pool.data.ids[cand_idx], col, k)
        return np.array([pool.index_of(i) for i in picked])


class CoresetPolicy(BasePolicy):
    name = "coreset"

    def select(self, pool, cand_idx, k, event, rng):
        labelled_idx = np.flatnonzero(pool.labelled)
        picked = coreset_greedy(pool.data.ids[cand_idx], pool.features_for(cand_idx),
                                pool.features_for(labelled_idx), k)
        return np.array([pool.index_of(i) for i in picked])


def make_policy(kind: str, agent=None) -> BasePolicy:
    kind = kind.lower()
    if kind == "random":
        return RandomPolicy()
    if kind == "bald":
        return BaldPolicy()
    if kind == "entropy":
        return EntropyPolicy()
    if kind == "coreset":
        return CoresetPolicy()
    if kind == "misical":
        if agent is None:
            raise ConfigError("the misical policy needs a DQN agent")
        from .agent import MisicalPolicy
        return MisicalPolicy(agent)
    raise ConfigError(f"unknown policy {kind!r}; expected one of {', '.join(POLICY_NAMES)}")

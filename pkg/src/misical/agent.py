"""The acquisition agent: epsilon-greedy top-k selection over candidate
subsets, a DDQN with prioritized multistep replay behind it, and the
pretraining procedure that replays the initial labelled set for a few
epochs before the agent is let loose on the unlabelled pool.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baselines import BasePolicy
from .errors import ConfigError, ValidationError
from .pool import Pool
from .qnet import QNetwork, RMSProp, soft_update, train_batch
from .replay import (
    Experience,
    NStepAccumulator,
    PrioritizedReplayBuffer,
    ZetaSchedule,
    anneal_zeta,
)


@dataclass(frozen=True)
class EpsilonSchedule:
    """Constant or linear exploration-rate schedule."""

    kind: str                 # "constant" | "linear"
    value: float = 0.05
    start: float = 1.0
    end: float = 0.1
    steps: int = 1

    def __post_init__(self):
        if self.kind not in ("constant", "linear"):
            raise ConfigError(f"unknown epsilon schedule kind {self.kind!r}")
        for name, eps in (("value", self.value), ("start", self.start), ("end", self.end)):
            if not 0.0 <= eps <= 1.0:
                raise ConfigError(f"epsilon {name} must be in [0, 1], got {eps}")
        if self.kind == "linear" and self.steps < 1:
            raise ConfigError("linear epsilon schedule needs steps >= 1")

    @classmethod
    def constant(cls, value: float) -> "EpsilonSchedule":
        return cls(kind="constant", value=value)

    @classmethod
    def linear(cls, start: float, end: float, steps: int) -> "EpsilonSchedule":
        return cls(kind="linear", start=start, end=end, steps=steps)


def epsilon_at(schedule: EpsilonSchedule, step: int) -> float:
    if step < 0:
        raise ValidationError("schedule step must be >= 0")
    if schedule.kind == "constant":
        return schedule.value
    frac = min(step / schedule.steps, 1.0)
    return schedule.start + (schedule.end - schedule.start) * frac


def epsilon_greedy_pick(ids: np.ndarray, q_values: np.ndarray, k: int,
                        epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Fill k slots, each independently random with probability epsilon.

    Greedy slots take the highest remaining Q-value (ties toward the
    lower id); random slots draw uniformly from whatever is left.
    Returns positions into the candidate arrays.
    """
    m = len(ids)
    if k > m:
        raise ValidationError(f"cannot pick {k} of {m} candidates")
    order = np.lexsort((ids, -np.asarray(q_values, dtype=np.float64)))
    taken = np.zeros(m, dtype=bool)
    avail = list(range(m))          # swap-pop pool for the random slots
    ptr = 0
    out = np.empty(k, dtype=np.intp)
    for slot in range(k):
        if epsilon > 0.0 and rng.random() < epsilon:
            j = int(rng.integers(len(avail)))
            pos = avail[j]
            avail[j] = avail[-1]
            avail.pop()
            while taken[pos]:       # stale entry already taken greedily
                j = int(rng.integers(len(avail)))
                pos = avail[j]
                avail[j] = avail[-1]
                avail.pop()
        else:
            while taken[order[ptr]]:
                ptr += 1
            pos = order[ptr]
        taken[pos] = True
        out[slot] = pos
    return out


def select_topk(net: QNetwork, features: np.ndarray, ids: np.ndarray, k: int,
                epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Score candidates with the local network and pick k epsilon-greedily.

    Returns the chosen ids; an empty candidate list yields an empty
    result (the loop-termination signal).
    """
    ids = np.asarray(ids)
    if len(ids) == 0:
        return ids[:0]
    q = net.forward(np.asarray(features, dtype=np.float64))
    positions = epsilon_greedy_pick(ids, np.atleast_1d(q), k, epsilon, rng)
    return ids[positions]


@dataclass
class DqnHyperparams:
    hidden: tuple = (128, 64)
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    rms_decay: float = 0.99
    rms_epsilon: float = 1e-8
    grad_clip: float = 0.01
    beta: float = 0.002
    gamma: float = 0.0
    buffer_capacity: int = 100_000
    batch_size: int = 256
    n_step: int = 3
    eta: float = 0.6
    zeta_start: float = 0.4
    priority_floor: float = 1e-3
    batches_per_event: int = 1


class DqnAgent:
    """Local/target Q-networks plus replay machinery for one run."""

    def __init__(self, input_dim: int, hp: DqnHyperparams, rng: np.random.Generator):
        self.hp = hp
        self.local = QNetwork([input_dim, *hp.hidden, 1], rng)
        self.target = self.local.copy()
        self.opt = RMSProp(learning_rate=hp.learning_rate, decay=hp.rms_decay,
                           epsilon=hp.rms_epsilon, weight_decay=hp.weight_decay)
        self.buffer = PrioritizedReplayBuffer(hp.buffer_capacity, p_min=hp.priority_floor)
        self.accumulator = NStepAccumulator(hp.n_step, hp.gamma)
        self.pending: list[Experience] = []

    def score(self, features: np.ndarray) -> np.ndarray:
        return np.atleast_1d(self.local.forward(features))

    def begin_event(self, candidate_features: np.ndarray | None) -> None:
        """Push experiences that were waiting for this event's candidates."""
        nxt = None
        if self.hp.gamma > 0.0 and candidate_features is not None:
            nxt = np.asarray(candidate_features, dtype=np.float64)
        for e in self.pending:
            e.next_candidates = nxt
            self.buffer.push(e)
        self.pending.clear()

    def observe(self, selected_features: np.ndarray, rewards: np.ndarray) -> None:
        """Feed the selections of one event through the n-step window."""
        for f, r in zip(selected_features, rewards):
            emitted = self.accumulator.add(float(r), np.asarray(f, dtype=np.float64))
            if emitted is not None:
                self.pending.append(emitted)
        if self.hp.gamma == 0.0:
            # no bootstrap: experiences are complete the moment they emit
            self.begin_event(None)

    def flush_episode(self) -> None:
        """Episode end: drain shortened windows, terminal steps bootstrap 0."""
        self.pending.extend(self.accumulator.flush())
        for e in self.pending:
            e.next_candidates = None
            self.buffer.push(e)
        self.pending.clear()

    def train_event(self, zeta: float, rng: np.random.Generator) -> float | None:
        """One training phase: PER batch, DDQN step, soft update, priorities."""
        if len(self.buffer) == 0:
            return None
        hp = self.hp
        losses = []
        for _ in range(hp.batches_per_event):
            batch, weights, leaf_ids = self.buffer.sample(hp.batch_size, hp.eta, zeta, rng)
            loss, td_abs = train_batch(self.local, self.target, self.opt, batch,
                                       hp.gamma, weights, hp.grad_clip)
            soft_update(self.target, self.local, hp.beta)
            self.buffer.update_priorities(leaf_ids, td_abs)
            losses.append(loss)
        return float(np.mean(losses))


class MisicalPolicy(BasePolicy):
    """Adapter wiring the DQN agent into the shared selection harness."""

    name = "misical"
    trains = True

    def __init__(self, agent: DqnAgent, epsilon: EpsilonSchedule | None = None,
                 zeta: ZetaSchedule | None = None):
        self.agent = agent
        self.epsilon = epsilon or EpsilonSchedule.constant(0.05)
        self.zeta = zeta or ZetaSchedule(start=0.4, total_steps=1)

    def epsilon_at(self, event: int) -> float:
        return epsilon_at(self.epsilon, event)

    def select(self, pool: Pool, cand_idx: np.ndarray, k: int, event: int,
               rng: np.random.Generator) -> np.ndarray:
        feats = pool.features_for(cand_idx)
        self.agent.begin_event(feats)
        eps = self.epsilon_at(event)
        q = self.agent.score(feats)
        positions = epsilon_greedy_pick(pool.data.ids[cand_idx], q, k, eps, rng)
        return cand_idx[positions]

    def after_label(self, pool: Pool, selected_idx: np.ndarray, rewards: np.ndarray,
                    event: int, rng: np.random.Generator) -> float | None:
        self.agent.observe(pool.features_for(selected_idx), rewards)
        return self.agent.train_event(anneal_zeta(event, self.zeta), rng)

    def end_run(self) -> None:
        self.agent.flush_episode()


@dataclass
class PretrainEvent:
    epoch: int
    event_in_epoch: int
    n_picked: int
    event_reward: float
    epoch_cumulative_reward: float
    loss: float | None


def pretrain(
    agent: DqnAgent,
    pool: Pool,
    target_class: int,
    epochs: int,
    m: int,
    k: int,
    epsilon: float,
    rng: np.random.Generator,
) -> list[PretrainEvent]:
    """Replay the initial labelled set for several epochs.

    Each epoch restarts the selection bookkeeping from scratch over the
    initial subset only, while network weights and the replay buffer
    carry over, so later epochs find the rewarding patches faster. The
    real pool partition is never touched here.
    """
    init = pool.initial_indices
    if epochs > 0 and len(init) == 0:
        raise ValidationError("pretraining needs a non-empty initial subset")
    rows: list[PretrainEvent] = []
    for epoch in range(epochs):
        free = np.ones(len(init), dtype=bool)
        epoch_cum = 0.0
        event = 0
        while free.any():
            free_pos = np.flatnonzero(free)
            if len(free_pos) > m:
                free_pos = free_pos[rng.choice(len(free_pos), size=m, replace=False)]
            cand_idx = init[free_pos]
            feats = pool.features_for(cand_idx)
            agent.begin_event(feats)
            k_eff = min(k, len(cand_idx))
            q = agent.score(feats)
            positions = epsilon_greedy_pick(pool.data.ids[cand_idx], q, k_eff, epsilon, rng)
            sel_idx = cand_idx[positions]
            free[free_pos[positions]] = False
            rewards = pool.rewards_for(sel_idx, target_class)
            agent.observe(pool.features_for(sel_idx), rewards)
            loss = agent.train_event(agent.hp.zeta_start, rng)
            epoch_cum += float(rewards.sum())
            rows.append(PretrainEvent(epoch, event, k_eff, float(rewards.sum()),
                                      epoch_cum, loss))
            event += 1
        agent.flush_episode()
    return rows


def saturation_event(rows: list[PretrainEvent], epoch: int, total_targets: float) -> int | None:
    """First event of an epoch at which every target patch has been picked."""
    for r in rows:
        if r.epoch == epoch and r.epoch_cumulative_reward >= total_targets:
            return r.event_in_epoch
    return None

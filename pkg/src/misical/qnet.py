"""Feedforward action-value network: forward, backprop, RMSProp, soft updates.

The network maps one action-feature vector to a scalar Q-value through
rectified hidden layers and a linear output. Everything runs in float64
numpy on the CPU; identical seeds give bit-identical trajectories.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import MisicalError, ValidationError

CHECKPOINT_MAGIC = b"MSQN"
CHECKPOINT_VERSION = 1


class QNetwork:
    """Weights stored per layer as (W, b) with W of shape (fan_in, fan_out)."""

    def __init__(self, dims: list[int], rng: np.random.Generator | None = None):
        if len(dims) < 2 or dims[-1] != 1:
            raise ValidationError(f"need at least input and scalar output dims, got {dims}")
        self.dims = list(dims)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        rng = rng or np.random.default_rng()
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "QNetwork":
        clone = QNetwork.__new__(QNetwork)
        clone.dims = list(self.dims)
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def _forward_cached(self, x: np.ndarray):
        """Forward pass keeping activations and pre-activations for backprop."""
        acts = [x]
        zs = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            zs.append(z)
            h = z if i == last else np.maximum(z, 0.0)
            acts.append(h)
        return acts, zs

    def forward(self, features) -> np.ndarray | float:
        """Q-value(s) for one feature vector or a (B, D) batch."""
        x = np.asarray(features, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.input_dim:
            raise ValidationError(f"expected {self.input_dim} features, got {x.shape[1]}")
        acts, _ = self._forward_cached(x)
        q = acts[-1][:, 0]
        return float(q[0]) if single else q

    def loss_and_grads(self, x: np.ndarray, targets: np.ndarray, is_weights: np.ndarray):
        """Weighted MSE loss, its gradients, and the per-example TD errors.

        loss = mean_i w_i * (target_i - q_i)^2, targets treated as constants.
        """
        acts, zs = self._forward_cached(x)
        q = acts[-1][:, 0]
        err = targets - q
        loss = float(np.mean(is_weights * err * err))
        batch = x.shape[0]
        delta = (-2.0 / batch) * (is_weights * err)[:, None]
        grads_w: list[np.ndarray] = [None] * len(self.weights)
        grads_b: list[np.ndarray] = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = acts[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (zs[i - 1] > 0.0)
        return loss, grads_w, grads_b, err


@dataclass
class RMSProp:
    """Square-gradient accumulator optimizer; state initializes lazily."""

    learning_rate: float = 1e-3
    decay: float = 0.99
    epsilon: float = 1e-8
    weight_decay: float = 1e-4
    _acc: list[np.ndarray] = field(default_factory=list, repr=False)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self._acc:
            self._acc = [np.zeros_like(p) for p in params]
        for p, g, acc in zip(params, grads, self._acc):
            acc *= self.decay
            acc += (1.0 - self.decay) * g * g
            p -= self.learning_rate * g / (np.sqrt(acc) + self.epsilon)


def td_target(reward_n: float, gamma: float, next_q_max: float) -> float:
    """Bellman target; at gamma = 0 the bootstrap term is skipped entirely."""
    if not 0.0 <= gamma <= 1.0:
        raise ValidationError(f"discount must be in [0, 1], got {gamma}")
    if gamma == 0.0:
        return float(reward_n)
    return float(reward_n) + gamma * float(next_q_max)


def double_q_value(local: QNetwork, target: QNetwork, candidates: np.ndarray) -> float:
    """Target-network value of the local-argmax candidate (ties: lowest index)."""
    local_q = local.forward(candidates)
    best = int(np.argmax(local_q))
    return float(target.forward(candidates[best]))


def train_batch(
    local: QNetwork,
    target: QNetwork,
    opt: RMSProp,
    batch: list,
    gamma: float,
    is_weights: np.ndarray,
    grad_clip: float,
):
    """One DDQN update on a batch of experiences.

    `batch` holds objects with action_features, reward_n and
    next_candidates attributes (see replay.Experience). Returns
    (loss, |td_errors|) for logging and priority updates.
    """
    if len(batch) < 1:
        raise ValidationError("training batch must be non-empty")
    x = np.stack([np.asarray(e.action_features, dtype=np.float64) for e in batch])
    rewards = np.array([e.reward_n for e in batch], dtype=np.float64)
    if gamma == 0.0:
        targets = rewards
    else:
        boot = np.zeros(len(batch))
        cache: dict[int, float] = {}
        for i, e in enumerate(batch):
            nxt = e.next_candidates
            if nxt is None:
                continue
            key = id(nxt)
            if key not in cache:
                cache[key] = double_q_value(local, target, np.asarray(nxt, dtype=np.float64))
            boot[i] = cache[key]
        targets = rewards + gamma * boot

    is_weights = np.asarray(is_weights, dtype=np.float64)
    loss, grads_w, grads_b, err = local.loss_and_grads(x, targets, is_weights)
    if not np.isfinite(loss):
        q = targets - err
        raise MisicalError(
            "non-finite training loss: "
            f"loss={loss}, q in [{q.min()}, {q.max()}], "
            f"targets in [{targets.min()}, {targets.max()}], "
            f"|features| max {np.abs(x).max()}")
    grads = []
    for gw, gb, w, b in zip(grads_w, grads_b, local.weights, local.biases):
        grads.append(gw + opt.weight_decay * w)
        grads.append(gb + opt.weight_decay * b)
    if grad_clip is not None and grad_clip > 0:
        grads = [np.clip(g, -grad_clip, grad_clip) for g in grads]
    opt.step(local.parameters(), grads)
    return loss, np.abs(err)


def soft_update(target: QNetwork, local: QNetwork, beta: float) -> None:
    """Blend every target parameter toward the local one at rate beta.

    Computed in difference form so that, with the local net frozen, the
    parameter gap contracts by an exact factor (1 - beta) per call.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValidationError(f"soft-update rate must be in [0, 1], got {beta}")
    if target.dims != local.dims:
        raise ValidationError(f"topology mismatch: {target.dims} vs {local.dims}")
    if beta == 0.0:
        return
    for tp, lp in zip(target.parameters(), local.parameters()):
        if beta == 1.0:
            tp[...] = lp
        else:
            tp += beta * (lp - tp)


def save_checkpoint(net: QNetwork, path) -> None:
    """Versioned little-endian binary: dims, then per-layer row-major W and b."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HH", CHECKPOINT_VERSION, len(net.dims)))
        fh.write(struct.pack(f"<{len(net.dims)}I", *net.dims))
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_checkpoint(path) -> QNetwork:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValidationError(f"bad checkpoint magic {magic!r}")
        version, n_dims = struct.unpack("<HH", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValidationError(f"unsupported checkpoint version {version}")
        dims = list(struct.unpack(f"<{n_dims}I", fh.read(4 * n_dims)))
        net = QNetwork.__new__(QNetwork)
        net.dims = dims
        net.weights, net.biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = np.frombuffer(fh.read(8 * fan_in * fan_out), dtype="<f8").reshape(fan_in, fan_out)
            b = np.frombuffer(fh.read(8 * fan_out), dtype="<f8")
            net.weights.append(w.astype(np.float64))
            net.biases.append(b.astype(np.float64))
        if fh.read(1):
            raise ValidationError("trailing data in checkpoint")
    return net

"""Self-check suites behind the `verify` subcommand.

Each suite is a fast, seeded property check with an independent oracle:
replay sampling frequencies against the analytic distribution, analytic
gradients against central finite differences, the n-step accumulator
against brute-force window sums, and pool-file round-trip/corruption
behaviour. The CLI prints one verdict line per suite.
"""
from __future__ import annotations

import io
import time
from dataclasses import dataclass

import numpy as np
from scipy import stats as sstats

from . import poolio
from .errors import PoolFormatError
from .qnet import QNetwork
from .replay import Experience, NStepAccumulator, PrioritizedReplayBuffer


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _filled_buffer(n: int, rng: np.random.Generator) -> PrioritizedReplayBuffer:
    buf = PrioritizedReplayBuffer(n)
    for i in range(n):
        buf.push(Experience(np.zeros(4), 0.0))
    buf.update_priorities(np.arange(n), rng.uniform(0.05, 2.0, n))
    return buf


def check_per_frequencies(draws: int = 1_000_000, entries: int = 64,
                          eta: float = 0.6, seed: int = 7) -> SuiteResult:
    """Empirical sampling frequencies vs analytic P(i), plus eta=0 uniformity."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    buf = _filled_buffer(entries, rng)

    counts = np.zeros(entries, dtype=np.int64)
    batch = 10_000
    for _ in range(draws // batch):
        _, _, ids = buf.sample(batch, eta, 0.4, rng)
        counts += np.bincount(ids, minlength=entries)
    p_analytic = buf.priorities[:entries] ** eta
    p_analytic /= p_analytic.sum()
    rel_err = np.abs(counts / draws - p_analytic) / p_analytic
    freq_ok = bool(rel_err.max() < 0.02)

    counts0 = np.zeros(entries, dtype=np.int64)
    for _ in range(draws // batch):
        _, _, ids = buf.sample(batch, 0.0, 0.4, rng)
        counts0 += np.bincount(ids, minlength=entries)
    chi2 = float(((counts0 - draws / entries) ** 2 / (draws / entries)).sum())
    p_value = float(sstats.chi2.sf(chi2, entries - 1))
    unif_ok = bool(p_value > 0.01)

    dt = time.perf_counter() - t0
    return SuiteResult(
        "per-frequencies", freq_ok and unif_ok,
        f"max relative error {rel_err.max():.4f} (limit 0.02), "
        f"eta=0 chi-square p {p_value:.3f} (need > 0.01)", dt)


def check_nstep_oracle(length: int = 1000, seed: int = 11) -> SuiteResult:
    """Accumulator output vs brute-force window sums, exact to 1e-12."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for gamma in (0.0, 0.1, 0.5, 0.99):
        for n in (1, 3, 5):
            rewards = rng.uniform(-1.0, 2.0, length)
            acc = NStepAccumulator(n, gamma)
            got = []
            for i, r in enumerate(rewards):
                e = acc.add(r, np.array([float(i)]))
                if e is not None:
                    got.append((int(e.action_features[0]), e.reward_n))
            for e in acc.flush():
                got.append((int(e.action_features[0]), e.reward_n))
            # oracle: materialize every window sum directly
            expect = {t: sum(gamma ** i * rewards[t + i]
                             for i in range(min(n, length - t)))
                      for t in range(length)}
            if len(got) != length:
                return SuiteResult("n-step-oracle", False,
                                   f"emitted {len(got)} of {length} windows",
                                   time.perf_counter() - t0)
            for t, value in got:
                worst = max(worst, abs(value - expect[t]))
    dt = time.perf_counter() - t0
    return SuiteResult("n-step-oracle", bool(worst < 1e-12),
                       f"max |difference| {worst:.2e} (limit 1e-12)", dt)


def finite_difference_grads(net: QNetwork, x, targets, weights, h: float = 1e-4):
    """Central finite differences of the weighted MSE loss for every parameter."""
    grads = []
    for p in net.parameters():
        g = np.zeros_like(p)
        flat = p.ravel()
        gf = g.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up, *_ = net.loss_and_grads(x, targets, weights)
            flat[j] = orig - h
            down, *_ = net.loss_and_grads(x, targets, weights)
            flat[j] = orig
            gf[j] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def _random_gradcheck_instance(rng: np.random.Generator):
    """A (net, batch) pair with pre-activations kept away from the ReLU kink."""
    for _ in range(50):
        dims = [int(rng.integers(3, 9)), int(rng.integers(4, 12)),
                int(rng.integers(3, 8)), 1]
        net = QNetwork(dims, rng)
        b = int(rng.integers(1, 6))
        x = rng.normal(0.0, 1.0, (b, dims[0]))
        targets = rng.normal(0.0, 1.0, b)
        weights = rng.uniform(0.2, 1.0, b)
        margin_ok = True
        acts, zs = net._forward_cached(x)
        for z in zs[:-1]:
            if np.abs(z).min() < 5e-3:
                margin_ok = False
                break
        if margin_ok:
            return net, x, targets, weights
    return net, x, targets, weights  # extremely unlikely fallback


def check_gradients(instances: int = 100, seed: int = 3) -> SuiteResult:
    """Analytic vs central finite-difference gradients over random instances."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        net, x, targets, weights = _random_gradcheck_instance(rng)
        _, gw, gb, _ = net.loss_and_grads(x, targets, weights)
        analytic = []
        for w, b in zip(gw, gb):
            analytic += [w, b]
        numeric = finite_difference_grads(net, x, targets, weights)
        for ga, gn in zip(analytic, numeric):
            denom = np.maximum(np.abs(ga) + np.abs(gn), 1e-8)
            worst = max(worst, float((np.abs(ga - gn) / denom).max()))
    dt = time.perf_counter() - t0
    return SuiteResult("gradient-check", bool(worst < 1e-4),
                       f"max relative error {worst:.2e} over {instances} instances "
                       "(limit 1e-4)", dt)


def _random_pool_bytes(rng: np.random.Generator) -> bytes:
    n = int(rng.integers(1, 40))
    c = int(rng.integers(2, 37))
    has_entropy = bool(rng.integers(2))
    capacity = int(rng.integers(2 * c, 8192))
    header = poolio.PoolHeader(n_patches=n, n_classes=c, patch_capacity=capacity,
                               flags=poolio.FLAG_ENTROPY if has_entropy else 0)
    records = []
    ids = np.sort(rng.choice(10_000, size=n, replace=False))
    for pid in ids:
        tri = np.sort(rng.uniform(0.0, np.log(c), 3))
        gt = rng.integers(0, capacity // c, c).astype(np.uint32)
        records.append(poolio.PatchRecord(
            patch_id=int(pid), bald_max=float(tri[2]), bald_min=float(tri[0]),
            bald_mean=float(tri[1]),
            presence_bits=rng.integers(0, 2, c).astype(np.uint8),
            gt_pixel_counts=gt,
            entropy_mean=float(rng.uniform(0, np.log(c))) if has_entropy else None))
    sink = io.BytesIO()
    poolio.write_pool(header, records, sink)
    return sink.getvalue()


def check_format_roundtrip(cases: int = 1000, seed: int = 19) -> SuiteResult:
    """read(write(x)) identity over randomized pools."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    for case in range(cases):
        blob = _random_pool_bytes(rng)
        header, records = poolio.read_pool(io.BytesIO(blob))
        sink = io.BytesIO()
        poolio.write_pool(header, records, sink)
        if sink.getvalue() != blob:
            return SuiteResult("format-roundtrip", False,
                               f"case {case}: bytes differ after round trip",
                               time.perf_counter() - t0)
    return SuiteResult("format-roundtrip", True, f"{cases} randomized pools identical",
                       time.perf_counter() - t0)


def check_format_corruption(trials: int = 10_000, seed: int = 23) -> SuiteResult:
    """Single-byte payload mutations must be detected when reading."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    blob = bytearray(_random_pool_bytes(np.random.default_rng(seed + 1)))
    caught = 0
    for _ in range(trials):
        pos = int(rng.integers(len(blob)))
        old = blob[pos]
        new = int(rng.integers(256))
        while new == old:
            new = int(rng.integers(256))
        blob[pos] = new
        try:
            poolio.read_pool(io.BytesIO(bytes(blob)))
        except PoolFormatError:
            caught += 1
        finally:
            blob[pos] = old
    rate = caught / trials
    return SuiteResult("format-corruption", bool(rate >= 0.99),
                       f"detected {rate:.4%} of {trials} single-byte mutations "
                       "(need >= 99%)", time.perf_counter() - t0)


ALL_SUITES = (
    check_per_frequencies,
    check_nstep_oracle,
    check_gradients,
    check_format_roundtrip,
    check_format_corruption,
)


def run_all(suites=ALL_SUITES) -> list[SuiteResult]:
    return [suite() for suite in suites]

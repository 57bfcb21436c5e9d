"""Seeded multi-run orchestration: the shared selection-event loop, metric
logging, per-seed CSVs, and the cross-policy comparison with Welch t-tests.

One selection event = sample a candidate subset, pick k patches with the
configured policy, label them, grant rewards, let the policy train. The
loop, budget accounting, and log schema are identical for every policy.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, replace as _replace

import numpy as np
from scipy import stats as sstats

from .agent import DqnAgent, DqnHyperparams, EpsilonSchedule, MisicalPolicy, PretrainEvent, pretrain
from .baselines import make_policy
from .config import RunConfig
from .errors import ConfigError, MisicalError
from .pool import Pool, budget_size, init_pool
from .poolio import PoolArrays, read_pool_arrays
from .qnet import save_checkpoint
from .replay import ZetaSchedule
from .synth import IouModel, delta_iou_reward, load_iou_model, simulated_mean_iou

LOG_COLUMNS = ("event", "epsilon", "cumulative_reward", "labelled_count",
               "histogram_entropy", "dqn_loss", "simulated_mean_iou")


@dataclass
class LogRow:
    event: int
    epsilon: float | None
    cumulative_reward: float
    labelled_count: int
    histogram_entropy: float | None
    dqn_loss: float | None
    simulated_mean_iou: float | None
    wall_ms: float = 0.0  # logged to the timing sidecar, not the metrics CSV


@dataclass
class RunResult:
    seed: int
    rows: list[LogRow]
    pretrain_rows: list[PretrainEvent]
    target_yield: int          # labelled-during-run patches containing the target
    initial_target_count: int  # target patches already inside the initial subset
    wall_ms_total: float
    agent: DqnAgent | None = None


def planned_events(n_records: int, total_frac: float, n_initial: int, k: int) -> int:
    """Number of selection events needed to walk the budget at k picks each."""
    remaining = budget_size(n_records, total_frac) - n_initial
    return max(0, math.ceil(remaining / k))


def resolve_initial(cfg: RunConfig, n_records: int) -> dict:
    if cfg.initial_count > 0:
        return {"initial_count": cfg.initial_count}
    return {"initial_fraction": cfg.initial_frac}


def epsilon_schedule_for(cfg: RunConfig, n_events: int) -> EpsilonSchedule:
    if cfg.epsilon_kind == "constant":
        return EpsilonSchedule.constant(cfg.epsilon)
    steps = cfg.epsilon_steps if cfg.epsilon_steps > 0 else max(1, n_events // 2)
    return EpsilonSchedule.linear(cfg.epsilon_start, cfg.epsilon_end, steps)


def hyperparams_for(cfg: RunConfig) -> DqnHyperparams:
    return DqnHyperparams(
        hidden=tuple(cfg.hidden), learning_rate=cfg.learning_rate,
        weight_decay=cfg.weight_decay, rms_decay=cfg.rms_decay,
        rms_epsilon=cfg.rms_epsilon, grad_clip=cfg.grad_clip, beta=cfg.beta,
        gamma=cfg.gamma, buffer_capacity=cfg.buffer_capacity,
        batch_size=cfg.batch_size, n_step=cfg.n_step, eta=cfg.eta,
        zeta_start=cfg.zeta_start, priority_floor=cfg.priority_floor,
        batches_per_event=cfg.batches_per_event)


class CategoricalReward:
    """1 per selected patch containing at least one target pixel."""

    def __init__(self, target: int):
        self.target = target

    def start_pretrain_epoch(self):
        return None

    def pretrain_rewards(self, pool: Pool, sel_idx, scratch_h):
        return pool.rewards_for(sel_idx, self.target)

    def explore_rewards(self, pool: Pool, sel_idx, h_before):
        return pool.rewards_for(sel_idx, self.target)


class DeltaIouReward:
    """Event-level accuracy change, assigned identically to the whole batch."""

    def __init__(self, target: int, model: IouModel):
        self.target = target
        self.model = model

    def start_pretrain_epoch(self):
        return np.zeros(self.model.n_classes, dtype=np.uint64)

    def pretrain_rewards(self, pool: Pool, sel_idx, scratch_h):
        before = scratch_h.copy()
        scratch_h += pool.data.gt_counts[sel_idx].sum(axis=0, dtype=np.uint64)
        delta = delta_iou_reward(before, scratch_h, self.target, self.model)
        return np.full(len(sel_idx), delta)

    def explore_rewards(self, pool: Pool, sel_idx, h_before):
        delta = delta_iou_reward(h_before, pool.histogram, self.target, self.model)
        return np.full(len(sel_idx), delta)


def _reward_mode(cfg: RunConfig, iou_model: IouModel | None):
    if cfg.reward == "categorical":
        return CategoricalReward(cfg.target_class)
    if iou_model is None:
        raise ConfigError(
            "reward: delta-iou needs an accuracy model; generate the pool with "
            "`misical synth` (which writes the .iou.json sidecar) or pass --iou-model")
    return DeltaIouReward(cfg.target_class, iou_model)


def run_single(data: PoolArrays, cfg: RunConfig, seed: int,
               iou_model: IouModel | None = None, keep_agent: bool = False,
               checkpoint_dir: str | None = None) -> RunResult:
    """Execute pretraining plus exploration for one seed.

    With `checkpoint_dir` set, the local network is snapshotted to a
    versioned binary at the pretraining-to-exploration handoff and again
    after the final event.
    """
    t0 = time.perf_counter()
    pool_ss, agent_ss, loop_ss = np.random.SeedSequence(seed).spawn(3)
    pool = init_pool(data, cfg.total_frac, rng=np.random.default_rng(pool_ss),
                     **resolve_initial(cfg, len(data.ids)))
    loop_rng = np.random.default_rng(loop_ss)
    n_events = planned_events(len(data.ids), cfg.total_frac, pool.labelled_count,
                              cfg.picks_per_event)
    reward_mode = _reward_mode(cfg, iou_model)

    agent = None
    pretrain_rows: list[PretrainEvent] = []
    if cfg.policy == "misical":
        agent = DqnAgent(3 + data.n_classes, hyperparams_for(cfg),
                         np.random.default_rng(agent_ss))
        policy = MisicalPolicy(agent, epsilon_schedule_for(cfg, n_events),
                               ZetaSchedule(cfg.zeta_start, max(1, n_events)))
        if cfg.pretrain_epochs > 0:
            pretrain_rows = _pretrain_with_rewards(agent, pool, cfg, reward_mode, loop_rng)
        if checkpoint_dir is not None:
            save_checkpoint(agent.local,
                            os.path.join(checkpoint_dir, f"qnet_pretrained_seed{seed}.msqn"))
    else:
        policy = make_policy(cfg.policy)

    initial_targets = int((data.gt_counts[pool.initial_indices, cfg.target_class] >= 1).sum())

    rows: list[LogRow] = []
    cumulative = 0.0
    event = 0
    while not pool.budget_exhausted:
        ev_start = time.perf_counter()
        cand = pool.sample_candidates(cfg.candidates_per_event, loop_rng)
        if len(cand) == 0:
            break
        k_eff = min(cfg.picks_per_event, pool.remaining_budget, len(cand))
        sel_idx = policy.select(pool, cand, k_eff, event, loop_rng)
        h_before = pool.histogram.copy()
        pool.label_many(sel_idx)
        rewards = reward_mode.explore_rewards(pool, sel_idx, h_before)
        loss = policy.after_label(pool, sel_idx, rewards, event, loop_rng)
        cumulative += float(rewards.sum())
        entropy = pool.labelled_entropy() if pool.histogram.sum() > 0 else None
        sim_iou = simulated_mean_iou(pool.histogram, iou_model) if iou_model else None
        rows.append(LogRow(
            event=event, epsilon=policy.epsilon_at(event),
            cumulative_reward=cumulative, labelled_count=pool.labelled_count,
            histogram_entropy=entropy, dqn_loss=loss, simulated_mean_iou=sim_iou,
            wall_ms=(time.perf_counter() - ev_start) * 1e3))
        event += 1
    policy.end_run()
    if agent is not None and checkpoint_dir is not None:
        save_checkpoint(agent.local,
                        os.path.join(checkpoint_dir, f"qnet_final_seed{seed}.msqn"))

    labelled_targets = int((data.gt_counts[np.flatnonzero(pool.labelled), cfg.target_class] >= 1).sum())
    return RunResult(
        seed=seed, rows=rows, pretrain_rows=pretrain_rows,
        target_yield=labelled_targets - initial_targets,
        initial_target_count=initial_targets,
        wall_ms_total=(time.perf_counter() - t0) * 1e3,
        agent=agent if keep_agent else None)


def _pretrain_with_rewards(agent: DqnAgent, pool: Pool, cfg: RunConfig,
                           reward_mode, rng: np.random.Generator) -> list[PretrainEvent]:
    """Pretraining epochs over the initial subset with the configured reward."""
    if isinstance(reward_mode, CategoricalReward):
        return pretrain(agent, pool, cfg.target_class, cfg.pretrain_epochs,
                        cfg.candidates_per_event, cfg.picks_per_event,
                        cfg.pretrain_epsilon, rng)
    # event-level rewards need a scratch histogram per restarted epoch
    from .agent import epsilon_greedy_pick
    init = pool.initial_indices
    rows: list[PretrainEvent] = []
    for epoch in range(cfg.pretrain_epochs):
        scratch_h = reward_mode.start_pretrain_epoch()
        free = np.ones(len(init), dtype=bool)
        epoch_cum = 0.0
        event = 0
        while free.any():
            free_pos = np.flatnonzero(free)
            if len(free_pos) > cfg.candidates_per_event:
                free_pos = free_pos[rng.choice(len(free_pos), size=cfg.candidates_per_event,
                                               replace=False)]
            cand_idx = init[free_pos]
            feats = pool.features_for(cand_idx)
            agent.begin_event(feats)
            k_eff = min(cfg.picks_per_event, len(cand_idx))
            q = agent.score(feats)
            positions = epsilon_greedy_pick(pool.data.ids[cand_idx], q, k_eff,
                                            cfg.pretrain_epsilon, rng)
            sel_idx = cand_idx[positions]
            free[free_pos[positions]] = False
            rewards = reward_mode.pretrain_rewards(pool, sel_idx, scratch_h)
            agent.observe(pool.features_for(sel_idx), rewards)
            loss = agent.train_event(agent.hp.zeta_start, rng)
            epoch_cum += float(rewards.sum())
            rows.append(PretrainEvent(epoch, event, k_eff, float(rewards.sum()),
                                      epoch_cum, loss))
            event += 1
        agent.flush_episode()
    return rows


# ---------------------------------------------------------------------------
# file emission

def _fmt_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def write_run_csv(rows: list[LogRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for r in rows:
            writer.writerow([_fmt_cell(getattr(r, c)) for c in LOG_COLUMNS])


def write_pretrain_csv(rows: list[PretrainEvent], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "event_in_epoch", "n_picked", "event_reward",
                         "epoch_cumulative_reward", "loss"])
        for r in rows:
            writer.writerow([r.epoch, r.event_in_epoch, r.n_picked,
                             _fmt_cell(r.event_reward),
                             _fmt_cell(r.epoch_cumulative_reward), _fmt_cell(r.loss)])


def write_timing(result: RunResult, path) -> None:
    payload = {"total_ms": result.wall_ms_total,
               "event_ms": [r.wall_ms for r in result.rows]}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def _mean_std(values: list[float]) -> dict:
    arr = np.array(values, dtype=np.float64)
    return {"per_seed": values, "mean": float(arr.mean()),
            "std": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0}


def summarize(results: list[RunResult]) -> dict:
    """Final-row statistics across seeds; recomputable from the per-seed CSVs."""
    metrics = {}
    for col in ("cumulative_reward", "labelled_count", "histogram_entropy",
                "simulated_mean_iou"):
        finals = [getattr(r.rows[-1], col) for r in results if r.rows]
        if finals and all(v is not None for v in finals):
            metrics[col] = _mean_std([float(v) for v in finals])
    extra = {
        "target_yield": _mean_std([float(r.target_yield) for r in results]),
        "wall_ms_total": _mean_std([r.wall_ms_total for r in results]),
    }
    return {"seeds": [r.seed for r in results], "metrics": metrics, "extra": extra}


def welch_t_test(a, b) -> tuple[float, float, float]:
    """Welch's unequal-variance t-test: returns (t, df, two-sided p)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n1, n2 = len(a), len(b)
    if min(n1, n2) < 2:
        raise MisicalError("Welch t-test needs at least two samples per side")
    m1, m2 = a.mean(), b.mean()
    v1 = a.var(ddof=1)
    v2 = b.var(ddof=1)
    se2 = v1 / n1 + v2 / n2
    if se2 == 0.0:
        return 0.0, float(n1 + n2 - 2), 1.0 if m1 == m2 else 0.0
    t = (m1 - m2) / np.sqrt(se2)
    df = se2 ** 2 / ((v1 / n1) ** 2 / (n1 - 1) + (v2 / n2) ** 2 / (n2 - 1))
    p = 2.0 * float(sstats.t.sf(abs(t), df))
    return float(t), float(df), p


def _ensure_outputs_writable(paths: list[str], force: bool) -> None:
    clashes = [p for p in paths if os.path.exists(p)]
    if clashes and not force:
        raise ConfigError(
            f"refusing to overwrite existing output ({clashes[0]}); pass --force")


def run_command(cfg: RunConfig, force: bool = False) -> dict:
    """`run` subcommand: one CSV per seed plus a summary (and figures)."""
    cfg.validate()
    data = read_pool_arrays(cfg.pool)
    if not 0 <= cfg.target_class < data.n_classes:
        raise ConfigError(f"target_class: {cfg.target_class} out of range "
                          f"for a {data.n_classes}-class pool")
    iou_model = None
    if cfg.iou_model:
        with open(cfg.iou_model) as fh:
            iou_model = IouModel.from_json(fh.read())
    else:
        iou_model = load_iou_model(cfg.pool)
    if cfg.reward == "delta-iou" and iou_model is None:
        _reward_mode(cfg, None)  # raises the descriptive ConfigError

    os.makedirs(cfg.out, exist_ok=True)
    run_paths = [os.path.join(cfg.out, f"run_seed{s}.csv") for s in cfg.seeds]
    summary_path = os.path.join(cfg.out, "summary.json")
    _ensure_outputs_writable(run_paths + [summary_path], force)

    results = []
    for seed, path in zip(cfg.seeds, run_paths):
        result = run_single(data, cfg, seed, iou_model,
                            checkpoint_dir=cfg.out if cfg.save_nets else None)
        write_run_csv(result.rows, path)
        write_timing(result, os.path.join(cfg.out, f"timing_seed{seed}.json"))
        if result.pretrain_rows:
            write_pretrain_csv(result.pretrain_rows,
                               os.path.join(cfg.out, f"pretrain_seed{seed}.csv"))
        results.append(result)

    summary = summarize(results)
    summary["config"] = {"policy": cfg.policy, "target_class": cfg.target_class,
                         "reward": cfg.reward, "pool": cfg.pool}
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=1)
        fh.write("\n")

    if cfg.plots:
        from . import report
        report.render_run_figure(results, os.path.join(cfg.out, "run_curves.png"),
                                 policy=cfg.policy)
    return summary


def compare_command(cfg: RunConfig, policies: list[str], force: bool = False) -> dict:
    """`compare` subcommand: shared seeds and pool across a policy list."""
    if len(policies) < 2:
        raise ConfigError("compare needs at least two policies")
    cfg.validate()
    data = read_pool_arrays(cfg.pool)
    iou_model = load_iou_model(cfg.pool)

    os.makedirs(cfg.out, exist_ok=True)
    table_path = os.path.join(cfg.out, "compare.csv")
    _ensure_outputs_writable([table_path], force)

    by_policy: dict[str, list[RunResult]] = {}
    for name in policies:
        sub = _replace(cfg, policy=name, out=os.path.join(cfg.out, name))
        os.makedirs(sub.out, exist_ok=True)
        results = []
        for seed in cfg.seeds:
            result = run_single(data, sub, seed, iou_model)
            write_run_csv(result.rows, os.path.join(sub.out, f"run_seed{seed}.csv"))
            results.append(result)
        by_policy[name] = results

    yields = {n: [float(r.target_yield) for r in rs] for n, rs in by_policy.items()}
    ious = {n: [r.rows[-1].simulated_mean_iou for r in rs if r.rows] for n, rs in by_policy.items()}
    best = max(policies, key=lambda n: np.mean(yields[n]))

    table = []
    for name in policies:
        row = {"policy": name,
               "yield_mean": float(np.mean(yields[name])),
               "yield_std": float(np.std(yields[name], ddof=1)) if len(yields[name]) > 1 else 0.0}
        vals = [v for v in ious[name] if v is not None]
        row["sim_iou_mean"] = float(np.mean(vals)) if vals else None
        row["sim_iou_std"] = (float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0) if vals else None
        if name == best:
            row["p_vs_best"] = None
            row["significant"] = None
        else:
            _, _, p = welch_t_test(yields[best], yields[name])
            row["p_vs_best"] = p
            row["significant"] = bool(p < 0.05)
        table.append(row)

    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        cols = ["policy", "yield_mean", "yield_std", "sim_iou_mean", "sim_iou_std",
                "p_vs_best", "significant"]
        writer.writerow(cols)
        for row in table:
            writer.writerow([_fmt_cell(row[c]) for c in cols])

    if cfg.plots:
        from . import report
        curves = {n: [np.array([x.cumulative_reward for x in r.rows]) for r in rs]
                  for n, rs in by_policy.items()}
        report.render_compare_figure(curves, os.path.join(cfg.out, "compare_curves.png"))
    return {"best": best, "table": table}

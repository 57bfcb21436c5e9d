import csv
import json
import os

import numpy as np
import pytest

from misical.config import RunConfig, build_run_config
from misical.errors import ConfigError
from misical.poolio import read_pool_arrays
from misical.runner import (
    compare_command,
    planned_events,
    run_command,
    run_single,
    summarize,
    welch_t_test,
)
from misical.synth import SynthConfig, generate_pool, load_iou_model


@pytest.fixture(scope="module")
def small_pool(tmp_path_factory):
    path = tmp_path_factory.mktemp("pool") / "small.msal"
    cfg = SynthConfig(n_patches=4000, n_classes=8, imbalance=1.0,
                      prevalence_scale=0.8, flip_prob=0.1, seed=0)
    generate_pool(cfg, path)
    return str(path)


def fast_cfg(pool, **kw):
    base = dict(pool=pool, target_class=7, policy="misical", seeds=(0,),
                out="unused", plots=False, initial_frac=0.05, total_frac=0.15,
                candidates_per_event=200, picks_per_event=20, hidden=(32, 16),
                buffer_capacity=2000, batch_size=64, pretrain_epochs=2)
    base.update(kw)
    return RunConfig(**base)


class TestPlanning:
    def test_paper_scale_event_count(self):
        # 640k patches, 2.5% initial, 5% budget, k=100 -> 160 events
        assert planned_events(640_000, 0.05, 16_000, 100) == 160

    def test_budget_walked_exactly(self, small_pool):
        data = read_pool_arrays(small_pool)
        cfg = fast_cfg(small_pool)
        result = run_single(data, cfg, seed=0)
        budget = int(np.floor(0.15 * 4000))
        assert result.rows[-1].labelled_count == budget
        events = planned_events(4000, 0.15, int(np.floor(0.05 * 4000)), 20)
        assert len(result.rows) == events


class TestRunSingle:
    def test_cumulative_reward_matches_pool_scan(self, small_pool):
        data = read_pool_arrays(small_pool)
        cfg = fast_cfg(small_pool)
        result = run_single(data, cfg, seed=1)
        assert result.rows[-1].cumulative_reward == result.target_yield

    def test_event_indices_strictly_increase(self, small_pool):
        data = read_pool_arrays(small_pool)
        result = run_single(data, fast_cfg(small_pool), seed=2)
        events = [r.event for r in result.rows]
        assert events == list(range(len(events)))
        counts = [r.labelled_count for r in result.rows]
        assert all(b >= a for a, b in zip(counts, counts[1:]))

    def test_target_absent_from_pool_still_terminates(self, small_pool, tmp_path):
        cfg_synth = SynthConfig(n_patches=1500, n_classes=8, prevalence_scale=0.4,
                                imbalance=3.0, seed=5)
        path = tmp_path / "scarce.msal"
        generate_pool(cfg_synth, path)
        data = read_pool_arrays(path)
        # class 7 prevalence 0.4/8^3 ~ 0.0008: may have no patches at all
        cfg = fast_cfg(str(path), initial_frac=0.02, total_frac=0.1)
        result = run_single(data, cfg, seed=3)
        assert result.rows[-1].labelled_count == int(np.floor(0.1 * 1500))

    def test_random_policy_has_no_loss_values(self, small_pool):
        data = read_pool_arrays(small_pool)
        result = run_single(data, fast_cfg(small_pool, policy="random"), seed=4)
        assert all(r.dqn_loss is None for r in result.rows)
        assert all(r.epsilon is None for r in result.rows)

    def test_exploration_curve_not_step_function(self, small_pool):
        """With subset sampling and eps > 0 the acquisition rises gradually."""
        data = read_pool_arrays(small_pool)
        cfg = fast_cfg(small_pool, epsilon_kind="linear", epsilon_start=1.0,
                       epsilon_end=0.1, total_frac=0.3)
        result = run_single(data, cfg, seed=5)
        gains = np.diff([0.0] + [r.cumulative_reward for r in result.rows])
        # no single event grabs more than half of the final total
        assert gains.max() < 0.5 * result.rows[-1].cumulative_reward


class TestEpsilonOneMatchesRandom:
    def test_fully_random_agent_indistinguishable_from_random_policy(self, small_pool):
        data = read_pool_arrays(small_pool)
        finals_eps1, finals_rand = [], []
        for seed in range(10):
            cfg = fast_cfg(small_pool, epsilon_kind="constant", epsilon=1.0,
                           pretrain_epochs=0)
            finals_eps1.append(run_single(data, cfg, seed).rows[-1].cumulative_reward)
            cfg = fast_cfg(small_pool, policy="random")
            finals_rand.append(run_single(data, cfg, seed).rows[-1].cumulative_reward)
        a, b = np.array(finals_eps1), np.array(finals_rand)
        sigma = np.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
        assert abs(a.mean() - b.mean()) <= 2.0 * sigma + 1e-9


class TestWelch:
    def test_textbook_fixture(self):
        scale = 1.0 / np.sqrt(0.625)
        a = 10 + np.array([-1, -0.5, 0, 0.5, 1.0]) * scale
        b = 12 + np.array([-1, -0.5, 0, 0.5, 1.0]) * scale
        t, df, p = welch_t_test(a, b)
        assert t == pytest.approx(-3.1622776601683786, abs=1e-6)  # frozen hand value
        assert df == pytest.approx(8.0, abs=1e-9)
        assert p == pytest.approx(0.013349063426018722, rel=1e-6)

    def test_identical_samples_give_p_one(self):
        a = np.array([3.0, 3.0, 3.0])
        t, df, p = welch_t_test(a, a.copy())
        assert p == 1.0


class TestRunCommand:
    def test_writes_csvs_summary_and_reruns_identically(self, small_pool, tmp_path):
        out1, out2 = str(tmp_path / "r1"), str(tmp_path / "r2")
        cfg = fast_cfg(small_pool, seeds=(0, 1), out=out1)
        run_command(cfg)
        run_command(RunConfig(**{**cfg.__dict__, "out": out2}))
        for seed in (0, 1):
            a = open(os.path.join(out1, f"run_seed{seed}.csv"), "rb").read()
            b = open(os.path.join(out2, f"run_seed{seed}.csv"), "rb").read()
            assert a == b
        assert os.path.exists(os.path.join(out1, "summary.json"))
        assert os.path.exists(os.path.join(out1, "pretrain_seed0.csv"))
        assert os.path.exists(os.path.join(out1, "timing_seed0.json"))

    def test_refuses_overwrite_without_force(self, small_pool, tmp_path):
        out = str(tmp_path / "r")
        cfg = fast_cfg(small_pool, out=out)
        run_command(cfg)
        with pytest.raises(ConfigError):
            run_command(cfg)
        run_command(cfg, force=True)  # explicit opt-in succeeds

    def test_summary_recomputable_from_csvs(self, small_pool, tmp_path):
        out = str(tmp_path / "r")
        cfg = fast_cfg(small_pool, seeds=(0, 1, 2), out=out)
        summary = run_command(cfg)
        finals = []
        for seed in (0, 1, 2):
            with open(os.path.join(out, f"run_seed{seed}.csv")) as fh:
                last = list(csv.DictReader(fh))[-1]
            finals.append(float(last["cumulative_reward"]))
        stats = summary["metrics"]["cumulative_reward"]
        assert stats["mean"] == pytest.approx(np.mean(finals), abs=1e-12)
        assert stats["std"] == pytest.approx(np.std(finals, ddof=1), abs=1e-12)

    def test_figures_rendered_when_enabled(self, small_pool, tmp_path):
        out = str(tmp_path / "r")
        cfg = fast_cfg(small_pool, out=out, plots=True)
        run_command(cfg)
        assert os.path.exists(os.path.join(out, "run_curves.png"))

    def test_simulated_iou_column_present_for_synthetic_pool(self, small_pool, tmp_path):
        out = str(tmp_path / "r")
        run_command(fast_cfg(small_pool, out=out))
        with open(os.path.join(out, "run_seed0.csv")) as fh:
            rows = list(csv.DictReader(fh))
        assert all(r["simulated_mean_iou"] != "" for r in rows)
        model = load_iou_model(small_pool)
        assert model is not None

    def test_delta_iou_reward_runs(self, small_pool, tmp_path):
        out = str(tmp_path / "r")
        cfg = fast_cfg(small_pool, out=out, reward="delta-iou", seeds=(0,))
        summary = run_command(cfg)
        assert summary["extra"]["target_yield"]["mean"] >= 0


class TestCompareCommand:
    def test_table_and_pvalues(self, small_pool, tmp_path):
        out = str(tmp_path / "cmp")
        cfg = fast_cfg(small_pool, seeds=(0, 1, 2), out=out)
        result = compare_command(cfg, ["misical", "random", "bald"])
        assert result["best"] in ("misical", "random", "bald")
        table = {row["policy"]: row for row in result["table"]}
        assert table[result["best"]]["p_vs_best"] is None
        others = [n for n in table if n != result["best"]]
        assert all(0.0 <= table[n]["p_vs_best"] <= 1.0 for n in others)
        assert os.path.exists(os.path.join(out, "compare.csv"))

    def test_needs_two_policies(self, small_pool, tmp_path):
        with pytest.raises(ConfigError):
            compare_command(fast_cfg(small_pool, out=str(tmp_path / "c")), ["random"])

    def test_identical_policies_not_significant(self, small_pool, tmp_path):
        out = str(tmp_path / "same")
        cfg = fast_cfg(small_pool, seeds=(0, 1, 2), out=out, policy="random")
        result = compare_command(cfg, ["random", "random"])
        other = [r for r in result["table"] if r["p_vs_best"] is not None]
        assert all(r["p_vs_best"] == pytest.approx(1.0) for r in other)
        assert all(not r["significant"] for r in other)


class TestCheckpoints:
    def test_save_nets_emits_handoff_and_final(self, small_pool, tmp_path):
        from misical.qnet import load_checkpoint
        out = str(tmp_path / "ckpt")
        cfg = fast_cfg(small_pool, out=out, save_nets=True)
        run_command(cfg)
        pre = os.path.join(out, "qnet_pretrained_seed0.msqn")
        fin = os.path.join(out, "qnet_final_seed0.msqn")
        assert os.path.exists(pre) and os.path.exists(fin)
        a, b = load_checkpoint(pre), load_checkpoint(fin)
        assert a.dims == b.dims
        # exploration kept training, so the weights moved
        assert any((x != y).any() for x, y in zip(a.parameters(), b.parameters()))

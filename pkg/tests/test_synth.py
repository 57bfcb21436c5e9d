import numpy as np
import pytest

from misical.errors import ConfigError, ValidationError
from misical.poolio import read_pool_arrays
from misical.synth import (
    IouModel,
    SynthConfig,
    delta_iou_reward,
    generate_pool,
    iou_sidecar_path,
    load_iou_model,
    prevalences,
    simulated_mean_iou,
    thought_experiment,
)


class TestGeneration:
    def test_reproducible_bytes(self, tmp_path):
        cfg = SynthConfig(n_patches=3000, n_classes=8, seed=5)
        a, b = tmp_path / "a.msal", tmp_path / "b.msal"
        generate_pool(cfg, a)
        generate_pool(cfg, b)
        assert a.read_bytes() == b.read_bytes()

    def test_noiseless_limit_bits_equal_presence(self, tmp_path):
        cfg = SynthConfig(n_patches=2000, n_classes=6, flip_prob=0.0, bald_noise=0.0, seed=1)
        path = tmp_path / "p.msal"
        generate_pool(cfg, path)
        data = read_pool_arrays(path)
        gt_presence = (data.gt_counts > 0).astype(np.uint8)
        np.testing.assert_array_equal(data.presence, gt_presence)

    def test_balanced_limit(self, tmp_path):
        cfg = SynthConfig(n_patches=100_000, n_classes=5, imbalance=0.0,
                          prevalence_scale=0.5, seed=2)
        path = tmp_path / "p.msal"
        generate_pool(cfg, path)
        data = read_pool_arrays(path)
        rates = (data.gt_counts > 0).mean(axis=0)
        assert np.abs(rates - 0.5).max() < 0.01  # 2% of 0.5

    def test_cooccurrence_conditional(self, tmp_path):
        # P(class 1 | class 5) configured to 0.9
        cfg = SynthConfig(n_patches=300_000, n_classes=8, cooccurrence=((5, 1, 0.9),),
                          seed=3)
        path = tmp_path / "p.msal"
        generate_pool(cfg, path)
        data = read_pool_arrays(path)
        with_5 = data.gt_counts[:, 5] > 0
        assert with_5.sum() > 10_000
        rate = (data.gt_counts[with_5, 1] > 0).mean()
        assert abs(rate - 0.9) < 0.02 * 0.9 + 0.01

    def test_rare_class_patches_get_higher_uncertainty(self, tmp_path):
        cfg = SynthConfig(n_patches=30_000, n_classes=16, seed=4)
        path = tmp_path / "p.msal"
        generate_pool(cfg, path)
        data = read_pool_arrays(path)
        rare = data.gt_counts[:, 15] > 0
        assert data.bald[rare, 2].mean() > data.bald[~rare, 2].mean() + 0.1

    def test_padding_patches_empty_but_high_entropy(self, tmp_path):
        cfg = SynthConfig(n_patches=20_000, n_classes=8, padding_frac=0.2, seed=6)
        path = tmp_path / "p.msal"
        generate_pool(cfg, path)
        data = read_pool_arrays(path)
        empty = data.gt_counts.sum(axis=1) == 0
        assert 0.1 < empty.mean() < 0.3
        assert data.entropy[empty].mean() > data.entropy[~empty].mean() + 0.3
        assert data.bald[empty, 2].mean() < data.bald[~empty, 2].mean()

    def test_target_prevalence_default(self):
        prev = prevalences(SynthConfig(n_classes=16, imbalance=1.0, prevalence_scale=0.8))
        assert prev[15] == pytest.approx(0.05)

    def test_sidecar_written_and_loadable(self, tmp_path):
        cfg = SynthConfig(n_patches=500, n_classes=4, seed=7)
        path = tmp_path / "p.msal"
        _, model = generate_pool(cfg, path)
        loaded = load_iou_model(path)
        assert loaded is not None
        np.testing.assert_allclose(loaded.k, model.k)
        assert loaded.h_min == model.h_min

    def test_small_object_classes_get_few_pixels(self, tmp_path):
        cfg = SynthConfig(n_patches=20_000, n_classes=8, small_classes=(7,),
                          small_class_weight=0.05, seed=8)
        path = tmp_path / "p.msal"
        generate_pool(cfg, path)
        data = read_pool_arrays(path)
        has7 = data.gt_counts[:, 7] > 0
        multi = has7 & ((data.gt_counts > 0).sum(axis=1) > 1)
        share = data.gt_counts[multi, 7] / data.gt_counts[multi].sum(axis=1)
        assert share.mean() < 0.12  # a small object, not an even split

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SynthConfig(flip_prob=0.6).validate()
        with pytest.raises(ConfigError):
            SynthConfig(n_classes=1).validate()
        with pytest.raises(ConfigError):
            SynthConfig(cooccurrence=((0, 0, 0.5),)).validate()
        with pytest.raises(ConfigError):
            SynthConfig(small_classes=(9,), n_classes=4).validate()


class TestIouModel:
    def model(self, k=(0.1, 0.2), h_min=1e4):
        return IouModel(k=np.array(k), h_min=h_min)

    def test_all_zero_histogram(self):
        assert simulated_mean_iou(np.zeros(2), self.model()) == 0.0

    def test_log_additivity_with_equal_k(self):
        model = IouModel(k=np.full(4, 0.15), h_min=1e4)
        h = np.array([1e5, 2e5, 3e6, 5e5])
        base = simulated_mean_iou(h, model)
        doubled = simulated_mean_iou(2 * h, model)
        assert doubled - base == pytest.approx(0.15 * np.log10(2), abs=1e-12)

    def test_hand_example(self):
        # (0.1 * 1 + 0.2 * 2) / 2 = 0.25
        assert simulated_mean_iou(np.array([1e5, 1e6]), self.model()) == pytest.approx(0.25)

    def test_below_threshold_contributes_nothing(self):
        assert simulated_mean_iou(np.array([5000, 0]), self.model()) == 0.0

    def test_monotone_under_labelling(self):
        rng = np.random.default_rng(0)
        model = IouModel(k=rng.uniform(0, 0.25, 6), h_min=1e4)
        h = rng.integers(0, 10**6, 6).astype(np.uint64)
        for _ in range(100):
            add = rng.integers(0, 5000, 6).astype(np.uint64)
            before = simulated_mean_iou(h, model)
            h = h + add
            assert simulated_mean_iou(h, model) >= before

    def test_saturation_cap(self):
        model = IouModel(k=np.array([1.0]), h_min=10.0, saturation=2.0)
        assert model.mean_iou(np.array([10.0 ** 9])) == pytest.approx(2.0)


class TestDeltaIou:
    def test_no_target_pixels_no_reward(self):
        model = IouModel(k=np.array([0.1, 0.2]), h_min=1e4)
        h = np.array([5e5, 3e5])
        assert delta_iou_reward(h, h, 1, model) == 0.0

    def test_crossing_threshold_is_positive(self):
        model = IouModel(k=np.array([0.1, 0.2]), h_min=1e4)
        before = np.array([0, 9000])
        after = np.array([0, 20000])
        assert delta_iou_reward(before, after, 1, model) > 0.0

    def test_matches_direct_difference(self):
        rng = np.random.default_rng(1)
        model = IouModel(k=rng.uniform(0, 0.25, 5), h_min=1e4)
        for _ in range(200):
            before = rng.integers(0, 10**6, 5)
            after = before + rng.integers(0, 10**5, 5)
            got = delta_iou_reward(before, after, 2, model)
            oracle = model.class_iou(2, after) - model.class_iou(2, before)
            assert got == pytest.approx(oracle, abs=1e-12)

    def test_shrinking_histogram_rejected(self):
        model = IouModel(k=np.array([0.1]), h_min=1e4)
        with pytest.raises(ValidationError):
            delta_iou_reward(np.array([10.0]), np.array([5.0]), 0, model)


class TestThoughtExperiment:
    def equal_model(self, c=16):
        return IouModel(k=np.full(c, 0.15), h_min=1e4)

    def dist(self, c, rho):
        d = np.arange(1, c + 1, dtype=np.float64) ** (-rho)
        return d / d.sum()

    def test_balanced_distribution_small_gap(self):
        model = self.equal_model()
        uniform, random_ = thought_experiment(model, self.dist(16, 0.0), steps=200)
        gap = uniform[-1] - random_[-1]
        assert abs(gap) < 0.05 * uniform[-1]

    def test_uniform_dominates_under_imbalance(self):
        model = self.equal_model()
        uniform, random_ = thought_experiment(model, self.dist(16, 1.5), steps=200)
        warm = 20
        assert (uniform[warm:] > random_[warm:]).all()

    def test_gap_grows_with_imbalance(self):
        model = self.equal_model()
        gaps = []
        for rho in (0.0, 0.5, 1.0, 1.5):
            uniform, random_ = thought_experiment(model, self.dist(16, rho), steps=200)
            gaps.append(uniform[-1] - random_[-1])
        assert all(b > a for a, b in zip(gaps, gaps[1:]))

    def test_single_class_degenerate(self):
        model = IouModel(k=np.array([0.2, 0.2]), h_min=1e4)
        uniform, random_ = thought_experiment(model, np.array([0.5, 0.5]), steps=50)
        np.testing.assert_allclose(uniform, random_)

    def test_unequal_k_rejected(self):
        model = IouModel(k=np.array([0.1, 0.3]), h_min=1e4)
        with pytest.raises(ValidationError):
            thought_experiment(model, np.array([0.5, 0.5]), steps=10)


@pytest.mark.slow
def test_paper_scale_shape(tmp_path):
    cfg = SynthConfig(n_patches=640_000, n_classes=171, seed=0)
    path = tmp_path / "big.msal"
    header, _ = generate_pool(cfg, path)
    assert header.n_patches == 640_000
    assert header.n_classes == 171
    data = read_pool_arrays(path)
    assert data.gt_counts.shape == (640_000, 171)

import numpy as np
import pytest
from scipy import stats

from flightmaint.augment import (
    AugmentationPolicy,
    apply_pipeline,
    draw_channels,
    draw_gates,
    draw_segment_length,
    sample_rng,
    temporal_cutmix,
    temporal_cutout,
    temporal_mixup,
)
from flightmaint.errors import ConfigError, ShapeError

TRIALS = 10_000


def _full_segment_policy(length: int, **kwargs: float) -> AugmentationPolicy:
    return AugmentationPolicy(seg_min=length, seg_max=length, **kwargs)


class TestTemporalCutout:
    def test_zeroes_one_block(self) -> None:
        x = np.arange(600 * 23, dtype=np.float64).reshape(600, 23) + 1.0

        out = temporal_cutout(x, AugmentationPolicy(), np.random.default_rng(0))

        rows, cols = np.nonzero(out == 0)
        changed = out != x
        assert np.array_equal(changed, out == 0)
        if rows.size:
            block = np.zeros_like(changed)
            block[rows.min() : rows.max() + 1][:, np.unique(cols)] = True
            assert np.array_equal(changed, block)
            assert 64 <= rows.max() - rows.min() + 1 <= 512

    def test_does_not_modify_input(self) -> None:
        x = np.ones((100, 23))

        temporal_cutout(x, _full_segment_policy(100, p_channel_cut=1.0), np.random.default_rng(0))

        np.testing.assert_array_equal(x, 1.0)

    def test_segment_is_clipped_to_sequence(self) -> None:
        out = temporal_cutout(np.ones((32, 23)), AugmentationPolicy(p_channel_cut=1.0), np.random.default_rng(0))

        np.testing.assert_array_equal(out, 0.0)

    def test_channel_rate(self) -> None:
        policy = _full_segment_policy(8)
        rng = np.random.default_rng(1)

        cut = [temporal_cutout(np.ones((8, 23)), policy, rng)[0] == 0 for _ in range(TRIALS)]

        assert np.mean(cut) == pytest.approx(0.3, abs=0.005)


class TestTemporalCutmix:
    def test_block_comes_from_donor(self) -> None:
        rng = np.random.default_rng(3)
        x = np.zeros((700, 23))
        donor = np.arange(700, dtype=np.float64)[:, None] + np.arange(23) * 1000.0 + 1.0

        out = temporal_cutmix(x, donor, AugmentationPolicy(p_channel_cut=1.0), rng)

        rows = np.nonzero(out[:, 0])[0]
        length = rows.size
        assert 64 <= length <= 512
        assert np.array_equal(rows, np.arange(rows[0], rows[0] + length))
        donor_start = int(out[rows[0], 0]) - 1
        np.testing.assert_array_equal(out[rows], donor[donor_start : donor_start + length])

    def test_shape_mismatch(self) -> None:
        with pytest.raises(ShapeError, match="Donor shape"):
            temporal_cutmix(np.ones((10, 23)), np.ones((9, 23)), AugmentationPolicy(), np.random.default_rng(0))


class TestTemporalMixup:
    def test_blends_selected_channels(self) -> None:
        x = np.ones((50, 23))
        donor = np.zeros((50, 23))

        out = temporal_mixup(x, donor, AugmentationPolicy(p_channel_mix=1.0), np.random.default_rng(0))

        m = out[0, 0]
        assert 0.6 <= m <= 0.9
        np.testing.assert_allclose(out, m)

    def test_mixing_weight_is_uniform(self) -> None:
        policy = AugmentationPolicy(p_channel_mix=1.0)
        rng = np.random.default_rng(4)

        weights = [temporal_mixup(np.ones((1, 23)), np.zeros((1, 23)), policy, rng)[0, 0] for _ in range(TRIALS)]

        assert min(weights) >= 0.6
        assert max(weights) <= 0.9
        assert stats.kstest(weights, stats.uniform(loc=0.6, scale=0.3).cdf).pvalue > 1e-4

    def test_channel_rate(self) -> None:
        policy = AugmentationPolicy()
        rng = np.random.default_rng(5)

        mixed = [temporal_mixup(np.ones((1, 23)), np.zeros((1, 23)), policy, rng)[0] < 1 for _ in range(TRIALS)]

        assert np.mean(mixed) == pytest.approx(0.4, abs=0.005)


class TestSegmentLength:
    def test_is_uniform_over_policy_range(self) -> None:
        policy = AugmentationPolicy()
        rng = np.random.default_rng(6)

        lengths = np.array([draw_segment_length(rng, policy, 4096) for _ in range(45_000)])
        observed = np.bincount(lengths - 64, minlength=449)

        assert lengths.min() >= 64
        assert lengths.max() <= 512
        assert observed.size == 449
        assert stats.chisquare(observed).pvalue > 1e-4


class TestApplyPipeline:
    def test_channel_draws_are_masks(self) -> None:
        channels = draw_channels(np.random.default_rng(0), 23, 0.5)

        assert channels.dtype == np.bool_
        assert channels.shape == (23,)

    def test_gate_rate(self) -> None:
        rng = np.random.default_rng(7)

        gates = np.array([draw_gates(rng, AugmentationPolicy()) for _ in range(TRIALS)])

        assert gates.dtype == np.bool_
        np.testing.assert_allclose(gates.mean(axis=0), 0.4, atol=0.02)
        assert abs(np.corrcoef(gates[:, 0], gates[:, 1])[0, 1]) < 0.05

    def test_fires_each_augmentation_at_policy_rate(self) -> None:
        policy = AugmentationPolicy()
        x = np.ones((600, 23))
        donors = 0

        def donor_sampler(rng: np.random.Generator) -> np.ndarray:
            nonlocal donors
            donors += 1
            return np.full((600, 23), 2.0)

        unchanged = sum(
            np.array_equal(apply_pipeline(x, donor_sampler, policy, sample_rng(0, f"f{i}", 0)), x)
            for i in range(TRIALS)
        )

        assert donors / TRIALS == pytest.approx(0.8, abs=0.04)
        assert unchanged / TRIALS >= 0.6**3 - 0.02

    def test_no_gate_returns_copy(self) -> None:
        x = np.ones((100, 23))

        out = apply_pipeline(
            x, lambda rng: pytest.fail("donor drawn"), AugmentationPolicy(p_apply=0.0), np.random.default_rng(0)
        )

        assert out is not x
        np.testing.assert_array_equal(out, x)

    def test_is_a_pure_function_of_the_key(self) -> None:
        x = np.random.default_rng(0).standard_normal((600, 23))
        donor = np.random.default_rng(1).standard_normal((600, 23))
        policy = AugmentationPolicy(p_apply=1.0)

        first = apply_pipeline(x, lambda rng: donor, policy, sample_rng(42, "flight-a", 3))
        second = apply_pipeline(x, lambda rng: donor, policy, sample_rng(42, "flight-a", 3))
        other_epoch = apply_pipeline(x, lambda rng: donor, policy, sample_rng(42, "flight-a", 4))

        assert first.tobytes() == second.tobytes()
        assert first.tobytes() != other_epoch.tobytes()


class TestAugmentationPolicy:
    @pytest.mark.parametrize(
        ("kwargs", "match"),
        [
            pytest.param({"p_apply": 1.5}, "augment.p_apply", id="probability"),
            pytest.param({"seg_min": 600}, "augment.seg_min", id="segment_range"),
            pytest.param({"m_min": 0.95}, "augment.m_min", id="mix_range"),
        ],
    )
    def test_rejects_invalid_values(self, kwargs: dict[str, float], match: str) -> None:
        with pytest.raises(ConfigError, match=match):
            AugmentationPolicy(**kwargs)

    def test_rejects_non_matrix_input(self) -> None:
        with pytest.raises(ShapeError, match="L×C matrix"):
            temporal_cutout(np.ones(10), AugmentationPolicy(), np.random.default_rng(0))

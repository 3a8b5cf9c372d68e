import numpy as np
import pytest

from flightmaint.constants import CHANNEL_COUNT
from flightmaint.dataset import window
from flightmaint.errors import ShapeError
from flightmaint.normalization import (
    NormalizationStats,
    apply_normalization,
    fit_normalization,
    invert_normalization,
)


def _flights(seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [rng.normal(loc=5.0, scale=2.0, size=(steps, CHANNEL_COUNT)) for steps in (7, 30, 1, 12)]


class TestFitNormalization:
    def test_matches_pooled_statistics(self) -> None:
        flights = _flights()
        pooled = np.concatenate(flights)

        stats = fit_normalization((f, 0) for f in flights)

        np.testing.assert_allclose(stats.mean, pooled.mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(stats.std, pooled.std(axis=0), rtol=1e-10)

    def test_ignores_padded_rows(self) -> None:
        flights = _flights()
        windows = [window(f, 16) for f in flights]

        stats = fit_normalization(windows)

        np.testing.assert_allclose(stats.mean, np.concatenate([f[-16:] for f in flights]).mean(axis=0), rtol=1e-12)

    def test_constant_channel_is_clamped(self) -> None:
        values = np.ones((5, CHANNEL_COUNT))

        stats = fit_normalization([(values, 0)])

        np.testing.assert_array_equal(stats.std, np.full(CHANNEL_COUNT, 1e-6))

    def test_empty_input(self) -> None:
        with pytest.raises(ValueError, match="empty input"):
            fit_normalization([(np.zeros((4, CHANNEL_COUNT)), 4)])


class TestApplyNormalization:
    def test_training_rows_have_zero_mean_unit_std(self) -> None:
        flights = _flights()
        stats = fit_normalization((f, 0) for f in flights)

        normalized = np.concatenate([apply_normalization(f, stats) for f in flights])

        np.testing.assert_allclose(normalized.mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(normalized.std(axis=0), 1.0, rtol=1e-10)

    def test_inverse_recovers_input(self) -> None:
        flight = _flights()[1]
        stats = fit_normalization([(flight, 0)])

        restored = invert_normalization(apply_normalization(flight, stats), stats)

        np.testing.assert_allclose(restored, flight, rtol=1e-12)

    def test_keeps_float32(self) -> None:
        stats = fit_normalization((f, 0) for f in _flights())

        out = apply_normalization(np.ones((3, CHANNEL_COUNT), dtype=np.float32), stats)

        assert out.dtype == np.float32

    def test_pad_mask_keeps_padding_zero(self) -> None:
        stats = fit_normalization((f, 0) for f in _flights())
        batch = np.stack([window(np.ones((2, CHANNEL_COUNT)), 5).values, window(np.ones((5, CHANNEL_COUNT)), 5).values])

        out = apply_normalization(batch, stats, pad_count=np.array([3, 0]))

        np.testing.assert_array_equal(out[0, :3], 0.0)
        assert np.all(out[0, 3:] != 0.0)
        assert np.all(out[1] != 0.0)

    def test_channel_mismatch(self) -> None:
        stats = fit_normalization((f, 0) for f in _flights())

        with pytest.raises(ShapeError, match="Expected 23 channels, got 4"):
            apply_normalization(np.zeros((3, 4)), stats)


class TestNormalizationStats:
    def test_dict_round_trip(self) -> None:
        stats = fit_normalization((f, 0) for f in _flights())

        restored = NormalizationStats.from_dict(stats.to_dict())

        np.testing.assert_array_equal(restored.mean, stats.mean)
        np.testing.assert_array_equal(restored.std, stats.std)

    def test_rejects_tiny_std(self) -> None:
        with pytest.raises(ValueError, match="at least"):
            NormalizationStats(mean=np.zeros(CHANNEL_COUNT), std=np.zeros(CHANNEL_COUNT))

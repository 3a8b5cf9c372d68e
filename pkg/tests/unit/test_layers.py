import numpy as np
import pytest

from flightmaint.errors import ShapeError
from flightmaint.gradcheck import grad_check
from flightmaint.kernels import CellKind
from flightmaint.layers import Conv1D, EncoderLayer, Recurrent, TransposedConv1D, sinusoidal_positions
from flightmaint.tensor import Tensor, precision


class TestLayerParameters:
    def test_collects_nested_layers(self) -> None:
        layer = EncoderLayer("enc", 8, 2, 16, np.random.default_rng(0))

        names = [p.name for p in layer.parameters()]

        assert len(names) == 16
        assert len(set(names)) == 16
        assert "enc.ffn_norm.gain" in names

    def test_recurrent_parameter_count(self) -> None:
        layer = Recurrent("lstm", CellKind.LSTM, 3, 2, np.random.default_rng(0))

        total = sum(p.size for p in layer.parameters())

        assert total == 2 * (3 * 8 + 2 * 8 + 8)
        assert layer.output_dim == 4

    def test_recurrent_rejects_zero_units(self) -> None:
        with pytest.raises(ShapeError, match="units must be positive"):
            Recurrent("gru", CellKind.GRU, 3, 0, np.random.default_rng(0))


class TestConvolutionLayers:
    def test_strided_conv_halves_length(self) -> None:
        conv = Conv1D("conv", 3, 5, 4, 2, np.random.default_rng(0))

        out = conv(Tensor(np.ones((2, 10, 3))))

        assert out.shape == (2, 5, 5)

    def test_transposed_conv_doubles_length(self) -> None:
        up = TransposedConv1D("up", 5, 3, 4, 2, np.random.default_rng(0))

        out = up(Tensor(np.ones((2, 5, 5))))

        assert out.shape == (2, 10, 3)
        assert up.kernel.shape == (4, 3, 5)


class TestEncoderLayer:
    def test_attention_rows_are_distributions(self) -> None:
        layer = EncoderLayer("enc", 8, 2, 16, np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).standard_normal((3, 6, 8)))

        out, attention = layer(x)

        assert out.shape == (3, 6, 8)
        assert attention.shape == (3, 2, 6, 6)
        np.testing.assert_allclose(attention.data.sum(axis=-1), 1.0, rtol=1e-5)
        assert np.all(attention.data >= 0)

    def test_single_head_matches_hand_computation(self) -> None:
        with precision(np.float64):
            layer = EncoderLayer("enc", 3, 1, 2, np.random.default_rng(0))
            for dense in (layer.query, layer.key, layer.value, layer.output):
                dense.kernel.data[...] = np.eye(3)
            layer.ffn_in.kernel.data[...] = 0.0
            layer.ffn_out.kernel.data[...] = 0.0
            x = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 1.0]])

            out, attention = layer(Tensor(x[None]))

        # Scores x @ x.T / sqrt(3): [[1, 0], [0, 5]] / sqrt(3).
        a, b = np.exp(1 / np.sqrt(3)), np.exp(5 / np.sqrt(3))
        weights = np.array([[a / (a + 1), 1 / (a + 1)], [1 / (1 + b), b / (1 + b)]])

        def norm(v: np.ndarray) -> np.ndarray:
            centred = v - v.mean(axis=-1, keepdims=True)
            return centred / np.sqrt((centred**2).mean(axis=-1, keepdims=True) + 1e-6)

        np.testing.assert_allclose(attention.data[0, 0], weights, rtol=1e-12)
        np.testing.assert_allclose(out.data[0], norm(norm(x + weights @ x)), rtol=1e-9, atol=1e-12)

    def test_output_is_layer_normalized(self) -> None:
        layer = EncoderLayer("enc", 8, 2, 16, np.random.default_rng(0))

        out, _ = layer(Tensor(np.random.default_rng(1).standard_normal((2, 4, 8))))

        np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-5)

    def test_gradients_match_finite_differences(self) -> None:
        with precision(np.float64):
            layer = EncoderLayer("enc", 4, 2, 6, np.random.default_rng(0))
        x = np.random.default_rng(1).standard_normal((2, 3, 4))

        report = grad_check(lambda t: layer(t[0])[0], [x])

        assert report.passed, report

    def test_dropout_only_with_generator(self) -> None:
        layer = EncoderLayer("enc", 8, 2, 16, np.random.default_rng(0), dropout_rate=0.5)
        x = Tensor(np.random.default_rng(1).standard_normal((1, 5, 8)))

        deterministic = [layer(x)[0].data for _ in range(2)]
        sampled = layer(x, np.random.default_rng(2))[0].data

        np.testing.assert_array_equal(deterministic[0], deterministic[1])
        assert not np.allclose(sampled, deterministic[0])

    def test_rejects_indivisible_width(self) -> None:
        with pytest.raises(ShapeError, match="not divisible by 3 heads"):
            EncoderLayer("enc", 8, 3, 16, np.random.default_rng(0))

    def test_rejects_wrong_input_width(self) -> None:
        layer = EncoderLayer("enc", 8, 2, 16, np.random.default_rng(0))

        with pytest.raises(ShapeError, match="expects width 8, got 6"):
            layer(Tensor(np.ones((1, 4, 6))))


class TestSinusoidalPositions:
    def test_first_row_alternates_zero_and_one(self) -> None:
        table = sinusoidal_positions(10, 6)

        np.testing.assert_allclose(table[0], [0, 1, 0, 1, 0, 1], atol=1e-15)

    def test_first_pair_is_plain_sine_and_cosine(self) -> None:
        table = sinusoidal_positions(50, 8)

        np.testing.assert_allclose(table[:, 0], np.sin(np.arange(50)))
        np.testing.assert_allclose(table[:, 1], np.cos(np.arange(50)))

    def test_rows_are_distinct(self) -> None:
        table = sinusoidal_positions(128, 16)

        assert len({row.tobytes() for row in table}) == 128

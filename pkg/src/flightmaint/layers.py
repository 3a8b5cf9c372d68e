import math

import numpy as np

from flightmaint.errors import ShapeError
from flightmaint.kernels import (
    CellKind,
    RecurrentWeights,
    conv1d,
    dense,
    dropout,
    layer_norm,
    recurrent_layer,
    softmax,
    transposed_conv1d,
)
from flightmaint.tensor import InitSpec, Parameter, Tensor
from flightmaint.utils import FloatArray


class Layer:
    """Holds named parameters; sub-layers are discovered through instance attributes."""

    def parameters(self) -> list[Parameter]:
        found: list[Parameter] = []
        for value in vars(self).values():
            items = value if isinstance(value, (list, tuple)) else (value,)
            for item in items:
                if isinstance(item, Parameter):
                    found.append(item)
                elif isinstance(item, Layer):
                    found.extend(item.parameters())
        return found


class Dense(Layer):
    def __init__(self, name: str, in_dim: int, out_dim: int, rng: np.random.Generator) -> None:
        self.kernel = Parameter.create(f"{name}.kernel", (in_dim, out_dim), InitSpec.UNIFORM_FAN_IN, rng)
        self.bias = Parameter.create(f"{name}.bias", (out_dim,), InitSpec.ZEROS, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return dense(x, self.kernel, self.bias)


class Conv1D(Layer):
    def __init__(
        self, name: str, in_channels: int, out_channels: int, kernel: int, stride: int, rng: np.random.Generator
    ) -> None:
        self.stride = stride
        self.kernel = Parameter.create(
            f"{name}.kernel", (kernel, in_channels, out_channels), InitSpec.UNIFORM_FAN_IN, rng
        )
        self.bias = Parameter.create(f"{name}.bias", (out_channels,), InitSpec.ZEROS, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return conv1d(x, self.kernel, self.bias, self.stride)


class TransposedConv1D(Layer):
    """Upsampling layer; its kernel is stored as K×Cout×Cin, the layout of the matching Conv1D."""

    def __init__(
        self, name: str, in_channels: int, out_channels: int, kernel: int, stride: int, rng: np.random.Generator
    ) -> None:
        self.stride = stride
        self.kernel = Parameter.create(
            f"{name}.kernel",
            (kernel, out_channels, in_channels),
            InitSpec.UNIFORM_FAN_IN,
            rng,
            fan_in=kernel * in_channels,
        )
        self.bias = Parameter.create(f"{name}.bias", (out_channels,), InitSpec.ZEROS, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return transposed_conv1d(x, self.kernel, self.bias, self.stride)


class LayerNorm(Layer):
    def __init__(self, name: str, dim: int, rng: np.random.Generator) -> None:
        self.gain = Parameter.create(f"{name}.gain", (dim,), InitSpec.ONES, rng)
        self.shift = Parameter.create(f"{name}.shift", (dim,), InitSpec.ZEROS, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.shift)


class Recurrent(Layer):
    """LSTM or GRU layer returning the full sequence; `units` is the per-direction hidden size."""

    def __init__(
        self,
        name: str,
        cell: CellKind,
        input_dim: int,
        units: int,
        rng: np.random.Generator,
        *,
        bidirectional: bool = True,
    ) -> None:
        if units < 1:
            raise ShapeError(f"{name}: units must be positive, got {units}")
        self.cell = cell
        self.units = units
        width = cell.gate_count * units
        self.directions: list[RecurrentWeights] = []
        for direction in ("forward", "backward")[: 2 if bidirectional else 1]:
            prefix = f"{name}.{direction}"
            self.directions.append(
                RecurrentWeights(
                    w_ih=Parameter.create(f"{prefix}.w_ih", (input_dim, width), InitSpec.UNIFORM_FAN_IN, rng),
                    w_hh=Parameter.create(f"{prefix}.w_hh", (units, width), InitSpec.UNIFORM_FAN_IN, rng),
                    bias=Parameter.create(f"{prefix}.bias", (width,), InitSpec.ZEROS, rng),
                )
            )

    @property
    def output_dim(self) -> int:
        return self.units * len(self.directions)

    def parameters(self) -> list[Parameter]:
        return [p for weights in self.directions for p in weights if isinstance(p, Parameter)]

    def __call__(self, x: Tensor) -> Tensor:
        return recurrent_layer(x, self.cell, self.directions)


class EncoderLayer(Layer):
    """Post-norm multi-head self-attention block followed by a two-layer ReLU feed-forward network."""

    def __init__(
        self, name: str, dim: int, heads: int, ffn_dim: int, rng: np.random.Generator, *, dropout_rate: float = 0.0
    ) -> None:
        if heads < 1 or dim % heads:
            raise ShapeError(f"{name}: model width {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.dropout_rate = dropout_rate
        self.query = Dense(f"{name}.query", dim, dim, rng)
        self.key = Dense(f"{name}.key", dim, dim, rng)
        self.value = Dense(f"{name}.value", dim, dim, rng)
        self.output = Dense(f"{name}.output", dim, dim, rng)
        self.attention_norm = LayerNorm(f"{name}.attention_norm", dim, rng)
        self.ffn_in = Dense(f"{name}.ffn_in", dim, ffn_dim, rng)
        self.ffn_out = Dense(f"{name}.ffn_out", ffn_dim, dim, rng)
        self.ffn_norm = LayerNorm(f"{name}.ffn_norm", dim, rng)

    def _split(self, x: Tensor) -> Tensor:
        B, S, _ = x.shape
        return x.reshape(B, S, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """Apply the block to a B×S×D sequence.

        Args:
            x: Input sequence.
            rng: Training generator enabling dropout; None disables it.

        Returns:
            The B×S×D output and the B×H×S×S attention weights (rows are queries).

        Raises:
            ShapeError: If the input width does not match the layer.
        """
        B, S, D = x.shape
        if D != self.heads * self.head_dim:
            raise ShapeError(f"Encoder layer expects width {self.heads * self.head_dim}, got {D}")
        q, k, v = self._split(self.query(x)), self._split(self.key(x)), self._split(self.value(x))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.head_dim))
        attention = softmax(scores, axis=-1)
        context = dropout(attention, self.dropout_rate, rng) @ v
        merged = context.transpose(0, 2, 1, 3).reshape(B, S, D)
        y = self.attention_norm(x + self.output(merged))
        hidden = dropout(self.ffn_in(y).relu(), self.dropout_rate, rng)
        return self.ffn_norm(y + self.ffn_out(hidden)), attention


def sinusoidal_positions(length: int, dim: int) -> FloatArray:
    """Fixed sin/cos position table of shape length×dim (even columns sin, odd columns cos)."""
    positions = np.arange(length, dtype=np.float64)[:, None]
    rates = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2, dtype=np.float64) / dim))
    table = np.zeros((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates[: dim // 2])
    return table

import abc
import logging
import math
import sys
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, NamedTuple, TypeAlias

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np
import pandas as pd
import tomli_w

from flightmaint.checkpoint import load_checkpoint, save_checkpoint
from flightmaint.constants import (
    ATTENTION_INDEX_NAME,
    CHANNEL_COUNT,
    CHECKPOINT_NAME,
    DEFAULT_WINDOW_LENGTH,
    MODEL_SIDECAR_NAME,
    SHORT_SLICE_LENGTH,
)
from flightmaint.errors import CheckpointError, ConfigError, ShapeError
from flightmaint.kernels import CellKind, global_avg_pool, softmax
from flightmaint.layers import Conv1D, Dense, EncoderLayer, Layer, Recurrent, TransposedConv1D, sinusoidal_positions
from flightmaint.losses import per_sample_mse
from flightmaint.normalization import NormalizationStats
from flightmaint.tensor import Parameter, Tensor, default_dtype, no_grad
from flightmaint.utils import ChoiceEnum, FloatArray, IntArray

logger = logging.getLogger(__name__)


class ModelKind(ChoiceEnum):
    CONV_MHSA = "conv-mhsa"
    CONV_LSTM = "conv-lstm"
    EX_CONV_LSTM = "ex-conv-lstm"
    SHORT_LSTM = "short-lstm"
    VAE_CONV_GRU = "vae-conv-gru"

    @property
    def is_classifier(self) -> bool:
        return self is not ModelKind.VAE_CONV_GRU


@dataclass(kw_only=True, frozen=True)
class ConvLayerSpec:
    kernel: int
    stride: int
    out_channels: int

    def __post_init__(self) -> None:
        if min(self.kernel, self.stride, self.out_channels) < 1:
            raise ConfigError(f"Convolution kernel, stride and channels must be positive, got {self}")


def _specs(*triples: tuple[int, int, int]) -> tuple[ConvLayerSpec, ...]:
    return tuple(ConvLayerSpec(kernel=k, stride=s, out_channels=c) for k, s, c in triples)


def _reduction(layers: Sequence[ConvLayerSpec]) -> int:
    return math.prod(layer.stride for layer in layers)


@dataclass(kw_only=True, frozen=True)
class ConvStackConfig:
    """Strided convolutions with ReLU that shorten the time axis by the product of their strides."""

    layers: tuple[ConvLayerSpec, ...] = _specs((4, 2, 256), (4, 2, 512), (4, 2, 512))

    @property
    def reduction(self) -> int:
        return _reduction(self.layers)

    @property
    def out_channels(self) -> int:
        return self.layers[-1].out_channels if self.layers else CHANNEL_COUNT


def _check_positive(config: Any, *names: str) -> None:
    for name in names:
        value = getattr(config, name)
        if value < 1:
            raise ConfigError(f"model.{name} must be a positive integer, got {value}")


def _check_reduction(input_length: int, reduction: int) -> None:
    if input_length < 1 or input_length % reduction:
        raise ConfigError(
            f"model.input_length {input_length} must be a positive multiple of the stride product {reduction}"
        )


@dataclass(kw_only=True, frozen=True)
class ConvMHSAConfig:
    input_length: int = DEFAULT_WINDOW_LENGTH
    conv_stack: ConvStackConfig = field(default_factory=ConvStackConfig)
    encoder_layers: int = 4
    heads: int = 8
    head_dim: int = 64
    ffn_dim: int = 512
    positional: bool = True
    dropout: float = 0.0

    def __post_init__(self) -> None:
        _check_positive(self, "encoder_layers", "heads", "head_dim", "ffn_dim")
        _check_reduction(self.input_length, self.conv_stack.reduction)
        if self.conv_stack.out_channels != self.model_dim:
            raise ConfigError(
                f"Conv stack width {self.conv_stack.out_channels} must equal heads × head_dim = {self.model_dim}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"model.dropout must lie in [0, 1), got {self.dropout}")

    @property
    def kind(self) -> ModelKind:
        return ModelKind.CONV_MHSA

    @property
    def model_dim(self) -> int:
        return self.heads * self.head_dim


@dataclass(kw_only=True, frozen=True)
class ConvLSTMConfig:
    """Conv stack, optional extra convolutions (the extended variant), stacked bidirectional LSTMs."""

    input_length: int = DEFAULT_WINDOW_LENGTH
    conv_stack: ConvStackConfig = field(default_factory=ConvStackConfig)
    extra_convs: tuple[ConvLayerSpec, ...] = ()
    lstm_layers: int = 4
    units: int = 512

    def __post_init__(self) -> None:
        _check_positive(self, "lstm_layers", "units")
        _check_reduction(self.input_length, self.conv_stack.reduction * _reduction(self.extra_convs))

    @property
    def kind(self) -> ModelKind:
        return ModelKind.EX_CONV_LSTM if self.extra_convs else ModelKind.CONV_LSTM


@dataclass(kw_only=True, frozen=True)
class ShortLSTMConfig:
    """Stacked bidirectional LSTMs reading a 128-step slice of the window."""

    input_length: int = DEFAULT_WINDOW_LENGTH
    lstm_layers: int = 4
    units: int = 512

    def __post_init__(self) -> None:
        _check_positive(self, "lstm_layers", "units")
        if self.input_length < SHORT_SLICE_LENGTH:
            raise ConfigError(f"model.input_length must be at least {SHORT_SLICE_LENGTH}, got {self.input_length}")

    @property
    def kind(self) -> ModelKind:
        return ModelKind.SHORT_LSTM

    @property
    def slice_length(self) -> int:
        return SHORT_SLICE_LENGTH


@dataclass(kw_only=True, frozen=True)
class VAEConvGRUConfig:
    """Convolutional GRU autoencoder with a per-dimension Gaussian-mixture latent."""

    input_length: int = DEFAULT_WINDOW_LENGTH
    encoder_convs: tuple[ConvLayerSpec, ...] = _specs((4, 2, 64), (4, 2, 128), (4, 2, 256), (4, 2, 256))
    encoder_gru_units: int = 256
    bridge_conv: ConvLayerSpec = ConvLayerSpec(kernel=4, stride=2, out_channels=512)
    summary_gru_units: int = 512
    bottleneck: int = 512
    latent_dim: int = 512
    components: int = 8
    decoder_width: int = 512
    decoder_gru_units: int = 512
    upsample: ConvLayerSpec = ConvLayerSpec(kernel=4, stride=2, out_channels=512)
    upsample_gru_units: int = 256
    decoder_convs: tuple[ConvLayerSpec, ...] = _specs((4, 2, 256), (4, 2, 128), (4, 2, 64), (4, 2, CHANNEL_COUNT))

    def __post_init__(self) -> None:
        _check_positive(
            self,
            "encoder_gru_units",
            "summary_gru_units",
            "bottleneck",
            "latent_dim",
            "components",
            "decoder_width",
            "decoder_gru_units",
            "upsample_gru_units",
        )
        _check_reduction(self.input_length, self.reduction)
        upsampling = self.upsample.stride * _reduction(self.decoder_convs)
        if upsampling != self.reduction:
            raise ConfigError(f"Decoder upsamples by {upsampling} but the encoder reduces by {self.reduction}")
        if not self.decoder_convs or self.decoder_convs[-1].out_channels != CHANNEL_COUNT:
            raise ConfigError(f"The last decoder convolution must emit {CHANNEL_COUNT} channels")

    @property
    def kind(self) -> ModelKind:
        return ModelKind.VAE_CONV_GRU

    @property
    def reduction(self) -> int:
        return _reduction(self.encoder_convs) * self.bridge_conv.stride

    @property
    def decoder_length(self) -> int:
        return self.input_length // self.reduction


ModelConfig: TypeAlias = ConvMHSAConfig | ConvLSTMConfig | ShortLSTMConfig | VAEConvGRUConfig

_SMALL_CONVS = ConvStackConfig(layers=_specs((4, 2, 32), (4, 2, 64), (4, 2, 64)))
# 32 tokens per 1024 steps; no position table, the synthetic label ignores where the pulses sit.
_SMALL_MHSA_CONVS = ConvStackConfig(layers=_specs((4, 2, 32), (4, 2, 64), (4, 2, 64), (4, 2, 64), (4, 2, 64)))

# Desk-scale variants used by the synthetic benchmark and the end-to-end tests.
PRESETS: dict[str, ModelConfig] = {
    "conv-mhsa": ConvMHSAConfig(),
    "conv-lstm": ConvLSTMConfig(),
    "ex-conv-lstm": ConvLSTMConfig(extra_convs=_specs((8, 2, 512), (8, 2, 512))),
    "short-lstm": ShortLSTMConfig(),
    "vae-conv-gru": VAEConvGRUConfig(),
    "conv-mhsa-small": ConvMHSAConfig(
        input_length=1024,
        conv_stack=_SMALL_MHSA_CONVS,
        encoder_layers=2,
        heads=4,
        head_dim=16,
        ffn_dim=128,
        positional=False,
    ),
    "conv-lstm-small": ConvLSTMConfig(input_length=1024, conv_stack=_SMALL_CONVS, lstm_layers=2, units=32),
    "ex-conv-lstm-small": ConvLSTMConfig(
        input_length=1024, conv_stack=_SMALL_CONVS, extra_convs=_specs((8, 2, 64), (8, 2, 64)), lstm_layers=2, units=32
    ),
    "short-lstm-small": ShortLSTMConfig(input_length=1024, lstm_layers=2, units=32),
    "vae-conv-gru-small": VAEConvGRUConfig(
        input_length=256,
        encoder_convs=_specs((4, 2, 16), (4, 2, 32)),
        encoder_gru_units=16,
        bridge_conv=ConvLayerSpec(kernel=4, stride=2, out_channels=32),
        summary_gru_units=32,
        bottleneck=32,
        latent_dim=16,
        components=4,
        decoder_width=32,
        decoder_gru_units=32,
        upsample=ConvLayerSpec(kernel=4, stride=2, out_channels=32),
        upsample_gru_units=16,
        decoder_convs=_specs((4, 2, 16), (4, 2, CHANNEL_COUNT)),
    ),
}


def preset(name: str) -> ModelConfig:
    """Look up a named configuration.

    Args:
        name: A model kind, optionally suffixed with `-small`.

    Returns:
        The configuration.

    Raises:
        ConfigError: If the name is unknown.
    """
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise ConfigError(f"Invalid model '{name}'. Must be one of: {', '.join(PRESETS)}") from None


# Scalar fields settable through `model.<name>` configuration keys.
SCALAR_FIELDS: dict[type, tuple[str, ...]] = {
    cls: tuple(f.name for f in fields(cls) if f.type in (int, float, bool))
    for cls in (ConvMHSAConfig, ConvLSTMConfig, ShortLSTMConfig, VAEConvGRUConfig)
}


def override_config(config: ModelConfig, values: Mapping[str, Any]) -> ModelConfig:
    """Replace scalar hyperparameters of a configuration.

    Raises:
        ConfigError: If a key does not apply to this architecture or breaks its invariants.
    """
    allowed = SCALAR_FIELDS[type(config)]
    unknown = sorted(set(values) - set(allowed))
    if unknown:
        raise ConfigError(
            f"model.{unknown[0]} does not apply to {config.kind.value}. Must be one of: {', '.join(allowed)}"
        )
    return replace(config, **values)


def _spec_from(data: Mapping[str, Any]) -> ConvLayerSpec:
    return ConvLayerSpec(kernel=int(data["kernel"]), stride=int(data["stride"]), out_channels=int(data["out_channels"]))


def config_to_dict(config: ModelConfig) -> dict[str, Any]:
    return {"kind": config.kind.value, **asdict(config)}


def config_from_dict(data: Mapping[str, Any]) -> ModelConfig:
    """Rebuild a configuration written by `config_to_dict`.

    Raises:
        ConfigError: If the kind or a field is not recognised.
    """
    values = dict(data)
    try:
        kind = ModelKind.from_string(str(values.pop("kind")))
    except (KeyError, ValueError) as e:
        raise ConfigError(f"Model sidecar has no valid kind: {e}") from None
    cls: type[ModelConfig] = {
        ModelKind.CONV_MHSA: ConvMHSAConfig,
        ModelKind.CONV_LSTM: ConvLSTMConfig,
        ModelKind.EX_CONV_LSTM: ConvLSTMConfig,
        ModelKind.SHORT_LSTM: ShortLSTMConfig,
        ModelKind.VAE_CONV_GRU: VAEConvGRUConfig,
    }[kind]
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"Unknown {kind.value} field '{unknown[0]}'. Must be one of: {', '.join(sorted(known))}")
    for key, value in values.items():
        if key == "conv_stack":
            values[key] = ConvStackConfig(layers=tuple(_spec_from(v) for v in value["layers"]))
        elif isinstance(value, Mapping):
            values[key] = _spec_from(value)
        elif isinstance(value, (list, tuple)):
            values[key] = tuple(_spec_from(v) for v in value)
    return cls(**values)


class ConvStack(Layer):
    def __init__(self, name: str, in_channels: int, layers: Sequence[ConvLayerSpec], rng: np.random.Generator) -> None:
        self.convs: list[Conv1D] = []
        for index, spec in enumerate(layers):
            self.convs.append(Conv1D(f"{name}.{index}", in_channels, spec.out_channels, spec.kernel, spec.stride, rng))
            in_channels = spec.out_channels

    def __call__(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = conv(x).relu()
        return x


class Model(Layer):
    """Built network plus the normalization statistics it was trained with."""

    config: ModelConfig

    def __init__(self) -> None:
        self.normalization: NormalizationStats | None = None

    @property
    def kind(self) -> ModelKind:
        return self.config.kind

    @property
    def input_length(self) -> int:
        return self.config.input_length


class Classifier(Model, abc.ABC):
    @abc.abstractmethod
    def classify(
        self, x: Tensor, *, rng: np.random.Generator | None, pad_counts: IntArray | None
    ) -> tuple[Tensor, list[Tensor]]:
        """Return B probabilities and the per-layer attention maps (empty for recurrent models)."""


class RecurrentStack(Layer):
    def __init__(self, name: str, input_dim: int, layers: int, units: int, rng: np.random.Generator) -> None:
        self.layers: list[Recurrent] = []
        for index in range(layers):
            layer = Recurrent(f"{name}.{index}", CellKind.LSTM, input_dim, units, rng)
            self.layers.append(layer)
            input_dim = layer.output_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].output_dim

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


def _probabilities(head: Dense, sequence: Tensor) -> Tensor:
    logits = head(global_avg_pool(sequence))
    return logits.sigmoid().reshape(sequence.shape[0])


class ConvMHSA(Classifier):
    def __init__(self, config: ConvMHSAConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.config = config
        dim = config.model_dim
        self.conv = ConvStack("conv", CHANNEL_COUNT, config.conv_stack.layers, rng)
        self.encoders = [
            EncoderLayer(f"encoder.{i}", dim, config.heads, config.ffn_dim, rng, dropout_rate=config.dropout)
            for i in range(config.encoder_layers)
        ]
        self.head = Dense("head", dim, 1, rng)

    def classify(
        self, x: Tensor, *, rng: np.random.Generator | None, pad_counts: IntArray | None
    ) -> tuple[Tensor, list[Tensor]]:
        h = self.conv(x)
        if self.config.positional:
            h = h + sinusoidal_positions(h.shape[1], h.shape[2]).astype(h.dtype)
        maps = []
        for encoder in self.encoders:
            h, attention = encoder(h, rng)
            maps.append(attention)
        return _probabilities(self.head, h), maps


class ConvLSTM(Classifier):
    def __init__(self, config: ConvLSTMConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.config = config
        self.conv = ConvStack("conv", CHANNEL_COUNT, config.conv_stack.layers + config.extra_convs, rng)
        width = (config.extra_convs or config.conv_stack.layers)[-1].out_channels
        self.lstm = RecurrentStack("lstm", width, config.lstm_layers, config.units, rng)
        self.head = Dense("head", self.lstm.output_dim, 1, rng)

    def classify(
        self, x: Tensor, *, rng: np.random.Generator | None, pad_counts: IntArray | None
    ) -> tuple[Tensor, list[Tensor]]:
        return _probabilities(self.head, self.lstm(self.conv(x))), []


def slice_starts(
    length: int, slice_length: int, batch: int, *, rng: np.random.Generator | None, pad_counts: IntArray | None
) -> IntArray:
    """Start offsets of the Short-LSTM slices.

    With a generator, each start is uniform over the positions whose slice lies inside the
    non-padded region (or the last slice when that region is too short); without one, every
    sample reads its last `slice_length` rows.
    """
    last = length - slice_length
    if rng is None:
        return np.full(batch, last, dtype=np.int64)
    pads = np.zeros(batch, dtype=np.int64) if pad_counts is None else np.asarray(pad_counts, dtype=np.int64)
    lows = np.minimum(pads, last)
    return rng.integers(lows, last + 1)


class ShortLSTM(Classifier):
    def __init__(self, config: ShortLSTMConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.config = config
        self.lstm = RecurrentStack("lstm", CHANNEL_COUNT, config.lstm_layers, config.units, rng)
        self.head = Dense("head", self.lstm.output_dim, 1, rng)

    def classify(
        self, x: Tensor, *, rng: np.random.Generator | None, pad_counts: IntArray | None
    ) -> tuple[Tensor, list[Tensor]]:
        B, L, _ = x.shape
        width = self.config.slice_length
        starts = slice_starts(L, width, B, rng=rng, pad_counts=pad_counts)
        rows = starts[:, None] + np.arange(width)[None, :]
        sliced = x[np.arange(B)[:, None], rows]
        return _probabilities(self.head, self.lstm(sliced)), []


class VAEOutput(NamedTuple):
    reconstruction: Tensor
    mix_logits: Tensor
    mu: Tensor
    logvar: Tensor


class VAEConvGRU(Model):
    def __init__(self, config: VAEConvGRUConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.config = config
        self.encoder_conv = ConvStack("encoder.conv", CHANNEL_COUNT, config.encoder_convs, rng)
        self.encoder_gru = Recurrent(
            "encoder.gru", CellKind.GRU, config.encoder_convs[-1].out_channels, config.encoder_gru_units, rng
        )
        bridge = config.bridge_conv
        self.bridge = Conv1D(
            "encoder.bridge", self.encoder_gru.output_dim, bridge.out_channels, bridge.kernel, bridge.stride, rng
        )
        self.summary_gru = Recurrent(
            "encoder.summary_gru", CellKind.GRU, bridge.out_channels, config.summary_gru_units, rng
        )
        self.bottleneck = Dense("encoder.bottleneck", self.summary_gru.output_dim, config.bottleneck, rng)
        latent = config.latent_dim * config.components
        self.mix_head = Dense("encoder.mix_logits", config.bottleneck, latent, rng)
        self.mu_head = Dense("encoder.mu", config.bottleneck, latent, rng)
        self.logvar_head = Dense("encoder.logvar", config.bottleneck, latent, rng)

        self.decoder_dense = Dense("decoder.dense", config.latent_dim, config.decoder_width, rng)
        self.decoder_gru = Recurrent("decoder.gru", CellKind.GRU, config.decoder_width, config.decoder_gru_units, rng)
        up = config.upsample
        self.upsample = TransposedConv1D(
            "decoder.upsample", self.decoder_gru.output_dim, up.out_channels, up.kernel, up.stride, rng
        )
        self.upsample_gru = Recurrent(
            "decoder.upsample_gru", CellKind.GRU, up.out_channels, config.upsample_gru_units, rng
        )
        self.decoder_convs: list[TransposedConv1D] = []
        width = self.upsample_gru.output_dim
        for index, spec in enumerate(config.decoder_convs):
            self.decoder_convs.append(
                TransposedConv1D(f"decoder.conv.{index}", width, spec.out_channels, spec.kernel, spec.stride, rng)
            )
            width = spec.out_channels

    def encode(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        h = self.encoder_gru(self.encoder_conv(x))
        h = self.summary_gru(self.bridge(h).relu())
        summary = self.bottleneck(global_avg_pool(h)).relu()
        shape = (x.shape[0], self.config.latent_dim, self.config.components)
        return (
            self.mix_head(summary).reshape(*shape),
            self.mu_head(summary).reshape(*shape),
            self.logvar_head(summary).reshape(*shape),
        )

    def decode(self, z: Tensor) -> Tensor:
        B = z.shape[0]
        seed = self.decoder_dense(z).reshape(B, 1, self.config.decoder_width)
        h = seed * np.ones((1, self.config.decoder_length, 1), dtype=z.dtype)
        h = self.decoder_gru(h)
        h = self.upsample_gru(self.upsample(h).relu())
        last = len(self.decoder_convs) - 1
        for index, conv in enumerate(self.decoder_convs):
            h = conv(h)
            if index != last:
                h = h.relu()
        return h


def build(config: ModelConfig, seed: int = 0) -> Model:
    """Allocate and initialise a model deterministically from `seed`.

    Args:
        config: Architecture configuration.
        seed: Initialisation seed.

    Returns:
        The built model.

    Raises:
        ConfigError: If parameter names collide.
    """
    rng = np.random.default_rng(seed)
    match config:
        case ConvMHSAConfig():
            model: Model = ConvMHSA(config, rng)
        case ConvLSTMConfig():
            model = ConvLSTM(config, rng)
        case ShortLSTMConfig():
            model = ShortLSTM(config, rng)
        case VAEConvGRUConfig():
            model = VAEConvGRU(config, rng)
        case _:  # pragma: no cover
            raise AssertionError(f"Unhandled model config: {config!r}")
    names = [p.name for p in model.parameters()]
    if len(set(names)) != len(names):
        raise ConfigError("Parameter names collide within the model")
    logger.debug("Built %s with %d parameters", config.kind.value, param_count(model))
    return model


def param_count(model: Layer) -> int:
    return sum(p.size for p in model.parameters())


def _as_input(model: Model, batch: FloatArray | Tensor) -> Tensor:
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=default_dtype()))
    if x.ndim != 3 or x.shape[1:] != (model.input_length, CHANNEL_COUNT):
        raise ShapeError(f"Expected a B×{model.input_length}×{CHANNEL_COUNT} batch, got {x.shape}")
    return x


class ClassifierOutput(NamedTuple):
    probabilities: Tensor
    attention: FloatArray | None


def forward_classifier(
    model: Model,
    batch: FloatArray | Tensor,
    *,
    return_attention: bool = False,
    rng: np.random.Generator | None = None,
    pad_counts: IntArray | None = None,
) -> ClassifierOutput:
    """Probability of pre-maintenance for each flight in a normalized, windowed batch.

    Args:
        model: A classifier.
        batch: B×L×23 input.
        return_attention: Also return the attention maps (self-attention models only).
        rng: Training generator; enables dropout and random Short-LSTM slices.
        pad_counts: Per-sample leading pad rows, used to keep Short-LSTM slices inside the data.

    Returns:
        Probabilities of shape B and, when requested, attention of shape B×layers×H×S×S.

    Raises:
        ShapeError: If the batch shape does not match the model.
        TypeError: If the model is not a classifier.
    """
    if not isinstance(model, Classifier):
        raise TypeError(f"{model.kind.value} is not a classifier")
    x = _as_input(model, batch)
    probabilities, maps = model.classify(x, rng=rng, pad_counts=pad_counts)
    attention = None
    if return_attention:
        if not maps:
            raise TypeError(f"{model.kind.value} has no attention maps")
        attention = np.stack([a.data for a in maps], axis=1)
    return ClassifierOutput(probabilities, attention)


def forward_vae(model: Model, batch: FloatArray | Tensor, *, rng: np.random.Generator | None = None) -> VAEOutput:
    """Encode, sample the mixture latent and decode.

    Without a generator the latent is the mixture mean sum_k w_k mu_k per dimension. With one,
    each dimension picks a component by a categorical draw (straight-through gradient into the
    mixture weights) and samples it with the reparameterisation mu + exp(logvar / 2) * eps.

    Args:
        model: A VAE.
        batch: B×L×23 input.
        rng: Sampling generator, or None for the deterministic mean.

    Returns:
        Reconstruction (same shape as the input) and the three B×D×K latent heads.

    Raises:
        ShapeError: If the batch shape does not match the model.
        TypeError: If the model is not a VAE.
    """
    if not isinstance(model, VAEConvGRU):
        raise TypeError(f"{model.kind.value} is not a VAE")
    x = _as_input(model, batch)
    mix_logits, mu, logvar = model.encode(x)
    weights = softmax(mix_logits, axis=-1)
    if rng is None:
        z = (weights * mu).sum(axis=-1)
    else:
        cumulative = np.cumsum(weights.data, axis=-1)
        draws = rng.random((*weights.shape[:-1], 1))
        picks = np.minimum((draws > cumulative).sum(axis=-1), weights.shape[-1] - 1)
        one_hot = np.eye(weights.shape[-1], dtype=weights.dtype)[picks]
        selector = weights + (one_hot - weights.data)
        noise = rng.standard_normal(mu.shape).astype(mu.dtype)
        z = (selector * (mu + (logvar * 0.5).exp() * noise)).sum(axis=-1)
    return VAEOutput(model.decode(z), mix_logits, mu, logvar)


def anomaly_score(model: Model, x: FloatArray, *, batch_size: int = 16) -> FloatArray:
    """Per-sample mean squared reconstruction error over every (time, channel) cell.

    Uses the deterministic latent mean, so repeated calls agree exactly.
    """
    scores = []
    with no_grad():
        for start in range(0, len(x), batch_size):
            chunk = np.asarray(x[start : start + batch_size])
            scores.append(per_sample_mse(forward_vae(model, chunk).reconstruction.data, chunk))
    return np.concatenate(scores) if scores else np.zeros(0)


def attention_export(model: Model, x: FloatArray, path: Path) -> list[Path]:
    """Write one CSV matrix per (layer, head) for a single flight plus an index file.

    Rows are query positions and columns key positions.

    Args:
        model: A self-attention classifier.
        x: Normalized L×23 (or 1×L×23) flight window.
        path: Output directory, created if missing.

    Returns:
        The written matrix files, layer-major.
    """
    batch = x if x.ndim == 3 else x[None]
    with no_grad():
        attention = forward_classifier(model, batch[:1], return_attention=True).attention
    if attention is None:  # pragma: no cover
        raise TypeError(f"{model.kind.value} has no attention maps")
    path.mkdir(parents=True, exist_ok=True)
    written, rows = [], []
    for layer, head in np.ndindex(*attention.shape[1:3]):
        name = f"layer{layer}_head{head}.csv"
        matrix = attention[0, layer, head]
        pd.DataFrame(matrix).to_csv(path / name, header=False, index=False, float_format="%.9g")
        written.append(path / name)
        rows.append({"layer": layer, "head": head, "file": name, "queries": matrix.shape[0], "keys": matrix.shape[1]})
    pd.DataFrame(rows).to_csv(path / ATTENTION_INDEX_NAME, index=False)
    return written


def load_attention_export(path: Path) -> FloatArray:
    """Read an attention export back into a layers×H×S×S array."""
    index = pd.read_csv(path / ATTENTION_INDEX_NAME)
    layers, heads = int(index["layer"].max()) + 1, int(index["head"].max()) + 1
    maps = np.zeros((layers, heads, int(index["queries"].iloc[0]), int(index["keys"].iloc[0])))
    for row in index.itertuples(index=False):
        maps[row.layer, row.head] = pd.read_csv(path / row.file, header=None).to_numpy(dtype=np.float64)
    return maps


def save_model(model: Model, directory: Path) -> None:
    """Write the parameter checkpoint and the sidecar holding the configuration and normalization stats."""
    directory.mkdir(parents=True, exist_ok=True)
    save_checkpoint(directory / CHECKPOINT_NAME, {p.name: p.data for p in model.parameters()})
    sidecar: dict[str, Any] = {"model": config_to_dict(model.config)}
    if model.normalization is not None:
        sidecar["normalization"] = model.normalization.to_dict()
    with open(directory / MODEL_SIDECAR_NAME, "wb") as f:
        tomli_w.dump(sidecar, f)


def load_model(directory: Path) -> Model:
    """Rebuild a model saved by `save_model`.

    Args:
        directory: Directory holding the checkpoint and its sidecar.

    Returns:
        The model with its trained parameters and normalization stats.

    Raises:
        FileNotFoundError: If the checkpoint or sidecar is missing.
        CheckpointError: If the checkpoint does not fit the configured architecture.
    """
    sidecar_path = directory / MODEL_SIDECAR_NAME
    if not sidecar_path.is_file():
        raise FileNotFoundError(f"Model sidecar not found: {sidecar_path}")
    if not (directory / CHECKPOINT_NAME).is_file():
        raise FileNotFoundError(f"Checkpoint not found: {directory / CHECKPOINT_NAME}")
    with open(sidecar_path, "rb") as f:
        sidecar = tomllib.load(f)
    model = build(config_from_dict(sidecar["model"]))
    arrays = load_checkpoint(directory / CHECKPOINT_NAME)
    params: dict[str, Parameter] = {p.name: p for p in model.parameters()}
    if set(arrays) != set(params):
        missing = sorted(set(params) - set(arrays))
        raise CheckpointError(f"{directory}: checkpoint does not match the model (missing: {missing[:5]})")
    for name, param in params.items():
        if arrays[name].shape != param.shape:
            raise CheckpointError(f"{directory}: '{name}' has shape {arrays[name].shape}, expected {param.shape}")
        param.data = arrays[name]
    if "normalization" in sidecar:
        model.normalization = NormalizationStats.from_dict(sidecar["normalization"])
    return model

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from flightmaint.errors import ConfigError, ShapeError
from flightmaint.utils import BoolArray, FloatArray, stable_hash

DonorSampler = Callable[[np.random.Generator], FloatArray]


@dataclass(kw_only=True, frozen=True)
class AugmentationPolicy:
    """Stochastic policy shared by the three temporal augmentations."""

    p_apply: float = 0.4
    seg_min: int = 64
    seg_max: int = 512
    p_channel_cut: float = 0.3
    m_min: float = 0.6
    m_max: float = 0.9
    p_channel_mix: float = 0.4

    def __post_init__(self) -> None:
        for name in ("p_apply", "p_channel_cut", "p_channel_mix"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"augment.{name} must lie in [0, 1], got {value}")
        if not 1 <= self.seg_min <= self.seg_max:
            raise ConfigError(f"augment.seg_min must be in [1, seg_max], got {self.seg_min}/{self.seg_max}")
        if not 0.0 <= self.m_min <= self.m_max <= 1.0:
            raise ConfigError(f"augment.m_min/m_max must satisfy 0 <= min <= max <= 1, got {self.m_min}/{self.m_max}")


def sample_rng(seed: int, flight_id: str, epoch: int, draw: int = 0) -> np.random.Generator:
    """Independent generator for one sample's augmentation in one epoch.

    The stream depends only on its key, so any parallel schedule reproduces the same draws.
    """
    return np.random.default_rng(np.random.SeedSequence([seed, stable_hash(flight_id), epoch, draw]))


def draw_segment_length(rng: np.random.Generator, policy: AugmentationPolicy, length: int) -> int:
    return min(int(rng.integers(policy.seg_min, policy.seg_max + 1)), length)


def draw_position(rng: np.random.Generator, length: int, segment: int) -> int:
    return int(rng.integers(0, length - segment + 1))


def draw_channels(rng: np.random.Generator, channels: int, probability: float) -> BoolArray:
    return rng.random(channels) < probability


def draw_gates(rng: np.random.Generator, policy: AugmentationPolicy) -> BoolArray:
    """Independent on/off decisions for cutout, cutmix and mixup, in that order."""
    return rng.random(3) < policy.p_apply


def _check_pair(x: FloatArray, donor: FloatArray) -> None:
    if x.ndim != 2:
        raise ShapeError(f"Augmentations take an L×C matrix, got shape {x.shape}")
    if donor.shape != x.shape:
        raise ShapeError(f"Donor shape {donor.shape} does not match input shape {x.shape}")


def cutout(x: FloatArray, start: int, length: int, channels: BoolArray) -> FloatArray:
    out = x.copy()
    out[start : start + length, channels] = 0
    return out


def cutmix(
    x: FloatArray, donor: FloatArray, start: int, donor_start: int, length: int, channels: BoolArray
) -> FloatArray:
    out = x.copy()
    out[start : start + length, channels] = donor[donor_start : donor_start + length, channels]
    return out


def mixup(x: FloatArray, donor: FloatArray, m: float, channels: BoolArray) -> FloatArray:
    out = x.copy()
    out[:, channels] = m * x[:, channels] + (1 - m) * donor[:, channels]
    return out


def temporal_cutout(x: FloatArray, policy: AugmentationPolicy, rng: np.random.Generator) -> FloatArray:
    """Zero one random time segment on a random subset of channels.

    Draw order: segment length, start, channel mask (each channel kept with `p_channel_cut`).

    Args:
        x: L×C matrix.
        policy: Augmentation policy.
        rng: Generator consumed by the draws.

    Returns:
        A new matrix; cells outside the selected block are untouched.

    Raises:
        ShapeError: If `x` is not a matrix.
    """
    _check_pair(x, x)
    steps, width = x.shape
    length = draw_segment_length(rng, policy, steps)
    start = draw_position(rng, steps, length)
    channels = draw_channels(rng, width, policy.p_channel_cut)
    return cutout(x, start, length, channels)


def temporal_cutmix(
    x: FloatArray, donor: FloatArray, policy: AugmentationPolicy, rng: np.random.Generator
) -> FloatArray:
    """Transplant an equal-length segment of `donor` into `x` on a random subset of channels.

    The two segment starts are drawn independently. Draw order: length, start in `x`, start in
    `donor`, channel mask.

    Args:
        x: L×C matrix receiving the segment.
        donor: L×C matrix of any label.
        policy: Augmentation policy.
        rng: Generator consumed by the draws.

    Returns:
        A new matrix; the label of `x` is unchanged.

    Raises:
        ShapeError: If the shapes differ.
    """
    _check_pair(x, donor)
    steps, width = x.shape
    length = draw_segment_length(rng, policy, steps)
    start = draw_position(rng, steps, length)
    donor_start = draw_position(rng, steps, length)
    channels = draw_channels(rng, width, policy.p_channel_cut)
    return cutmix(x, donor, start, donor_start, length, channels)


def temporal_mixup(
    x: FloatArray, donor: FloatArray, policy: AugmentationPolicy, rng: np.random.Generator
) -> FloatArray:
    """Blend random channels of `x` with `donor` over all timesteps: m·x + (1 - m)·donor.

    Draw order: m ~ U[m_min, m_max], then the channel mask (`p_channel_mix`). Labels stay hard.

    Args:
        x: L×C matrix.
        donor: L×C matrix of any label.
        policy: Augmentation policy.
        rng: Generator consumed by the draws.

    Returns:
        A new matrix.

    Raises:
        ShapeError: If the shapes differ.
    """
    _check_pair(x, donor)
    m = float(rng.uniform(policy.m_min, policy.m_max))
    channels = draw_channels(rng, x.shape[1], policy.p_channel_mix)
    return mixup(x, donor, m, channels)


def apply_pipeline(
    x: FloatArray, donor_sampler: DonorSampler, policy: AugmentationPolicy, rng: np.random.Generator
) -> FloatArray:
    """Gate each augmentation independently and apply them in the order cutout, cutmix, mixup.

    All three gates are drawn first; donors are only drawn for augmentations that fire.

    Args:
        x: L×C matrix.
        donor_sampler: Returns a uniformly random training sample given the generator.
        policy: Augmentation policy.
        rng: Generator; the result is a pure function of its state.

    Returns:
        The augmented matrix (a copy of `x` when no gate fires).
    """
    do_cutout, do_cutmix, do_mixup = draw_gates(rng, policy)
    out = x.copy()
    if do_cutout:
        out = temporal_cutout(out, policy, rng)
    if do_cutmix:
        out = temporal_cutmix(out, donor_sampler(rng), policy, rng)
    if do_mixup:
        out = temporal_mixup(out, donor_sampler(rng), policy, rng)
    return out

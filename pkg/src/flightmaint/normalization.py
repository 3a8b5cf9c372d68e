from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from typing import Any

try:
    from typing import Self
except ImportError:  # pragma: <3.11 cover
    from typing_extensions import Self

import numpy as np
import numpy.typing as npt

from flightmaint.constants import CHANNEL_COUNT, NORMALIZATION_EPSILON
from flightmaint.dataset import Windowed
from flightmaint.errors import ShapeError
from flightmaint.utils import FloatArray


@dataclass(kw_only=True, frozen=True, eq=False)
class NormalizationStats:
    """Per-channel z-score statistics fitted on training-fold flights only."""

    mean: FloatArray
    std: FloatArray

    def __post_init__(self) -> None:
        if self.mean.shape != (CHANNEL_COUNT,) or self.std.shape != (CHANNEL_COUNT,):
            raise ShapeError(f"Normalization stats need {CHANNEL_COUNT} channels, got {self.mean.shape}")
        if np.any(self.std < NORMALIZATION_EPSILON):
            raise ValueError(f"Normalization std must be at least {NORMALIZATION_EPSILON}")

    def to_dict(self) -> dict[str, list[float]]:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Self:
        return cls(mean=np.asarray(data["mean"], dtype=np.float64), std=np.asarray(data["std"], dtype=np.float64))


def fit_normalization(windows: Iterable[Windowed | tuple[FloatArray, int]]) -> NormalizationStats:
    """Fit per-channel mean and population std over the non-padded rows of training flights.

    Statistics are merged flight by flight (pairwise update), so the pass is single and in float64.

    Args:
        windows: Windowed training matrices with their pad counts.

    Returns:
        Statistics with std clamped at 1e-6.

    Raises:
        ValueError: If no flight contributes a single non-padded row.
    """
    count = 0
    mean = np.zeros(CHANNEL_COUNT, dtype=np.float64)
    m2 = np.zeros(CHANNEL_COUNT, dtype=np.float64)
    for values, pad_count in windows:
        rows = np.asarray(values[pad_count:], dtype=np.float64)
        n = rows.shape[0]
        if n == 0:
            continue
        if rows.shape[1] != CHANNEL_COUNT:
            raise ShapeError(f"Expected {CHANNEL_COUNT} channels, got {rows.shape[1]}")
        batch_mean = rows.mean(axis=0)
        batch_m2 = ((rows - batch_mean) ** 2).sum(axis=0)
        delta = batch_mean - mean
        total = count + n
        mean = mean + delta * (n / total)
        m2 = m2 + batch_m2 + delta * delta * (count * n / total)
        count = total
    if count == 0:
        raise ValueError("Cannot fit normalization on empty input")
    std = np.maximum(np.sqrt(m2 / count), NORMALIZATION_EPSILON)
    return NormalizationStats(mean=mean, std=std)


def _pad_mask(shape: tuple[int, ...], pad_count: int | npt.ArrayLike) -> FloatArray:
    steps = shape[-2]
    pads = np.asarray(pad_count).reshape(-1, 1) if len(shape) == 3 else np.asarray(pad_count).reshape(1)
    mask = np.arange(steps)[None, :] >= pads
    return mask.reshape(*shape[:-1], 1)


def apply_normalization(
    matrix: FloatArray, stats: NormalizationStats, *, pad_count: int | npt.ArrayLike | None = None
) -> FloatArray:
    """Z-score every channel: out = (x - mean) / std.

    Padded rows are normalized like data unless `pad_count` is given, in which case the leading
    `pad_count` rows (per sample for N×L×C input) stay zero.

    Args:
        matrix: L×23 or N×L×23 array.
        stats: Fitted statistics.
        pad_count: Optional pad counts masking leading rows.

    Returns:
        Normalized array of the input's dtype.

    Raises:
        ShapeError: If the channel count does not match.
    """
    if matrix.shape[-1] != CHANNEL_COUNT:
        raise ShapeError(f"Expected {CHANNEL_COUNT} channels, got {matrix.shape[-1]}")
    out = (np.asarray(matrix, dtype=np.float64) - stats.mean) / stats.std
    if pad_count is not None:
        out = out * _pad_mask(matrix.shape, pad_count)
    return out.astype(matrix.dtype if np.issubdtype(matrix.dtype, np.floating) else np.float64)


def invert_normalization(matrix: FloatArray, stats: NormalizationStats) -> FloatArray:
    """Map normalized values back to physical units.

    Raises:
        ShapeError: If the channel count does not match.
    """
    if matrix.shape[-1] != CHANNEL_COUNT:
        raise ShapeError(f"Expected {CHANNEL_COUNT} channels, got {matrix.shape[-1]}")
    out = np.asarray(matrix, dtype=np.float64) * stats.std + stats.mean
    return out.astype(matrix.dtype if np.issubdtype(matrix.dtype, np.floating) else np.float64)

from dataclasses import dataclass

import numpy as np

from flightmaint.constants import DEFAULT_CHANNEL_NAMES
from flightmaint.dataset import Cluster, FlightSeries
from flightmaint.utils import IntArray

MIN_MARGIN = 64


@dataclass(kw_only=True, frozen=True, eq=False)
class SyntheticSet:
    flights: tuple[FlightSeries, ...]
    markers: IntArray

    @property
    def labels(self) -> IntArray:
        return np.array([f.label for f in self.flights], dtype=np.int64)


def synth_longrange(
    n: int,
    length: int,
    gap: int,
    seed: int,
    *,
    pulse_width: int = 16,
    amplitude: float = 5.0,
    channel: int = 0,
) -> SyntheticSet:
    """Generate a class-balanced long-range-dependency benchmark.

    Every sample is 23-channel standard normal noise with two rectangular pulses on `channel`,
    starting at least `gap` steps apart. The label is 1 iff both pulses have the same sign, so
    no window shorter than `gap` can see enough to classify.

    Args:
        n: Number of samples (even).
        length: Sequence length T.
        gap: Minimum distance between the two pulse starts.
        seed: Generator seed.
        pulse_width: Pulse length in steps.
        amplitude: Pulse magnitude.
        channel: Channel carrying the pulses.

    Returns:
        The flights (one tail each) and the pulse start positions, shape n×2.

    Raises:
        ValueError: If `n` is odd or the geometry does not fit (T < gap + 64).
    """
    if n < 2 or n % 2:
        raise ValueError(f"n must be a positive even number, got {n}")
    if gap < 1 or length < gap + MIN_MARGIN:
        raise ValueError(f"Invalid geometry: length {length} must be at least gap {gap} + {MIN_MARGIN}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.repeat([1, 0], n // 2))
    flights = []
    markers = np.empty((n, 2), dtype=np.int64)
    for i, label in enumerate(labels):
        values = rng.standard_normal((length, len(DEFAULT_CHANNEL_NAMES)))
        first = int(rng.integers(0, length - gap - pulse_width + 1))
        second = int(rng.integers(first + gap, length - pulse_width + 1))
        sign = rng.choice([-1.0, 1.0])
        values[first : first + pulse_width, channel] += sign * amplitude
        values[second : second + pulse_width, channel] += (sign if label else -sign) * amplitude
        markers[i] = (first, second)
        flights.append(
            FlightSeries(
                flight_id=f"synth-{i:05d}",
                tail_id=f"synth-tail-{i:05d}",
                cluster=Cluster.C28,
                label=int(label),
                day_offset=-1 if label else 1,
                values=values,
                channel_names=DEFAULT_CHANNEL_NAMES,
            )
        )
    return SyntheticSet(flights=tuple(flights), markers=markers)

import json
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from flightmaint.constants import CHANNEL_COUNT, DEFAULT_CHANNEL_NAMES
from flightmaint.dataset import Cluster, FlightSeries


@dataclass
class FlightSpec:
    flight_id: str
    tail_id: str
    label: int = 0
    cluster: Cluster = Cluster.C28
    day_offset: int = -1
    steps: int = 64
    seed: int = 0

    def flight(self) -> FlightSeries:
        # Pre-maintenance flights carry a constant offset so small models can separate them.
        values = np.random.default_rng(self.seed).standard_normal((self.steps, CHANNEL_COUNT)) + self.label
        return FlightSeries(
            flight_id=self.flight_id,
            tail_id=self.tail_id,
            cluster=self.cluster,
            label=self.label,
            day_offset=self.day_offset,
            values=values,
            channel_names=DEFAULT_CHANNEL_NAMES,
        )


def make_specs(tails: int, flights_per_tail: int = 2, *, steps: int = 64) -> list[FlightSpec]:
    """Flights alternating between labels, `flights_per_tail` per aircraft."""
    specs = []
    for tail in range(tails):
        for k in range(flights_per_tail):
            index = tail * flights_per_tail + k
            specs.append(
                FlightSpec(
                    flight_id=f"f{index:04d}",
                    tail_id=f"N{tail:03d}",
                    label=index % 2,
                    day_offset=-1 if index % 2 else 1,
                    steps=steps,
                    seed=index,
                )
            )
    return specs


DatasetFactory = Callable[[list[FlightSpec]], Path]


Invoke = Callable[[Sequence[str]], list[str]]

# Quick settings shared by the training commands of the end-to-end tests.
FAST_TRAINING = ["--epochs", "1", "--steps-per-epoch", "2", "--set", "train.batch_size=4", "--set", "train.lr0=1e-3"]


def last_json(lines: list[str]) -> dict[str, Any]:
    return json.loads(lines[-1])

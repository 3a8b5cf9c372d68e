from pathlib import Path

import pytest

from flightmaint.dataset import write_dataset
from tests.helpers import DatasetFactory, FlightSpec


@pytest.fixture
def dataset_factory(tmp_path: Path) -> DatasetFactory:
    def _create(specs: list[FlightSpec]) -> Path:
        root = tmp_path / "dataset"
        write_dataset(root, [spec.flight() for spec in specs])
        return root

    return _create

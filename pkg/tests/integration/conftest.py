from collections.abc import Sequence
from pathlib import Path

import pytest

from flightmaint.cli import EXIT_OK, main
from flightmaint.constants import FOLDS_NAME
from flightmaint.dataset import write_dataset
from tests.helpers import Invoke, make_specs


@pytest.fixture(scope="module")
def dataset_root(tmp_path_factory: pytest.TempPathFactory) -> Path:
    """Ten flights on five tails, both labels on every tail, with a five-fold plan."""
    root = tmp_path_factory.mktemp("fleet") / "dataset"
    write_dataset(root, [spec.flight() for spec in make_specs(5, steps=300)])
    assert main(["folds", "--root", str(root), "--k", "5"]) == EXIT_OK
    assert (root / FOLDS_NAME).is_file()
    return root


@pytest.fixture
def invoke(capsys: pytest.CaptureFixture[str]) -> Invoke:
    """Run the CLI, assert success and return its stdout lines."""

    def _invoke(argv: Sequence[str]) -> list[str]:
        capsys.readouterr()
        code = main(list(argv))
        captured = capsys.readouterr()
        assert code == EXIT_OK, captured.err
        return captured.out.splitlines()

    return _invoke

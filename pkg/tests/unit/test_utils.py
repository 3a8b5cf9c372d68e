from pathlib import Path

import pytest

from flightmaint.utils import ChoiceEnum, prepare_output_dir, stable_hash


class Color(ChoiceEnum):
    RED = "red"
    BLUE = "blue"


class TestChoiceEnum:
    def test_parses_case_insensitively(self) -> None:
        assert Color.from_string("RED") is Color.RED

    def test_lists_valid_values(self) -> None:
        with pytest.raises(ValueError, match="Invalid Color 'green'. Must be one of: red, blue"):
            Color.from_string("green")


class TestPrepareOutputDir:
    def test_creates_missing_directory(self, tmp_path: Path) -> None:
        result = prepare_output_dir(tmp_path / "a" / "b")

        assert result.is_dir()

    def test_accepts_existing_empty_directory(self, tmp_path: Path) -> None:
        (tmp_path / "out").mkdir()

        assert prepare_output_dir(tmp_path / "out") == tmp_path / "out"

    def test_refuses_non_empty_directory(self, tmp_path: Path) -> None:
        (tmp_path / "out").mkdir()
        (tmp_path / "out" / "model.ckpt").touch()

        with pytest.raises(FileExistsError, match="--overwrite"):
            prepare_output_dir(tmp_path / "out")

    def test_overwrite_clears_contents(self, tmp_path: Path) -> None:
        (tmp_path / "out").mkdir()
        (tmp_path / "out" / "model.ckpt").touch()

        prepare_output_dir(tmp_path / "out", overwrite=True)

        assert list((tmp_path / "out").iterdir()) == []


class TestStableHash:
    def test_known_value(self) -> None:
        assert stable_hash("") == 0
        assert stable_hash("flight") == stable_hash("flight")

    def test_distinguishes_ids(self) -> None:
        assert stable_hash("f0001") != stable_hash("f0002")

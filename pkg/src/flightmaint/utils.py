import shutil
import zlib
from enum import Enum
from pathlib import Path
from typing import Any, TypeAlias

try:
    from typing import Self
except ImportError:  # pragma: <3.11 cover
    from typing_extensions import Self

import numpy as np
import numpy.typing as npt

FloatArray: TypeAlias = npt.NDArray[np.floating[Any]]
IntArray: TypeAlias = npt.NDArray[np.integer[Any]]
BoolArray: TypeAlias = npt.NDArray[np.bool_]


class ChoiceEnum(str, Enum):
    """String enum parsed from user-facing configuration values."""

    @classmethod
    def from_string(cls, value: str) -> Self:
        """Parse a member from its string value, case-insensitively.

        Args:
            value: The string value to parse.

        Returns:
            The corresponding enum member.

        Raises:
            ValueError: If the value is not a valid member.
        """
        try:
            return cls(value.lower())
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise ValueError(f"Invalid {cls.__name__} '{value}'. Must be one of: {valid}") from None


def prepare_output_dir(path: Path, *, overwrite: bool = False) -> Path:
    """Create an empty output directory.

    Args:
        path: Directory to create.
        overwrite: Remove existing contents instead of failing.

    Returns:
        The created directory.

    Raises:
        FileExistsError: If the directory exists, is not empty and `overwrite` is false.
    """
    if path.exists() and any(path.iterdir()):
        if not overwrite:
            raise FileExistsError(f"Output directory {path} is not empty; pass --overwrite to replace it")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def stable_hash(text: str) -> int:
    """32-bit checksum of a string that is stable across processes (unlike `hash`)."""
    return zlib.crc32(text.encode("utf-8"))

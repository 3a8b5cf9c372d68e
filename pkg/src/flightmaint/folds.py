import logging
from collections import Counter
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

try:
    from typing import Self
except ImportError:  # pragma: <3.11 cover
    from typing_extensions import Self

import numpy as np
import pandas as pd

from flightmaint.dataset import DatasetManifest
from flightmaint.errors import FoldError

logger = logging.getLogger(__name__)


@dataclass(kw_only=True, frozen=True)
class FoldPlan:
    """Assignment of every flight to a validation fold; a tail never spans two folds."""

    fold_count: int
    assignment: Mapping[str, int]
    seed: int | None = None

    def __post_init__(self) -> None:
        out_of_range = sorted(fid for fid, fold in self.assignment.items() if not 0 <= fold < self.fold_count)
        if out_of_range:
            raise FoldError(f"Fold index outside [0, {self.fold_count}) for: {', '.join(out_of_range[:5])}")

    @classmethod
    def load(cls, path: Path, *, fold_count: int | None = None) -> Self:
        """Read a two-column (flight_id, fold) CSV.

        Args:
            path: Fold file.
            fold_count: Number of folds; inferred from the largest index when omitted.

        Returns:
            The fold plan (seed unknown).

        Raises:
            FoldError: If the file lacks the expected columns.
        """
        frame = pd.read_csv(path, dtype={"flight_id": str})
        if list(frame.columns) != ["flight_id", "fold"]:
            raise FoldError(f"{path}: expected columns flight_id,fold; got {','.join(frame.columns)}")
        assignment = {str(fid): int(fold) for fid, fold in zip(frame["flight_id"], frame["fold"])}
        count = fold_count if fold_count is not None else max(assignment.values(), default=-1) + 1
        return cls(fold_count=count, assignment=assignment)

    def save(self, path: Path) -> None:
        rows = sorted(self.assignment.items())
        pd.DataFrame(rows, columns=["flight_id", "fold"]).to_csv(path, index=False)

    def validation_ids(self, fold: int) -> list[str]:
        return sorted(fid for fid, f in self.assignment.items() if f == fold)

    def training_ids(self, fold: int) -> list[str]:
        return sorted(fid for fid, f in self.assignment.items() if f != fold)

    def sizes(self) -> list[int]:
        counts = Counter(self.assignment.values())
        return [counts.get(f, 0) for f in range(self.fold_count)]

    def check_against(self, manifest: DatasetManifest) -> None:
        """Verify the plan covers the manifest exactly and keeps every tail inside one fold.

        Args:
            manifest: The dataset the plan was made for.

        Raises:
            FoldError: On a missing or unknown flight or a tail split across folds.
        """
        ids = set(manifest.flight_ids)
        if ids != set(self.assignment):
            missing = sorted(ids - set(self.assignment))
            extra = sorted(set(self.assignment) - ids)
            raise FoldError(f"Fold plan does not match manifest (missing: {missing[:5]}, unknown: {extra[:5]})")
        folds_of_tail: dict[str, set[int]] = {}
        for entry in manifest:
            folds_of_tail.setdefault(entry.tail_id, set()).add(self.assignment[entry.flight_id])
        split = sorted(tail for tail, folds in folds_of_tail.items() if len(folds) > 1)
        if split:
            raise FoldError(f"Tails split across folds: {', '.join(split[:5])}")


def make_folds(manifest: DatasetManifest, k: int = 5, seed: int = 0) -> FoldPlan:
    """Group flights by tail and spread the tails over `k` folds.

    Tails are shuffled with a seeded generator, then each goes to the fold currently holding the
    fewest flights (lowest index on ties), which balances validation steps across folds.

    Args:
        manifest: Flights to split.
        k: Number of folds.
        seed: Shuffle seed.

    Returns:
        A deterministic fold plan.

    Raises:
        FoldError: If there are fewer distinct tails than folds.
    """
    tails = manifest.tails
    if k < 1 or len(tails) < k:
        raise FoldError(f"Need at least {k} distinct tails for {k} folds, found {len(tails)}")
    flights_of_tail: dict[str, list[str]] = {tail: [] for tail in tails}
    for entry in manifest:
        flights_of_tail[entry.tail_id].append(entry.flight_id)
    order = np.random.default_rng(seed).permutation(len(tails))
    sizes = [0] * k
    assignment: dict[str, int] = {}
    for index in order:
        tail = tails[int(index)]
        fold = min(range(k), key=lambda f: (sizes[f], f))
        for flight_id in flights_of_tail[tail]:
            assignment[flight_id] = fold
        sizes[fold] += len(flights_of_tail[tail])
    logger.debug("Fold sizes (flights): %s", sizes)
    return FoldPlan(fold_count=k, assignment=assignment, seed=seed)

import logging
import warnings
from collections import Counter
from collections.abc import Callable, Iterable, Iterator, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple

try:
    from typing import Self
except ImportError:  # pragma: <3.11 cover
    from typing_extensions import Self

import numpy as np
import pandas as pd

from flightmaint.constants import (
    CHANNEL_COUNT,
    DEFAULT_WINDOW_LENGTH,
    MANIFEST_COLUMNS,
    MANIFEST_NAME,
    MAX_DAY_DISTANCE,
    MIN_FLIGHT_SECONDS,
)
from flightmaint.errors import IngestionError
from flightmaint.utils import ChoiceEnum, FloatArray, IntArray

logger = logging.getLogger(__name__)


class Cluster(ChoiceEnum):
    """Maintenance-issue category a flight was exported for."""

    C28 = "c28"  # intake gasket leak/damage
    C37 = "c37"  # rocker cover loose/leak/damage


@dataclass(kw_only=True, frozen=True, eq=False)
class FlightSeries:
    """One flight: a T×23 matrix of per-second sensor readings plus its labels."""

    flight_id: str
    tail_id: str
    cluster: Cluster
    label: int
    day_offset: int
    values: FloatArray
    channel_names: tuple[str, ...]

    def __post_init__(self) -> None:
        where = f"flight '{self.flight_id}'"
        if self.values.ndim != 2 or self.values.shape[1] != CHANNEL_COUNT:
            raise IngestionError(f"{where}: expected {CHANNEL_COUNT} channels, got shape {self.values.shape}")
        if len(self.channel_names) != CHANNEL_COUNT or len(set(self.channel_names)) != CHANNEL_COUNT:
            raise IngestionError(f"{where}: expected {CHANNEL_COUNT} unique channel names")
        if self.values.shape[0] < 1:
            raise IngestionError(f"{where}: no rows")
        if not np.all(np.isfinite(self.values)):
            raise IngestionError(f"{where}: non-finite values")
        if self.label not in (0, 1):
            raise IngestionError(f"{where}: label must be 0 or 1, got {self.label}")

    @property
    def length(self) -> int:
        return self.values.shape[0]


def check_eligibility(duration_seconds: int, day_offset: int) -> bool:
    """Whether a flight belongs in the benchmark.

    Flights under 30 minutes rarely involve actual flight; flights on the maintenance day cannot
    be placed before or after it; only flights within two days of the maintenance are kept.
    """
    return duration_seconds >= MIN_FLIGHT_SECONDS and day_offset != 0 and abs(day_offset) <= MAX_DAY_DISTANCE


class Windowed(NamedTuple):
    values: FloatArray
    pad_count: int


def window(values: FloatArray, length: int = DEFAULT_WINDOW_LENGTH) -> Windowed:
    """Keep the last `length` rows, left-padding shorter flights with zero rows.

    Padding goes in front so the final seconds of every flight line up at the sequence end.

    Args:
        values: T×C matrix.
        length: Target length L.

    Returns:
        The L×C matrix and the number of padded rows, max(0, L - T).

    Raises:
        ValueError: If `length` is not positive.
    """
    if length < 1:
        raise ValueError(f"Window length must be positive, got {length}")
    steps = values.shape[0]
    if steps >= length:
        return Windowed(values[steps - length :], 0)
    pad = length - steps
    padded = np.zeros((length, *values.shape[1:]), dtype=values.dtype)
    padded[pad:] = values
    return Windowed(padded, pad)


@dataclass(kw_only=True, frozen=True)
class ManifestEntry:
    flight_id: str
    tail_id: str
    cluster: Cluster
    label: int
    day_offset: int
    duration_seconds: int
    path: str

    @classmethod
    def from_row(cls, row: Mapping[str, Any], line: int) -> Self:
        """Create an entry from one manifest row.

        Args:
            row: Raw column values.
            line: 1-based data line, used in error messages.

        Returns:
            The validated entry.

        Raises:
            IngestionError: If a field is missing or malformed.
        """
        flight_id = row.get("flight_id")
        if flight_id is None or pd.isna(flight_id) or not str(flight_id).strip():
            raise IngestionError(f"Manifest line {line}: missing flight_id")
        try:
            label = int(row["label"])
            entry = cls(
                flight_id=str(flight_id).strip(),
                tail_id=str(row["tail_id"]).strip(),
                cluster=Cluster.from_string(str(row["cluster"]).strip()),
                label=label,
                day_offset=int(row["day_offset"]),
                duration_seconds=int(row["duration_seconds"]),
                path=str(row["path"]).strip(),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestionError(f"Manifest line {line} (flight '{flight_id}'): {exc}") from None
        if label not in (0, 1):
            raise IngestionError(f"Manifest line {line} (flight '{flight_id}'): label must be 0 or 1, got {label}")
        return entry

    def as_row(self) -> dict[str, Any]:
        return {
            "flight_id": self.flight_id,
            "tail_id": self.tail_id,
            "cluster": self.cluster.value,
            "label": self.label,
            "day_offset": self.day_offset,
            "duration_seconds": self.duration_seconds,
            "path": self.path,
        }


@dataclass(kw_only=True, frozen=True)
class DatasetManifest:
    """Validated index of a dataset directory, canonically sorted by flight id."""

    root: Path
    entries: tuple[ManifestEntry, ...]
    channel_names: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.entries, key=lambda e: e.flight_id))
        object.__setattr__(self, "entries", ordered)
        duplicates = sorted(fid for fid, n in Counter(e.flight_id for e in ordered).items() if n > 1)
        if duplicates:
            raise IngestionError(f"Duplicate flight_id in manifest: {', '.join(duplicates)}")

    @classmethod
    def load(cls, path: Path) -> Self:
        """Read a manifest CSV without touching the flight files.

        Args:
            path: Manifest file; flight paths are resolved against its directory.

        Returns:
            The manifest.

        Raises:
            FileNotFoundError: If the manifest does not exist.
            IngestionError: If the file lacks columns or holds malformed rows.
        """
        if not path.is_file():
            raise FileNotFoundError(f"Manifest not found: {path}")
        try:
            frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[""])
        except pd.errors.EmptyDataError:
            raise IngestionError(f"Manifest {path} is empty") from None
        missing = [c for c in MANIFEST_COLUMNS if c not in frame.columns]
        if missing:
            raise IngestionError(f"Manifest {path} is missing columns: {', '.join(missing)}")
        entries = [ManifestEntry.from_row(row, line) for line, row in enumerate(frame.to_dict("records"), start=1)]
        return cls(root=path.parent, entries=tuple(entries))

    def save(self, path: Path) -> None:
        frame = pd.DataFrame([e.as_row() for e in self.entries], columns=list(MANIFEST_COLUMNS))
        frame.to_csv(path, index=False)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    @property
    def flight_ids(self) -> tuple[str, ...]:
        return tuple(e.flight_id for e in self.entries)

    @property
    def tails(self) -> tuple[str, ...]:
        return tuple(sorted({e.tail_id for e in self.entries}))

    @property
    def counts(self) -> dict[tuple[Cluster, int], int]:
        """Number of flights per (cluster, label)."""
        return dict(Counter((e.cluster, e.label) for e in self.entries))

    def counts_frame(self) -> pd.DataFrame:
        rows = [
            {"cluster": cluster.value, "label": label, "count": self.counts.get((cluster, label), 0)}
            for cluster in Cluster
            for label in (1, 0)
        ]
        return pd.DataFrame(rows)

    def entry(self, flight_id: str) -> ManifestEntry:
        """Look up an entry by flight id.

        Args:
            flight_id: The flight to find.

        Returns:
            The matching entry.

        Raises:
            KeyError: If the flight is not in the manifest.
        """
        for e in self.entries:
            if e.flight_id == flight_id:
                return e
        raise KeyError(f"Flight '{flight_id}' not found in manifest")

    def select(self, predicate: Callable[[ManifestEntry], bool]) -> Self:
        return type(self)(
            root=self.root,
            entries=tuple(e for e in self.entries if predicate(e)),
            channel_names=self.channel_names,
        )

    def for_cluster(self, cluster: Cluster | None) -> Self:
        return self if cluster is None else self.select(lambda e: e.cluster is cluster)

    def path_of(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path


def read_flight_csv(path: Path, *, impute: bool = False) -> tuple[FloatArray, tuple[str, ...]]:
    """Parse one per-flight CSV: a header of 23 channel names, then one numeric row per second.

    Args:
        path: Flight file.
        impute: Forward-fill (then back-fill) missing cells instead of rejecting the file.

    Returns:
        The T×23 float64 matrix and the channel names.

    Raises:
        IngestionError: If the file is missing or empty, has the wrong number of channels,
            contains a non-numeric cell, or has missing cells without `impute`.
    """
    if not path.is_file():
        raise IngestionError(f"{path}: flight file not found")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[""], skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise IngestionError(f"{path}: empty file") from None
    if frame.shape[1] != CHANNEL_COUNT:
        raise IngestionError(f"{path}: expected {CHANNEL_COUNT} channels, found {frame.shape[1]}")
    if frame.shape[0] == 0:
        raise IngestionError(f"{path}: empty file (header only)")
    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna() & frame.notna()
    if bad.to_numpy().any():
        row, col = (int(i) for i in np.argwhere(bad.to_numpy())[0])
        raise IngestionError(
            f"{path}: non-numeric cell {frame.iat[row, col]!r} at row {row + 1}, column '{frame.columns[col]}'"
        )
    missing = numeric.isna().to_numpy()
    if missing.any():
        if not impute:
            row, col = (int(i) for i in np.argwhere(missing)[0])
            raise IngestionError(f"{path}: missing value at row {row + 1}, column '{frame.columns[col]}'")
        warnings.warn(f"{path}: forward-filled {int(missing.sum())} missing values", stacklevel=2)
        numeric = numeric.ffill().bfill()
        if numeric.isna().to_numpy().any():
            raise IngestionError(f"{path}: a channel has no values to impute from")
    values = numeric.to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise IngestionError(f"{path}: non-finite values")
    return values, tuple(str(c).strip() for c in frame.columns)


def load_flight(manifest: DatasetManifest, entry: ManifestEntry, *, impute: bool = False) -> FlightSeries:
    values, names = read_flight_csv(manifest.path_of(entry), impute=impute)
    return FlightSeries(
        flight_id=entry.flight_id,
        tail_id=entry.tail_id,
        cluster=entry.cluster,
        label=entry.label,
        day_offset=entry.day_offset,
        values=values,
        channel_names=names,
    )


def ingest(
    root: Path,
    *,
    filter_eligible: bool = False,
    validate_payloads: bool = True,
    impute: bool = False,
    workers: int = 1,
) -> DatasetManifest:
    """Read and validate a dataset directory in the canonical layout.

    Flight payloads stay on disk; `load_flight` reads them on demand. Validation of the
    individual files may run on several threads and results are merged in flight-id order,
    so the manifest does not depend on traversal order.

    Args:
        root: Directory holding `manifest.csv` and the flight files it references.
        filter_eligible: Drop flights failing `check_eligibility` (duration first, then day proximity).
        validate_payloads: Parse every flight file fully; otherwise only headers are checked.
        impute: Forward-fill missing cells during validation.
        workers: Number of validation threads.

    Returns:
        The validated manifest.

    Raises:
        IngestionError: On any manifest or flight-file violation; the message names the file.
    """
    manifest = DatasetManifest.load(root / MANIFEST_NAME)
    if filter_eligible:
        too_short = [e for e in manifest if e.duration_seconds < MIN_FLIGHT_SECONDS]
        kept = manifest.select(lambda e: e.duration_seconds >= MIN_FLIGHT_SECONDS)
        kept = kept.select(lambda e: check_eligibility(e.duration_seconds, e.day_offset))
        dropped = len(manifest) - len(kept)
        if dropped:
            warnings.warn(
                f"Eligibility filter dropped {dropped} of {len(manifest)} flights "
                f"({len(too_short)} shorter than {MIN_FLIGHT_SECONDS} s)",
                stacklevel=2,
            )
        manifest = kept

    def check(entry: ManifestEntry) -> tuple[str, tuple[str, ...]]:
        path = manifest.path_of(entry)
        if validate_payloads:
            _, names = read_flight_csv(path, impute=impute)
        else:
            if not path.is_file():
                raise IngestionError(f"{path}: flight file not found")
            try:
                header = pd.read_csv(path, nrows=0, skipinitialspace=True)
            except pd.errors.EmptyDataError:
                raise IngestionError(f"{path}: empty file") from None
            if header.shape[1] != CHANNEL_COUNT:
                raise IngestionError(f"{path}: expected {CHANNEL_COUNT} channels, found {header.shape[1]}")
            names = tuple(str(c).strip() for c in header.columns)
        return entry.flight_id, names

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(check, manifest.entries))
    else:
        results = dict(map(check, manifest.entries))

    channel_names: tuple[str, ...] = ()
    for flight_id in sorted(results):
        names = results[flight_id]
        if len(set(names)) != CHANNEL_COUNT:
            raise IngestionError(f"{manifest.path_of(manifest.entry(flight_id))}: channel names are not unique")
        if not channel_names:
            channel_names = names
        elif names != channel_names:
            raise IngestionError(
                f"{manifest.path_of(manifest.entry(flight_id))}: channel names differ from the rest of the dataset"
            )
    logger.info("Ingested %d flights from %s", len(manifest), root)
    return DatasetManifest(root=manifest.root, entries=manifest.entries, channel_names=channel_names)


def write_dataset(root: Path, flights: Iterable[FlightSeries], *, subdir: str = "flights") -> DatasetManifest:
    """Write flights in the canonical layout: one CSV per flight plus `manifest.csv`.

    Args:
        root: Dataset directory (created if needed).
        flights: Flights to write.
        subdir: Directory under `root` for the flight files.

    Returns:
        The manifest of the written dataset.
    """
    (root / subdir).mkdir(parents=True, exist_ok=True)
    entries = []
    channel_names: tuple[str, ...] = ()
    for flight in flights:
        relative = f"{subdir}/{flight.flight_id}.csv"
        pd.DataFrame(flight.values, columns=list(flight.channel_names)).to_csv(
            root / relative, index=False, float_format="%.9g"
        )
        channel_names = flight.channel_names
        entries.append(
            ManifestEntry(
                flight_id=flight.flight_id,
                tail_id=flight.tail_id,
                cluster=flight.cluster,
                label=flight.label,
                day_offset=flight.day_offset,
                duration_seconds=flight.length,
                path=relative,
            )
        )
    manifest = DatasetManifest(root=root, entries=tuple(entries), channel_names=channel_names)
    manifest.save(root / MANIFEST_NAME)
    return manifest


@dataclass(kw_only=True, frozen=True)
class ReleaseColumns:
    """Column mapping for the public release: one flat per-second table plus one header table."""

    flight_id: str = "id"
    tail_id: str = "tail_id"
    cluster: str = "cluster"
    before_after: str = "before_after"
    day_offset: str = "date_diff"
    pre_value: str = "before"
    post_value: str = "after"


def _parse_release_cluster(value: Any) -> Cluster:
    digits = "".join(ch for ch in str(value) if ch.isdigit())
    return Cluster.from_string(f"c{digits}")


def import_release(
    data_path: Path,
    header_path: Path,
    out_root: Path,
    *,
    columns: ReleaseColumns | None = None,
    channel_names: Sequence[str] | None = None,
) -> DatasetManifest:
    """Convert the public release layout into the canonical one.

    Args:
        data_path: CSV of per-second rows with a flight-id column and the sensor columns.
        header_path: CSV with one row per flight (id, tail, cluster, before/after, day offset).
        out_root: Destination dataset directory.
        columns: Column mapping; defaults follow the release's naming.
        channel_names: Sensor columns to keep, in order; defaults to every non-id column.

    Returns:
        The manifest of the converted dataset.

    Raises:
        IngestionError: If the tables do not match the mapping.
    """
    columns = columns or ReleaseColumns()
    header = pd.read_csv(header_path)
    data = pd.read_csv(data_path)
    for name in (columns.flight_id, columns.tail_id, columns.cluster, columns.before_after, columns.day_offset):
        if name not in header.columns:
            raise IngestionError(f"{header_path}: missing column '{name}'")
    if columns.flight_id not in data.columns:
        raise IngestionError(f"{data_path}: missing column '{columns.flight_id}'")
    sensors = list(channel_names) if channel_names is not None else [c for c in data.columns if c != columns.flight_id]
    if len(sensors) != CHANNEL_COUNT:
        raise IngestionError(f"{data_path}: expected {CHANNEL_COUNT} sensor columns, found {len(sensors)}")
    labels = {columns.pre_value: 1, columns.post_value: 0}
    grouped = dict(tuple(data.groupby(columns.flight_id, sort=False)))

    def flights() -> Iterator[FlightSeries]:
        for row in header.to_dict("records"):
            marker = str(row[columns.before_after]).strip().lower()
            if marker not in labels:
                logger.debug("Skipping flight %s with before/after marker %r", row[columns.flight_id], marker)
                continue
            rows = grouped.get(row[columns.flight_id])
            if rows is None:
                raise IngestionError(f"{data_path}: no rows for flight '{row[columns.flight_id]}'")
            yield FlightSeries(
                flight_id=str(row[columns.flight_id]),
                tail_id=str(row[columns.tail_id]),
                cluster=_parse_release_cluster(row[columns.cluster]),
                label=labels[marker],
                day_offset=int(row[columns.day_offset]),
                values=rows[sensors].to_numpy(dtype=np.float64),
                channel_names=tuple(sensors),
            )

    return write_dataset(out_root, flights())


@dataclass(kw_only=True, frozen=True, eq=False)
class WindowedSet:
    """Flights windowed to a common length and stacked into an N×L×C array."""

    flight_ids: tuple[str, ...]
    tail_ids: tuple[str, ...]
    labels: IntArray
    pad_counts: IntArray
    values: FloatArray

    @classmethod
    def from_flights(cls, flights: Iterable[FlightSeries], length: int, *, dtype: Any = np.float32) -> Self:
        flights = list(flights)
        windows = [window(f.values, length) for f in flights]
        return cls(
            flight_ids=tuple(f.flight_id for f in flights),
            tail_ids=tuple(f.tail_id for f in flights),
            labels=np.array([f.label for f in flights], dtype=np.int64),
            pad_counts=np.array([w.pad_count for w in windows], dtype=np.int64),
            values=(
                np.stack([w.values for w in windows]).astype(dtype)
                if windows
                else np.zeros((0, length, CHANNEL_COUNT), dtype=dtype)
            ),
        )

    @classmethod
    def from_manifest(
        cls, manifest: DatasetManifest, length: int, *, impute: bool = False, dtype: Any = np.float32
    ) -> Self:
        return cls.from_flights((load_flight(manifest, e, impute=impute) for e in manifest), length, dtype=dtype)

    def __len__(self) -> int:
        return len(self.flight_ids)

    @property
    def length(self) -> int:
        return self.values.shape[1]

    def windows(self) -> Iterator[Windowed]:
        for values, pad in zip(self.values, self.pad_counts):
            yield Windowed(values, int(pad))

    def subset(self, indices: Sequence[int] | IntArray) -> Self:
        idx = np.asarray(indices, dtype=np.int64)
        return type(self)(
            flight_ids=tuple(self.flight_ids[i] for i in idx),
            tail_ids=tuple(self.tail_ids[i] for i in idx),
            labels=self.labels[idx],
            pad_counts=self.pad_counts[idx],
            values=self.values[idx],
        )

    def select_ids(self, flight_ids: Iterable[str]) -> Self:
        position = {fid: i for i, fid in enumerate(self.flight_ids)}
        return self.subset([position[fid] for fid in flight_ids])

    def with_values(self, values: FloatArray) -> Self:
        return type(self)(
            flight_ids=self.flight_ids,
            tail_ids=self.tail_ids,
            labels=self.labels,
            pad_counts=self.pad_counts,
            values=values,
        )

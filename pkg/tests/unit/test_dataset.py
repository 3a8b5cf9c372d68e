from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from flightmaint.constants import CHANNEL_COUNT, DEFAULT_CHANNEL_NAMES, MANIFEST_NAME
from flightmaint.dataset import (
    Cluster,
    DatasetManifest,
    FlightSeries,
    WindowedSet,
    check_eligibility,
    import_release,
    ingest,
    load_flight,
    read_flight_csv,
    window,
    write_dataset,
)
from flightmaint.errors import IngestionError
from tests.helpers import DatasetFactory, FlightSpec, make_specs


def _write_csv(path: Path, rows: list[list[str]], header: list[str] | None = None) -> Path:
    header = header if header is not None else list(DEFAULT_CHANNEL_NAMES)
    path.write_text("\n".join(",".join(r) for r in [header, *rows]) + "\n")
    return path


class TestWindow:
    def test_long_flight_keeps_last_rows(self) -> None:
        values = np.arange(10 * 2, dtype=np.float64).reshape(10, 2)

        result = window(values, 4)

        np.testing.assert_array_equal(result.values, values[6:])
        assert result.pad_count == 0

    def test_short_flight_is_left_padded(self) -> None:
        values = np.ones((3, 2))

        result = window(values, 5)

        assert result.pad_count == 2
        np.testing.assert_array_equal(result.values[:2], 0.0)
        np.testing.assert_array_equal(result.values[2:], 1.0)

    def test_exact_length_is_unchanged(self) -> None:
        values = np.ones((4, 2))

        result = window(values, 4)

        assert result.pad_count == 0
        assert result.values.shape == (4, 2)

    def test_rewindowing_is_idempotent(self) -> None:
        once = window(np.ones((3, 2)), 6)

        twice = window(once.values, 6)

        np.testing.assert_array_equal(twice.values, once.values)

    def test_rejects_non_positive_length(self) -> None:
        with pytest.raises(ValueError, match="must be positive"):
            window(np.ones((3, 2)), 0)


class TestCheckEligibility:
    @pytest.mark.parametrize(
        ("duration", "day_offset", "expected"),
        [
            pytest.param(3600, -1, True, id="day_before"),
            pytest.param(3600, 2, True, id="two_days_after"),
            pytest.param(1799, -1, False, id="too_short"),
            pytest.param(1800, 1, True, id="exactly_thirty_minutes"),
            pytest.param(3600, 0, False, id="maintenance_day"),
            pytest.param(3600, -3, False, id="too_far"),
        ],
    )
    def test_rules(self, duration: int, day_offset: int, expected: bool) -> None:
        assert check_eligibility(duration, day_offset) is expected


class TestFlightSeries:
    def test_rejects_wrong_channel_count(self) -> None:
        with pytest.raises(IngestionError, match="expected 23 channels"):
            FlightSeries(
                flight_id="f",
                tail_id="t",
                cluster=Cluster.C28,
                label=0,
                day_offset=1,
                values=np.zeros((5, 22)),
                channel_names=DEFAULT_CHANNEL_NAMES[:22],
            )

    def test_rejects_bad_label(self) -> None:
        with pytest.raises(IngestionError, match="label must be 0 or 1"):
            FlightSeries(
                flight_id="f",
                tail_id="t",
                cluster=Cluster.C28,
                label=2,
                day_offset=1,
                values=np.zeros((5, CHANNEL_COUNT)),
                channel_names=DEFAULT_CHANNEL_NAMES,
            )


class TestReadFlightCsv:
    def test_reads_values_and_names(self, tmp_path: Path) -> None:
        path = _write_csv(tmp_path / "f.csv", [[str(i) for i in range(CHANNEL_COUNT)]] * 3)

        values, names = read_flight_csv(path)

        assert values.shape == (3, CHANNEL_COUNT)
        assert values.dtype == np.float64
        assert names == DEFAULT_CHANNEL_NAMES

    def test_rejects_wrong_channel_count(self, tmp_path: Path) -> None:
        path = _write_csv(tmp_path / "f.csv", [["1"] * 22], header=list(DEFAULT_CHANNEL_NAMES[:22]))

        with pytest.raises(IngestionError, match="expected 23 channels, found 22"):
            read_flight_csv(path)

    def test_rejects_non_numeric_cell(self, tmp_path: Path) -> None:
        row = ["1"] * CHANNEL_COUNT
        row[4] = "abc"
        path = _write_csv(tmp_path / "f.csv", [["1"] * CHANNEL_COUNT, row])

        with pytest.raises(IngestionError, match="non-numeric cell 'abc' at row 2, column 'FQtyL'"):
            read_flight_csv(path)

    def test_rejects_missing_cell_without_imputation(self, tmp_path: Path) -> None:
        row = ["1"] * CHANNEL_COUNT
        row[0] = ""
        path = _write_csv(tmp_path / "f.csv", [["1"] * CHANNEL_COUNT, row])

        with pytest.raises(IngestionError, match="missing value at row 2, column 'volt1'"):
            read_flight_csv(path)

    def test_forward_fills_with_warning(self, tmp_path: Path) -> None:
        row = ["2"] * CHANNEL_COUNT
        row[0] = ""
        path = _write_csv(tmp_path / "f.csv", [["1"] * CHANNEL_COUNT, row])

        with pytest.warns(UserWarning, match="forward-filled 1 missing values"):
            values, _ = read_flight_csv(path, impute=True)

        assert values[1, 0] == 1.0
        assert values[1, 1] == 2.0

    def test_rejects_header_only_file(self, tmp_path: Path) -> None:
        path = _write_csv(tmp_path / "f.csv", [])

        with pytest.raises(IngestionError, match="header only"):
            read_flight_csv(path)

    def test_rejects_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(IngestionError, match="flight file not found"):
            read_flight_csv(tmp_path / "missing.csv")


class TestDatasetManifest:
    def test_load_sorts_by_flight_id(self, dataset_factory: DatasetFactory) -> None:
        root = dataset_factory([FlightSpec("b", "N1"), FlightSpec("a", "N2", label=1)])

        manifest = DatasetManifest.load(root / MANIFEST_NAME)

        assert manifest.flight_ids == ("a", "b")
        assert manifest.tails == ("N1", "N2")
        assert manifest.counts == {(Cluster.C28, 0): 1, (Cluster.C28, 1): 1}

    def test_missing_manifest(self, tmp_path: Path) -> None:
        with pytest.raises(FileNotFoundError, match="Manifest not found"):
            DatasetManifest.load(tmp_path / MANIFEST_NAME)

    def test_rejects_missing_columns(self, tmp_path: Path) -> None:
        path = tmp_path / MANIFEST_NAME
        path.write_text("flight_id,tail_id\na,N1\n")

        with pytest.raises(IngestionError, match="missing columns: cluster, label"):
            DatasetManifest.load(path)

    def test_rejects_unknown_cluster(self, tmp_path: Path) -> None:
        path = tmp_path / MANIFEST_NAME
        path.write_text(
            "flight_id,tail_id,cluster,label,day_offset,duration_seconds,path\na,N1,c99,0,1,3600,a.csv\n"
        )

        with pytest.raises(IngestionError, match="Manifest line 1 .*Invalid Cluster 'c99'"):
            DatasetManifest.load(path)

    def test_rejects_duplicate_ids(self, tmp_path: Path) -> None:
        path = tmp_path / MANIFEST_NAME
        path.write_text(
            "flight_id,tail_id,cluster,label,day_offset,duration_seconds,path\n"
            "a,N1,c28,0,1,3600,a.csv\n"
            "a,N2,c28,1,-1,3600,b.csv\n"
        )

        with pytest.raises(IngestionError, match="Duplicate flight_id in manifest: a"):
            DatasetManifest.load(path)

    def test_entry_lookup(self, dataset_factory: DatasetFactory) -> None:
        manifest = DatasetManifest.load(dataset_factory(make_specs(2)) / MANIFEST_NAME)

        assert manifest.entry("f0001").tail_id == "N000"
        with pytest.raises(KeyError, match="f9999"):
            manifest.entry("f9999")

    def test_for_cluster(self, dataset_factory: DatasetFactory) -> None:
        root = dataset_factory([FlightSpec("a", "N1"), FlightSpec("b", "N2", cluster=Cluster.C37)])
        manifest = DatasetManifest.load(root / MANIFEST_NAME)

        assert manifest.for_cluster(Cluster.C37).flight_ids == ("b",)
        assert manifest.for_cluster(None) is manifest

    def test_counts_frame_lists_every_cluster_and_label(self, dataset_factory: DatasetFactory) -> None:
        manifest = DatasetManifest.load(dataset_factory(make_specs(3)) / MANIFEST_NAME)

        frame = manifest.counts_frame()

        assert frame.to_dict("records") == [
            {"cluster": "c28", "label": 1, "count": 3},
            {"cluster": "c28", "label": 0, "count": 3},
            {"cluster": "c37", "label": 1, "count": 0},
            {"cluster": "c37", "label": 0, "count": 0},
        ]


class TestIngest:
    def test_validates_every_flight(self, dataset_factory: DatasetFactory) -> None:
        root = dataset_factory(make_specs(3))

        manifest = ingest(root, workers=2)

        assert len(manifest) == 6
        assert manifest.channel_names == DEFAULT_CHANNEL_NAMES

    def test_is_independent_of_worker_count(self, dataset_factory: DatasetFactory) -> None:
        root = dataset_factory(make_specs(4))

        assert ingest(root, workers=1) == ingest(root, workers=3)

    def test_rejects_inconsistent_channel_names(self, dataset_factory: DatasetFactory) -> None:
        root = dataset_factory(make_specs(1))
        renamed = ["x" + name for name in DEFAULT_CHANNEL_NAMES]
        _write_csv(root / "flights" / "f0001.csv", [["1"] * CHANNEL_COUNT], header=renamed)

        with pytest.raises(IngestionError, match="f0001.csv: channel names differ"):
            ingest(root)

    def test_names_the_broken_file(self, dataset_factory: DatasetFactory) -> None:
        root = dataset_factory(make_specs(1))
        (root / "flights" / "f0000.csv").write_text("")

        with pytest.raises(IngestionError, match="f0000.csv: empty file"):
            ingest(root)

    def test_header_only_validation_skips_payloads(self, dataset_factory: DatasetFactory) -> None:
        root = dataset_factory(make_specs(1))
        row = ["1"] * CHANNEL_COUNT
        row[3] = "bad"
        _write_csv(root / "flights" / "f0000.csv", [row])

        manifest = ingest(root, validate_payloads=False)

        assert len(manifest) == 2

    def test_eligibility_filter_warns_and_drops(self, dataset_factory: DatasetFactory) -> None:
        specs = [
            FlightSpec("long", "N1", steps=1800),
            FlightSpec("short", "N2", steps=60),
            FlightSpec("same-day", "N3", steps=1800, day_offset=0),
        ]
        root = dataset_factory(specs)

        with pytest.warns(UserWarning, match="dropped 2 of 3 flights \\(1 shorter than 1800 s\\)"):
            manifest = ingest(root, filter_eligible=True, validate_payloads=False)

        assert manifest.flight_ids == ("long",)


class TestWriteDataset:
    def test_round_trip(self, tmp_path: Path) -> None:
        flight = FlightSpec("a", "N1", steps=7, label=1).flight()

        manifest = write_dataset(tmp_path / "ds", [flight])
        loaded = load_flight(DatasetManifest.load(tmp_path / "ds" / MANIFEST_NAME), manifest.entry("a"))

        np.testing.assert_allclose(loaded.values, flight.values, rtol=1e-8)
        assert loaded.label == 1
        assert manifest.entry("a").duration_seconds == 7
        assert manifest.entry("a").path == "flights/a.csv"


class TestImportRelease:
    def test_converts_release_tables(self, tmp_path: Path) -> None:
        sensors = {name: np.arange(6, dtype=float) for name in DEFAULT_CHANNEL_NAMES}
        pd.DataFrame({"id": [10, 10, 10, 11, 11, 12], **sensors}).to_csv(tmp_path / "data.csv", index=False)
        pd.DataFrame(
            {
                "id": [10, 11, 12],
                "tail_id": ["N1", "N2", "N3"],
                "cluster": ["C28", "37", "C28"],
                "before_after": ["before", "after", "same"],
                "date_diff": [-1, 2, 0],
            }
        ).to_csv(tmp_path / "header.csv", index=False)

        manifest = import_release(tmp_path / "data.csv", tmp_path / "header.csv", tmp_path / "out")

        assert manifest.flight_ids == ("10", "11")
        first, second = manifest.entries
        assert (first.label, first.cluster, first.duration_seconds) == (1, Cluster.C28, 3)
        assert (second.label, second.cluster, second.day_offset) == (0, Cluster.C37, 2)
        assert len(ingest(tmp_path / "out")) == 2

    def test_rejects_missing_header_column(self, tmp_path: Path) -> None:
        pd.DataFrame({"id": [1]}).to_csv(tmp_path / "data.csv", index=False)
        pd.DataFrame({"id": [1], "tail_id": ["N1"]}).to_csv(tmp_path / "header.csv", index=False)

        with pytest.raises(IngestionError, match="missing column 'cluster'"):
            import_release(tmp_path / "data.csv", tmp_path / "header.csv", tmp_path / "out")


class TestWindowedSet:
    def test_stacks_windowed_flights(self) -> None:
        flights = [FlightSpec("a", "N1", steps=10).flight(), FlightSpec("b", "N2", steps=3, label=1).flight()]

        data = WindowedSet.from_flights(flights, 6)

        assert data.values.shape == (2, 6, CHANNEL_COUNT)
        assert data.values.dtype == np.float32
        np.testing.assert_array_equal(data.pad_counts, [0, 3])
        np.testing.assert_array_equal(data.labels, [0, 1])
        assert data.length == 6

    def test_subset_and_select_ids(self) -> None:
        flights = [FlightSpec(f"f{i}", f"N{i}", steps=4, seed=i).flight() for i in range(4)]
        data = WindowedSet.from_flights(flights, 4)

        picked = data.select_ids(["f3", "f1"])

        assert picked.flight_ids == ("f3", "f1")
        np.testing.assert_array_equal(picked.values[0], data.values[3])

    def test_from_manifest_matches_from_flights(self, dataset_factory: DatasetFactory) -> None:
        specs = make_specs(2, steps=12)
        manifest = ingest(dataset_factory(specs))

        data = WindowedSet.from_manifest(manifest, 8)

        assert data.flight_ids == manifest.flight_ids
        assert data.values.shape == (4, 8, CHANNEL_COUNT)

    def test_empty_set_keeps_shape(self) -> None:
        data = WindowedSet.from_flights([], 16)

        assert data.values.shape == (0, 16, CHANNEL_COUNT)
        assert len(data) == 0

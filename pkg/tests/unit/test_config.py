from pathlib import Path

import pytest

from flightmaint.config import DataConfig, RunConfig, load_config_file, parse_override, resolve_config, valid_keys
from flightmaint.dataset import Cluster
from flightmaint.errors import ConfigError
from flightmaint.models import ModelKind
from flightmaint.optim import ScheduleKind


def _write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


class TestResolveConfig:
    def test_defaults(self) -> None:
        run = resolve_config()

        assert run.model.kind is ModelKind.CONV_MHSA
        assert run.train.epochs == 30
        assert run.train.batch_size == 32
        assert run.train.steps_per_epoch == 250
        assert run.train.lr0 == 1e-5
        assert run.train.schedule is ScheduleKind.COSINE
        assert run.augment.p_apply == 0.4
        assert run.data == DataConfig()

    def test_model_kind_sets_training_defaults(self) -> None:
        run = resolve_config(overrides=["model.kind=vae-conv-gru"])

        assert run.train.steps_per_epoch == 1000
        assert run.train.lr0 == 1e-4

    def test_layers_apply_in_order(self, tmp_path: Path) -> None:
        text = 'seed = 1\n[train]\nepochs = 5\nbatch_size = 8\n[model]\nkind = "short-lstm"\n'
        path = _write(tmp_path / "run.toml", text)

        run = resolve_config(path, ["train.epochs=7"], flags={"train.epochs": 6, "seed": 2})

        assert (run.seed, run.train.epochs, run.train.batch_size) == (2, 7, 8)
        assert run.model.kind is ModelKind.SHORT_LSTM
        assert run.train.seed == 2

    def test_last_override_wins(self) -> None:
        run = resolve_config(overrides=["train.epochs=3", "train.epochs=4"])

        assert run.train.epochs == 4

    def test_integer_accepted_for_float(self) -> None:
        run = resolve_config(overrides=["train.lr0=1"])

        assert run.train.lr0 == 1.0

    def test_model_fields(self) -> None:
        run = resolve_config(overrides=["model.kind=conv-lstm-small", "model.units=8"])

        assert run.model.units == 8
        assert run.model_name == "conv-lstm-small"

    def test_cluster_selection(self) -> None:
        run = resolve_config(flags={"data.cluster": "C37"})

        assert run.data.cluster is Cluster.C37

    def test_extended_epochs(self) -> None:
        run = resolve_config(overrides=["model.kind=ex-conv-lstm"], flags={"train.extended": True})

        assert run.train.steps_per_epoch == 500
        assert run.extended

    @pytest.mark.parametrize(
        ("overrides", "match"),
        [
            pytest.param(["train.epoch=3"], "Unknown configuration key 'train.epoch'", id="unknown_key"),
            pytest.param(["train.epochs=three"], "expects int, got 'three'", id="wrong_type"),
            pytest.param(["train.augment=1"], "expects bool", id="int_for_bool"),
            pytest.param(["model.kind=lstm"], "Invalid model 'lstm'", id="unknown_model"),
            pytest.param(["train.schedule=linear"], "Invalid ScheduleKind 'linear'", id="unknown_schedule"),
            pytest.param(["data.cluster=c99"], "Invalid Cluster 'c99'", id="unknown_cluster"),
            pytest.param(["data.fold_count=1"], "at least 2", id="too_few_folds"),
            pytest.param(["augment.p_apply=2.0"], "augment.p_apply", id="probability"),
            pytest.param(["model.heads=3"], "heads × head_dim", id="indivisible_heads"),
            pytest.param(["epochs"], "key=value", id="no_equals"),
        ],
    )
    def test_rejects_invalid_values(self, overrides: list[str], match: str) -> None:
        with pytest.raises(ConfigError, match=match):
            resolve_config(overrides=overrides)

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(FileNotFoundError, match="Config file not found"):
            resolve_config(tmp_path / "missing.toml")

    def test_malformed_file(self, tmp_path: Path) -> None:
        path = _write(tmp_path / "bad.toml", "seed = \n")

        with pytest.raises(ConfigError, match="bad.toml"):
            resolve_config(path)


class TestRunConfigSave:
    def test_saved_config_resolves_to_the_same_run(self, tmp_path: Path) -> None:
        run = resolve_config(
            overrides=["model.kind=conv-mhsa-small", "model.dropout=0.1", "train.augment=true", "data.cluster=c28"]
        )

        run.save(tmp_path / "config.toml")
        reloaded = resolve_config(tmp_path / "config.toml")

        assert reloaded == run

    def test_saved_file_is_nested(self, tmp_path: Path) -> None:
        resolve_config().save(tmp_path / "config.toml")

        flat = load_config_file(tmp_path / "config.toml")

        assert flat["model.kind"] == "conv-mhsa"
        assert flat["data.cluster"] == "all"
        assert set(flat) <= set(valid_keys())

    def test_is_frozen(self) -> None:
        run: RunConfig = resolve_config()

        with pytest.raises(AttributeError):
            run.seed = 3  # type: ignore[misc]


class TestParseOverride:
    @pytest.mark.parametrize(
        ("text", "expected"),
        [
            pytest.param("train.epochs=3", ("train.epochs", 3), id="int"),
            pytest.param("train.lr0=1e-4", ("train.lr0", 1e-4), id="float"),
            pytest.param("train.augment=true", ("train.augment", True), id="bool"),
            pytest.param("model.kind=conv-lstm", ("model.kind", "conv-lstm"), id="bare_word"),
            pytest.param(' data.cluster = "c28" ', ("data.cluster", "c28"), id="quoted_with_spaces"),
        ],
    )
    def test_values_are_read_as_toml(self, text: str, expected: tuple[str, object]) -> None:
        assert parse_override(text) == expected

import sys
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

from flightmaint.augment import AugmentationPolicy
from flightmaint.dataset import Cluster
from flightmaint.errors import ConfigError
from flightmaint.models import SCALAR_FIELDS, ModelConfig, override_config, preset
from flightmaint.optim import ScheduleKind
from flightmaint.training import TrainConfig

ALL_CLUSTERS = "all"

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "model.kind": "conv-mhsa",
    "train.epochs": 30,
    "train.batch_size": 32,
    "train.schedule": ScheduleKind.COSINE.value,
    "train.final_ratio": 0.1,
    "train.augment": False,
    "train.extended": False,
    "train.kld_weight": 1e-3,
    "train.kld_warmup_epochs": 5,
    "train.eval_batch_size": 64,
    **{f"augment.{f.name}": f.default for f in fields(AugmentationPolicy)},
    "data.cluster": ALL_CLUSTERS,
    "data.fold_count": 5,
    "data.impute": False,
    "data.mask_padding": True,
    "data.filter_eligible": False,
}

# Keys without a fixed default: training values derived from the model kind, and architecture fields.
OPTIONAL_TYPES: dict[str, type] = {
    "train.steps_per_epoch": int,
    "train.lr0": float,
    **{
        f"model.{f.name}": f.type
        for cls in SCALAR_FIELDS
        for f in fields(cls)
        if f.name in SCALAR_FIELDS[cls]
    },
}


def valid_keys() -> list[str]:
    return sorted({*DEFAULTS, *OPTIONAL_TYPES})


def _expected_type(key: str) -> type:
    return type(DEFAULTS[key]) if key in DEFAULTS else OPTIONAL_TYPES[key]


def _check_key(key: str) -> None:
    if key not in DEFAULTS and key not in OPTIONAL_TYPES:
        raise ConfigError(f"Unknown configuration key '{key}'. Must be one of: {', '.join(valid_keys())}")


def _coerce(key: str, value: Any) -> Any:
    expected = _expected_type(key)
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if expected is int and isinstance(value, bool) or not isinstance(value, expected):
        raise ConfigError(f"Configuration key '{key}' expects {expected.__name__}, got {value!r}")
    return value


def flatten(nested: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for key, value in nested.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten(value, f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def unflatten(flat: Mapping[str, Any]) -> dict[str, Any]:
    nested: dict[str, Any] = {}
    for dotted, value in flat.items():
        *parents, leaf = dotted.split(".")
        node = nested
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return nested


def load_config_file(path: Path) -> dict[str, Any]:
    """Read a TOML configuration file into flat dotted keys.

    Raises:
        FileNotFoundError: If the file does not exist.
        ConfigError: If it is not valid TOML.
    """
    if not path.is_file():
        raise FileNotFoundError(f"Config file not found: {path}")
    try:
        with open(path, "rb") as f:
            return flatten(tomllib.load(f))
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None


def parse_override(text: str) -> tuple[str, Any]:
    """Parse a `key=value` override; the value is read as a TOML scalar, bare words as strings.

    Raises:
        ConfigError: If the text has no `=`.
    """
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"Override '{text}' must have the form key=value")
    try:
        value = tomllib.loads(f"value = {raw.strip()}")["value"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key.strip(), value


@dataclass(kw_only=True, frozen=True)
class DataConfig:
    cluster: Cluster | None = None
    fold_count: int = 5
    impute: bool = False
    mask_padding: bool = True
    filter_eligible: bool = False


@dataclass(kw_only=True, frozen=True)
class RunConfig:
    """Fully resolved configuration of one run."""

    seed: int
    model_name: str
    model: ModelConfig
    train: TrainConfig
    augment: AugmentationPolicy
    data: DataConfig
    extended: bool = False

    def to_flat(self) -> dict[str, Any]:
        flat: dict[str, Any] = {"seed": self.seed, "model.kind": self.model_name}
        flat.update({f"model.{name}": getattr(self.model, name) for name in SCALAR_FIELDS[type(self.model)]})
        for f in fields(TrainConfig):
            if f.name != "seed":
                value = getattr(self.train, f.name)
                flat[f"train.{f.name}"] = value.value if isinstance(value, ScheduleKind) else value
        flat["train.extended"] = self.extended
        flat.update({f"augment.{f.name}": getattr(self.augment, f.name) for f in fields(AugmentationPolicy)})
        flat.update(
            {
                "data.cluster": self.data.cluster.value if self.data.cluster else ALL_CLUSTERS,
                "data.fold_count": self.data.fold_count,
                "data.impute": self.data.impute,
                "data.mask_padding": self.data.mask_padding,
                "data.filter_eligible": self.data.filter_eligible,
            }
        )
        return flat

    def save(self, path: Path) -> None:
        """Persist the effective configuration as TOML."""
        with open(path, "wb") as f:
            tomli_w.dump(unflatten(self.to_flat()), f)


def _build(flat: Mapping[str, Any]) -> RunConfig:
    seed = flat["seed"]
    name = flat["model.kind"]
    base = preset(name)
    model_values = {
        k.removeprefix("model."): v for k, v in flat.items() if k.startswith("model.") and k != "model.kind"
    }
    try:
        model = override_config(base, model_values)
        train_values = {k.removeprefix("train."): v for k, v in flat.items() if k.startswith("train.")}
        extended = train_values.pop("extended")
        train_values["schedule"] = ScheduleKind.from_string(train_values["schedule"])
        train = TrainConfig.for_model(model.kind, extended=extended, seed=seed, **train_values)
        augment = AugmentationPolicy(
            **{k.removeprefix("augment."): v for k, v in flat.items() if k.startswith("augment.")}
        )
        cluster = flat["data.cluster"]
        data = DataConfig(
            cluster=None if cluster == ALL_CLUSTERS else Cluster.from_string(cluster),
            fold_count=flat["data.fold_count"],
            impute=flat["data.impute"],
            mask_padding=flat["data.mask_padding"],
            filter_eligible=flat["data.filter_eligible"],
        )
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if data.fold_count < 2:
        raise ConfigError(f"data.fold_count must be at least 2, got {data.fold_count}")
    return RunConfig(
        seed=seed, model_name=name, model=model, train=train, augment=augment, data=data, extended=extended
    )


def resolve_config(
    path: Path | None = None,
    overrides: Sequence[str] = (),
    *,
    flags: Mapping[str, Any] | None = None,
) -> RunConfig:
    """Resolve defaults, then the config file, then command-line flags, then `--set` overrides.

    Args:
        path: Optional TOML configuration file.
        overrides: `key=value` strings; the last occurrence of a key wins.
        flags: Values from dedicated command-line flags, keyed like the file.

    Returns:
        The resolved configuration.

    Raises:
        ConfigError: If a key is unknown or a value is invalid.
    """
    flat = dict(DEFAULTS)
    layers: list[Mapping[str, Any]] = []
    if path is not None:
        layers.append(load_config_file(path))
    layers.append(flags or {})
    layers.append(dict(parse_override(text) for text in overrides))
    for layer in layers:
        for key, value in layer.items():
            _check_key(key)
            flat[key] = _coerce(key, value)
    return _build(flat)

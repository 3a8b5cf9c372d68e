import argparse
import json
import logging
import math
import sys
from collections.abc import Callable, Mapping, Sequence
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from flightmaint.augment import apply_pipeline, temporal_cutmix, temporal_cutout, temporal_mixup
from flightmaint.config import RunConfig, resolve_config
from flightmaint.constants import (
    CONFIG_NAME,
    COUNTS_NAME,
    DEFAULT_WINDOW_LENGTH,
    EXCEEDANCE_NAME,
    FOLDS_NAME,
)
from flightmaint.dataset import (
    DatasetManifest,
    WindowedSet,
    import_release,
    ingest,
    read_flight_csv,
    window,
    write_dataset,
)
from flightmaint.errors import CheckpointError, ConfigError, FoldError, IngestionError, NonFiniteLossError, ShapeError
from flightmaint.folds import FoldPlan, make_folds
from flightmaint.models import Model, ModelKind, anomaly_score, attention_export, forward_classifier, load_model
from flightmaint.normalization import NormalizationStats, apply_normalization
from flightmaint.synthetic import synth_longrange
from flightmaint.tensor import no_grad
from flightmaint.training import (
    FoldJob,
    cross_validate,
    evaluate,
    normalize_set,
    run_fold,
    split_fold,
    vae_classify_eval,
)
from flightmaint.utils import FloatArray, prepare_output_dir

logger = logging.getLogger(__name__)

PROG = "flightmaint"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING_FILE = 4
EXIT_DATA = 5
EXIT_TRAINING = 6

# Checked in order; the first matching class decides the exit code.
EXIT_CODES: tuple[tuple[type[BaseException] | tuple[type[BaseException], ...], int], ...] = (
    (ConfigError, EXIT_CONFIG),
    (FileNotFoundError, EXIT_MISSING_FILE),
    ((IngestionError, FoldError, CheckpointError, ShapeError), EXIT_DATA),
    (NonFiniteLossError, EXIT_TRAINING),
)

AUGMENTATIONS = ("cutout", "cutmix", "mixup")


def configure_logging(verbosity: int) -> None:
    """Attach a single stderr handler to the package logger."""
    level = {-1: logging.WARNING, 0: logging.INFO}.get(verbosity, logging.DEBUG)
    package = logging.getLogger(PROG)
    for handler in list(package.handlers):
        package.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    package.addHandler(handler)
    package.setLevel(level)


def _json_line(record: Mapping[str, Any]) -> str:
    return json.dumps({k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in record.items()})


def _flags(args: argparse.Namespace) -> dict[str, Any]:
    """Configuration values given through dedicated flags; unset flags are left out."""
    mapping = {
        "model": "model.kind",
        "seed": "seed",
        "epochs": "train.epochs",
        "steps_per_epoch": "train.steps_per_epoch",
        "cluster": "data.cluster",
    }
    flags = {key: getattr(args, dest) for dest, key in mapping.items() if getattr(args, dest, None) is not None}
    if getattr(args, "augment", False):
        flags["train.augment"] = True
    if getattr(args, "extended", False):
        flags["train.extended"] = True
    return flags


def _resolve(args: argparse.Namespace) -> RunConfig:
    return resolve_config(args.config, args.set, flags=_flags(args))


def _resolve_for_checkpoint(args: argparse.Namespace) -> RunConfig:
    """Resolve on top of the configuration saved with the run unless `--config` names another file."""
    path = args.config
    if path is None:
        saved = [d / CONFIG_NAME for d in (args.checkpoint, args.checkpoint.parent) if (d / CONFIG_NAME).is_file()]
        path = saved[0] if saved else None
    return resolve_config(path, args.set, flags=_flags(args))


def _manifest(root: Path, run: RunConfig) -> DatasetManifest:
    manifest = ingest(
        root, filter_eligible=run.data.filter_eligible, validate_payloads=False, impute=run.data.impute
    ).for_cluster(run.data.cluster)
    if not len(manifest):
        raise IngestionError(f"{root}: no flights left after cluster and eligibility selection")
    return manifest


def _fold_plan(path: Path | None, root: Path, manifest: DatasetManifest, run: RunConfig) -> FoldPlan:
    """Load the fold file (explicit, or the dataset's own) restricted to `manifest`, or build a fresh plan."""
    path = path if path is not None else root / FOLDS_NAME
    if not path.is_file():
        if path != root / FOLDS_NAME:
            raise FileNotFoundError(f"Fold file not found: {path}")
        return make_folds(manifest, k=run.data.fold_count, seed=run.seed)
    plan = FoldPlan.load(path)
    ids = set(manifest.flight_ids)
    restricted = FoldPlan(
        fold_count=plan.fold_count,
        assignment={fid: fold for fid, fold in plan.assignment.items() if fid in ids},
        seed=plan.seed,
    )
    restricted.check_against(manifest)
    empty = [fold for fold, size in enumerate(restricted.sizes()) if size == 0]
    if empty:
        raise FoldError(f"{path}: folds {empty} hold none of the selected flights")
    return restricted


def _stats(model: Model, checkpoint: Path) -> NormalizationStats:
    if model.normalization is None:
        raise CheckpointError(f"{checkpoint}: model has no normalization statistics")
    return model.normalization


def _prepare_flight(path: Path, model: Model, run: RunConfig, checkpoint: Path) -> tuple[FloatArray, int]:
    """Window and normalize one flight file the way training prepared its samples."""
    values, _ = read_flight_csv(path, impute=run.data.impute)
    windowed = window(values, model.input_length)
    pad = windowed.pad_count if run.data.mask_padding else None
    x = apply_normalization(windowed.values.astype(np.float32), _stats(model, checkpoint), pad_count=pad)
    return x, windowed.pad_count


def cmd_ingest(args: argparse.Namespace) -> None:
    manifest = ingest(
        args.root,
        filter_eligible=args.filter_eligible,
        validate_payloads=not args.headers_only,
        impute=args.impute,
        workers=args.workers,
    )
    counts = manifest.counts_frame()
    counts.to_csv(args.out or args.root / COUNTS_NAME, index=False)
    print(counts.to_string(index=False))


def cmd_import_release(args: argparse.Namespace) -> None:
    out = prepare_output_dir(args.out, overwrite=args.overwrite)
    manifest = import_release(args.data, args.headers, out)
    logger.info("Imported %d flights into %s", len(manifest), out)


def cmd_folds(args: argparse.Namespace) -> None:
    run = _resolve(args)
    manifest = _manifest(args.root, run)
    out = args.out or args.root / FOLDS_NAME
    if out.exists() and not args.overwrite:
        raise FileExistsError(f"Fold file {out} exists; pass --overwrite to replace it")
    plan = make_folds(manifest, k=args.k if args.k is not None else run.data.fold_count, seed=run.seed)
    plan.save(out)
    logger.info("Wrote %d folds to %s (flights per fold: %s)", plan.fold_count, out, plan.sizes())


def _setup_run(args: argparse.Namespace) -> tuple[RunConfig, Path, WindowedSet, FoldPlan]:
    run = _resolve(args)
    out = prepare_output_dir(args.out, overwrite=args.overwrite)
    run.save(out / CONFIG_NAME)
    manifest = _manifest(args.root, run)
    plan = _fold_plan(args.folds, args.root, manifest, run)
    plan.save(out / FOLDS_NAME)
    data = WindowedSet.from_manifest(manifest, run.model.input_length, impute=run.data.impute)
    logger.info("Loaded %d flights windowed to %d rows", len(data), data.length)
    return run, out, data, plan


def cmd_train(args: argparse.Namespace) -> None:
    run, out, data, plan = _setup_run(args)
    train_set, val_set = split_fold(data, plan, args.fold)
    report = run_fold(
        FoldJob(
            name=run.model_name,
            model_config=run.model,
            train_config=run.train,
            policy=run.augment,
            train_set=train_set,
            val_set=val_set,
            fold=args.fold,
            output_dir=out,
            mask_padding=run.data.mask_padding,
        )
    )
    print(_json_line({"model": run.model_name, "fold": args.fold, **report.best_values()}))


def cmd_cv(args: argparse.Namespace) -> None:
    run, out, data, plan = _setup_run(args)
    summary = cross_validate(
        run.model,
        data,
        plan,
        run.train,
        policy=run.augment,
        output_dir=out,
        jobs=args.jobs,
        name=run.model_name,
        mask_padding=run.data.mask_padding,
    )
    print(_json_line({"model": summary.model, "folds": summary.fold_count, **summary.means}))


def _evaluation_set(args: argparse.Namespace, model: Model, run: RunConfig) -> WindowedSet:
    manifest = _manifest(args.root, run)
    data = WindowedSet.from_manifest(manifest, model.input_length, impute=run.data.impute)
    if args.fold is not None:
        _, data = split_fold(data, _fold_plan(args.folds, args.root, manifest, run), args.fold)
    return normalize_set(data, _stats(model, args.checkpoint), mask_padding=run.data.mask_padding)


def cmd_eval(args: argparse.Namespace) -> None:
    model = load_model(args.checkpoint)
    run = _resolve_for_checkpoint(args)
    data = _evaluation_set(args, model, run)
    head = {"model": model.kind.value, "fold": args.fold, "flights": len(data)}
    if model.kind.is_classifier:
        nan = float("nan")
        metrics = evaluate(
            model, data, epoch=0, lr=nan, train_loss=nan, step_ms=nan, batch_size=run.train.eval_batch_size
        )
        values = {"loss": metrics.loss, "roc_auc": metrics.roc_auc, "pr_auc": metrics.pr_auc, "acc": metrics.acc}
        print(_json_line({**head, **values}))
    else:
        evaluation = vae_classify_eval(model, data, batch_size=run.train.eval_batch_size)
        print(_json_line({**head, "roc_auc": evaluation.roc_auc, "pr_auc": evaluation.pr_auc, "rmse": evaluation.rmse}))


def cmd_vae_curves(args: argparse.Namespace) -> None:
    model = load_model(args.checkpoint)
    if model.kind.is_classifier:
        raise ConfigError(f"vae-curves needs a {ModelKind.VAE_CONV_GRU.value} checkpoint, got {model.kind.value}")
    run = _resolve_for_checkpoint(args)
    data = _evaluation_set(args, model, run)
    evaluation = vae_classify_eval(model, data, points=args.points, batch_size=run.train.eval_batch_size)
    out = prepare_output_dir(args.out, overwrite=args.overwrite)
    evaluation.curves_frame().to_csv(out / EXCEEDANCE_NAME, index=False, float_format="%.9g")
    pd.DataFrame({"flight_id": data.flight_ids, "label": data.labels, "score": evaluation.scores}).to_csv(
        out / "scores.csv", index=False, float_format="%.9g"
    )
    print(_json_line({"roc_auc": evaluation.roc_auc, "pr_auc": evaluation.pr_auc, "rmse": evaluation.rmse}))


def cmd_predict(args: argparse.Namespace) -> None:
    model = load_model(args.checkpoint)
    run = _resolve_for_checkpoint(args)
    for path in args.flight:
        x, pad = _prepare_flight(path, model, run, args.checkpoint)
        if model.kind.is_classifier:
            with no_grad():
                out = forward_classifier(model, x[None], pad_counts=np.array([pad]))
            score = float(out.probabilities.data[0])
        else:
            score = float(anomaly_score(model, x[None])[0])
        print(f"{path.stem},{score:.9g}")


def cmd_attention_export(args: argparse.Namespace) -> None:
    model = load_model(args.checkpoint)
    if model.kind is not ModelKind.CONV_MHSA:
        raise ConfigError(f"Attention maps need a {ModelKind.CONV_MHSA.value} checkpoint, got {model.kind.value}")
    run = _resolve_for_checkpoint(args)
    x, _ = _prepare_flight(args.flight, model, run, args.checkpoint)
    out = prepare_output_dir(args.out, overwrite=args.overwrite)
    written = attention_export(model, x, out)
    logger.info("Wrote %d attention maps to %s", len(written), out)


def cmd_augment_preview(args: argparse.Namespace) -> None:
    run = _resolve(args)
    values, names = read_flight_csv(args.flight, impute=run.data.impute)
    x = window(values, args.length).values
    donor = window(read_flight_csv(args.donor, impute=run.data.impute)[0], args.length).values if args.donor else x
    rng = np.random.default_rng(run.seed)
    ops: dict[str, Callable[[], FloatArray]] = {
        "cutout": lambda: temporal_cutout(x, run.augment, rng),
        "cutmix": lambda: temporal_cutmix(x, donor, run.augment, rng),
        "mixup": lambda: temporal_mixup(x, donor, run.augment, rng),
    }
    augmented = ops[args.only]() if args.only else apply_pipeline(x, lambda _: donor, run.augment, rng)
    out = prepare_output_dir(args.out, overwrite=args.overwrite)
    run.save(out / CONFIG_NAME)
    for name, matrix in (("original", x), ("augmented", augmented)):
        pd.DataFrame(matrix, columns=list(names)).to_csv(out / f"{name}.csv", index=False, float_format="%.9g")
    changed = int(np.count_nonzero(augmented != x))
    logger.info("%d of %d cells changed", changed, x.size)


def cmd_synth(args: argparse.Namespace) -> None:
    out = prepare_output_dir(args.out, overwrite=args.overwrite)
    synthetic = synth_longrange(
        args.n, args.length, args.gap, args.seed, pulse_width=args.pulse_width, amplitude=args.amplitude
    )
    manifest = write_dataset(out, synthetic.flights)
    pd.DataFrame(
        {
            "flight_id": manifest.flight_ids,
            "first": synthetic.markers[:, 0],
            "second": synthetic.markers[:, 1],
        }
    ).to_csv(out / "markers.csv", index=False)
    logger.info("Wrote %d synthetic flights to %s", len(manifest), out)


def _add_config_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="TOML configuration file")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", help="Override a configuration key (repeatable)"
    )
    parser.add_argument("--seed", type=int, help="Global seed")
    parser.add_argument("--cluster", help="Restrict to one cluster (c28, c37) or 'all'")


def _add_output(parser: argparse.ArgumentParser, *, required: bool = True) -> None:
    parser.add_argument("--out", type=Path, required=required, help="Output directory")
    parser.add_argument("--overwrite", action="store_true", help="Replace existing output")


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    _add_config_options(parser)
    parser.add_argument("--root", type=Path, required=True, help="Dataset directory")
    parser.add_argument("--folds", type=Path, help="Fold file (defaults to the dataset's folds.csv, else a fresh plan)")
    parser.add_argument("--model", help="Model preset, e.g. conv-mhsa or conv-mhsa-small")
    parser.add_argument("--augment", action="store_true", help="Enable temporal augmentation")
    parser.add_argument("--extended", action="store_true", help="Use the extended steps per epoch (ex-conv-lstm only)")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--steps-per-epoch", type=int)
    _add_output(parser)


def _add_checkpoint_options(parser: argparse.ArgumentParser) -> None:
    _add_config_options(parser)
    parser.add_argument("--checkpoint", type=Path, required=True, help="Directory written by train or cv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description="Flight maintenance classification toolkit")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_const", const=1, default=0, dest="verbosity")
    verbosity.add_argument("-q", "--quiet", action="store_const", const=-1, dest="verbosity")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = commands.add_parser("ingest", help="Validate a dataset and write per-cluster label counts")
    p.add_argument("--root", type=Path, required=True)
    p.add_argument("--filter-eligible", action="store_true", help="Drop short flights and distant maintenance days")
    p.add_argument("--impute", action="store_true", help="Forward-fill missing cells")
    p.add_argument("--headers-only", action="store_true", help="Check file headers instead of full payloads")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path, help="Counts CSV (defaults to counts.csv in the dataset)")
    p.set_defaults(handler=cmd_ingest)

    p = commands.add_parser("import-release", help="Convert the public release tables into the canonical layout")
    p.add_argument("--data", type=Path, required=True, help="Per-second rows")
    p.add_argument("--headers", type=Path, required=True, help="One row per flight")
    _add_output(p)
    p.set_defaults(handler=cmd_import_release)

    p = commands.add_parser("folds", help="Write a tail-grouped fold assignment")
    _add_config_options(p)
    p.add_argument("--root", type=Path, required=True)
    p.add_argument("--k", type=int, help="Number of folds (defaults to data.fold_count)")
    p.add_argument("--out", type=Path, help="Fold file (defaults to folds.csv in the dataset)")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(handler=cmd_folds)

    p = commands.add_parser("train", help="Train one fold")
    _add_run_options(p)
    p.add_argument("--fold", type=int, default=0)
    p.set_defaults(handler=cmd_train)

    p = commands.add_parser("cv", help="Cross-validate over every fold")
    _add_run_options(p)
    p.add_argument("--jobs", type=int, default=1, help="Worker processes")
    p.set_defaults(handler=cmd_cv)

    p = commands.add_parser("eval", help="Score a checkpoint on a dataset or one of its folds")
    _add_checkpoint_options(p)
    p.add_argument("--root", type=Path, required=True)
    p.add_argument("--folds", type=Path)
    p.add_argument("--fold", type=int)
    p.set_defaults(handler=cmd_eval)

    p = commands.add_parser("predict", help="Print flight_id,probability for flight files")
    _add_checkpoint_options(p)
    p.add_argument("--flight", type=Path, action="append", required=True)
    p.set_defaults(handler=cmd_predict)

    p = commands.add_parser("augment-preview", help="Write a flight before and after augmentation")
    _add_config_options(p)
    p.add_argument("--flight", type=Path, required=True)
    p.add_argument("--donor", type=Path, help="Donor flight for cutmix and mixup (defaults to the flight itself)")
    p.add_argument("--length", type=int, default=DEFAULT_WINDOW_LENGTH)
    p.add_argument("--only", choices=AUGMENTATIONS, help="Apply one augmentation unconditionally")
    _add_output(p)
    p.set_defaults(handler=cmd_augment_preview)

    p = commands.add_parser("attention-export", help="Write per-head attention maps of one flight")
    _add_checkpoint_options(p)
    p.add_argument("--flight", type=Path, required=True)
    _add_output(p)
    p.set_defaults(handler=cmd_attention_export)

    p = commands.add_parser("synth", help="Generate the long-range synthetic benchmark")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--gap", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pulse-width", type=int, default=16)
    p.add_argument("--amplitude", type=float, default=5.0)
    _add_output(p)
    p.set_defaults(handler=cmd_synth)

    p = commands.add_parser("vae-curves", help="Write per-class exceedance curves of a VAE checkpoint")
    _add_checkpoint_options(p)
    p.add_argument("--root", type=Path, required=True)
    p.add_argument("--folds", type=Path)
    p.add_argument("--fold", type=int)
    p.add_argument("--points", type=int, default=101)
    _add_output(p)
    p.set_defaults(handler=cmd_vae_curves)
    return parser


def exit_code(error: BaseException) -> int:
    for kinds, code in EXIT_CODES:
        if isinstance(error, kinds):
            return code
    return EXIT_FAILURE


def main(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand and return its exit code.

    Failures print a single `flightmaint: error: <message>` line to stderr.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    configure_logging(args.verbosity)
    try:
        args.handler(args)
    except Exception as e:
        logger.debug("Command %s failed", args.command, exc_info=True)
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return exit_code(e)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

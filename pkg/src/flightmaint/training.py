import json
import logging
import math
import time
import warnings
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, NamedTuple

try:
    from typing import Self
except ImportError:  # pragma: <3.11 cover
    from typing_extensions import Self

import numpy as np
import pandas as pd

from flightmaint.augment import AugmentationPolicy, apply_pipeline, sample_rng
from flightmaint.constants import CV_SUMMARY_NAME, EXCEEDANCE_NAME, LOSS_CURVE_NAME, RUN_RECORDS_NAME
from flightmaint.dataset import WindowedSet
from flightmaint.errors import ConfigError, FoldError, NonFiniteLossError
from flightmaint.folds import FoldPlan
from flightmaint.losses import bce_loss, kld_mixture, mse_loss
from flightmaint.metrics import accuracy, exceedance_curve, pr_auc, roc_auc
from flightmaint.models import (
    Model,
    ModelConfig,
    ModelKind,
    anomaly_score,
    build,
    forward_classifier,
    forward_vae,
    save_model,
)
from flightmaint.normalization import NormalizationStats, apply_normalization, fit_normalization
from flightmaint.optim import AdamState, LearningRateSchedule, ScheduleKind, adam_step, make_schedule, zero_grad
from flightmaint.tensor import Tensor, no_grad
from flightmaint.utils import FloatArray, IntArray

logger = logging.getLogger(__name__)

# Metric name -> True when larger is better.
METRICS: dict[str, bool] = {"loss": False, "roc_auc": True, "pr_auc": True, "acc": True}

_STEPS_PER_EPOCH = {
    ModelKind.CONV_MHSA: 250,
    ModelKind.CONV_LSTM: 250,
    ModelKind.EX_CONV_LSTM: 250,
    ModelKind.SHORT_LSTM: 250,
    ModelKind.VAE_CONV_GRU: 1000,
}
_EXTENDED_STEPS = 500
_LEARNING_RATES = {
    ModelKind.CONV_MHSA: 1e-5,
    ModelKind.CONV_LSTM: 2e-5,
    ModelKind.EX_CONV_LSTM: 2e-5,
    ModelKind.SHORT_LSTM: 2e-5,
    ModelKind.VAE_CONV_GRU: 1e-4,
}


@dataclass(kw_only=True, frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    steps_per_epoch: int = 250
    lr0: float = 1e-5
    schedule: ScheduleKind = ScheduleKind.COSINE
    final_ratio: float = 0.1
    augment: bool = False
    seed: int = 0
    kld_weight: float = 1e-3
    kld_warmup_epochs: int = 5
    eval_batch_size: int = 64

    def __post_init__(self) -> None:
        for name in ("epochs", "batch_size", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train.{name} must be a positive integer, got {getattr(self, name)}")
        if self.steps_per_epoch < 0 or self.kld_warmup_epochs < 0:
            raise ConfigError("train.steps_per_epoch and train.kld_warmup_epochs must be non-negative")
        if not self.lr0 > 0:
            raise ConfigError(f"train.lr0 must be positive, got {self.lr0}")
        if not 0 < self.final_ratio <= 1:
            raise ConfigError(f"train.final_ratio must lie in (0, 1], got {self.final_ratio}")
        if self.kld_weight < 0:
            raise ConfigError(f"train.kld_weight must be non-negative, got {self.kld_weight}")

    @classmethod
    def for_model(cls, kind: ModelKind, *, extended: bool = False, **overrides: Any) -> Self:
        """Protocol defaults for an architecture: steps per epoch and starting learning rate.

        Args:
            kind: Model family.
            extended: Use the longer 500-step epochs of the extended conv-LSTM runs; other families keep
                their usual epoch length.
            **overrides: Field values replacing the defaults.

        Returns:
            The training configuration.
        """
        steps = _EXTENDED_STEPS if extended and kind is ModelKind.EX_CONV_LSTM else _STEPS_PER_EPOCH[kind]
        values: dict[str, Any] = {"steps_per_epoch": steps, "lr0": _LEARNING_RATES[kind]}
        values.update(overrides)
        return cls(**values)

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    def learning_rate_schedule(self) -> LearningRateSchedule:
        return make_schedule(self.schedule, lr0=self.lr0, total_steps=self.total_steps, final_ratio=self.final_ratio)

    def kld_scale(self, epoch: int) -> float:
        """KLD weight for a 1-based epoch, ramped linearly over the warm-up epochs."""
        if self.kld_warmup_epochs == 0:
            return self.kld_weight
        return self.kld_weight * min(1.0, epoch / self.kld_warmup_epochs)


@dataclass(kw_only=True, frozen=True)
class EpochMetrics:
    """Validation metrics after an epoch; epoch 0 is the evaluation before any update."""

    epoch: int
    lr: float
    train_loss: float
    loss: float
    roc_auc: float
    pr_auc: float
    acc: float
    step_ms: float

    def value(self, metric: str) -> float:
        return float(getattr(self, metric))


@dataclass(kw_only=True, frozen=True)
class EvalReport:
    model: str
    fold: int
    epochs: tuple[EpochMetrics, ...]

    def best_epochs(self) -> dict[str, int]:
        """Epoch index of the best value of each metric, chosen independently (-1 if never defined)."""
        best: dict[str, int] = {}
        for metric, larger in METRICS.items():
            values = np.array([e.value(metric) for e in self.epochs], dtype=np.float64)
            if values.size == 0 or np.all(np.isnan(values)):
                best[metric] = -1
                continue
            position = int(np.nanargmax(values) if larger else np.nanargmin(values))
            best[metric] = self.epochs[position].epoch
        return best

    def best_values(self) -> dict[str, float]:
        by_epoch = {e.epoch: e for e in self.epochs}
        return {
            metric: by_epoch[epoch].value(metric) if epoch >= 0 else float("nan")
            for metric, epoch in self.best_epochs().items()
        }

    @property
    def mean_step_ms(self) -> float:
        times = [e.step_ms for e in self.epochs if not math.isnan(e.step_ms)]
        return float(np.mean(times)) if times else float("nan")

    def loss_curve(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "epoch": [e.epoch for e in self.epochs],
                "train_loss": [e.train_loss for e in self.epochs],
                "val_loss": [e.loss for e in self.epochs],
            }
        )


@dataclass(kw_only=True, frozen=True)
class CVSummary:
    """Mean over folds of each metric's per-fold best value."""

    model: str
    fold_count: int
    per_fold: tuple[Mapping[str, float], ...]
    means: Mapping[str, float]

    def to_frame(self) -> pd.DataFrame:
        rows = [{"model": self.model, "fold": str(i), **values} for i, values in enumerate(self.per_fold)]
        rows.append({"model": self.model, "fold": "mean", **self.means})
        return pd.DataFrame(rows, columns=["model", "fold", *METRICS])

    def save(self, path: Path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.6f")


class RunRecorder:
    """Appends one JSON object per epoch to a line-delimited run log."""

    def __init__(self, path: Path) -> None:
        self.path = path
        path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, record: Mapping[str, Any]) -> None:
        clean = {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in record.items()}
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(clean) + "\n")

    def epoch(self, model: str, fold: int, metrics: EpochMetrics) -> None:
        values = asdict(metrics)
        self.write(
            {
                "model": model,
                "fold": fold,
                **{k: values[k] for k in ("epoch", "lr", "loss", "roc_auc", "pr_auc", "acc", "step_ms")},
                "train_loss": values["train_loss"],
            }
        )

    @staticmethod
    def read(path: Path) -> list[dict[str, Any]]:
        with open(path, encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]


class TrainResult(NamedTuple):
    model: Model
    report: EvalReport


def _safe(metric: Any, scores: FloatArray, labels: FloatArray) -> float:
    try:
        return float(metric(scores, labels))
    except ValueError:
        return float("nan")


def predict(model: Model, data: WindowedSet, *, batch_size: int = 64) -> FloatArray:
    """Probabilities for every flight of a normalized set, computed without recording gradients."""
    chunks = []
    with no_grad():
        for start in range(0, len(data), batch_size):
            stop = start + batch_size
            out = forward_classifier(model, data.values[start:stop], pad_counts=data.pad_counts[start:stop])
            chunks.append(out.probabilities.data.astype(np.float64))
    return np.concatenate(chunks) if chunks else np.zeros(0)


def evaluate(
    model: Model, data: WindowedSet, *, epoch: int, lr: float, train_loss: float, step_ms: float, batch_size: int
) -> EpochMetrics:
    """Score a classifier on a full validation set; metrics undefined on this set become NaN."""
    probabilities = predict(model, data, batch_size=batch_size)
    with no_grad():
        loss = bce_loss(Tensor(probabilities), data.labels).item() if len(data) else float("nan")
    return EpochMetrics(
        epoch=epoch,
        lr=lr,
        train_loss=train_loss,
        loss=loss,
        roc_auc=_safe(roc_auc, probabilities, data.labels),
        pr_auc=_safe(pr_auc, probabilities, data.labels),
        acc=accuracy(probabilities, data.labels),
        step_ms=step_ms,
    )


def _streams(seed: int, fold: int) -> tuple[np.random.Generator, np.random.Generator]:
    batches, model = np.random.SeedSequence([seed, fold]).spawn(2)
    return np.random.default_rng(batches), np.random.default_rng(model)


def _augment_batch(
    data: WindowedSet, idx: IntArray, policy: AugmentationPolicy, *, seed: int, epoch: int, step: int
) -> FloatArray:
    def donor(rng: np.random.Generator) -> FloatArray:
        return data.values[int(rng.integers(len(data)))]

    batch = [
        apply_pipeline(
            data.values[i],
            donor,
            policy,
            sample_rng(seed, data.flight_ids[i], epoch, draw=step * len(idx) + position),
        )
        for position, i in enumerate(idx)
    ]
    return np.stack(batch)


def _check_finite(loss: float, *, step: int, lr: float, data: WindowedSet, idx: IntArray) -> None:
    if not math.isfinite(loss):
        raise NonFiniteLossError(step=step, lr=lr, batch_ids=[data.flight_ids[i] for i in idx], loss=loss)


def train(
    model: Model,
    train_set: WindowedSet,
    val_set: WindowedSet,
    config: TrainConfig,
    *,
    policy: AugmentationPolicy | None = None,
    fold: int = 0,
    recorder: RunRecorder | None = None,
    name: str | None = None,
) -> TrainResult:
    """Train a classifier with Adam on batches drawn uniformly with replacement.

    The validation fold is evaluated before training and after every epoch. With `config.augment`
    each drawn sample goes through the augmentation pipeline, donors coming from `train_set` only.

    Args:
        model: Classifier to update in place.
        train_set: Normalized training flights.
        val_set: Normalized validation flights.
        config: Training hyperparameters.
        policy: Augmentation policy (defaults apply when None).
        fold: Fold index, recorded and mixed into the random streams.
        recorder: Optional run log receiving one record per evaluation.
        name: Model name used in records; defaults to the model kind.

    Returns:
        The trained model and its report.

    Raises:
        ValueError: If the training set is empty.
        NonFiniteLossError: If a step produces a NaN or infinite loss.
    """
    if len(train_set) == 0:
        raise ValueError("Cannot train on an empty training set")
    name = name or model.kind.value
    policy = policy or AugmentationPolicy()
    schedule = config.learning_rate_schedule()
    state = AdamState()
    params = model.parameters()
    batch_rng, model_rng = _streams(config.seed, fold)

    def record(metrics: EpochMetrics) -> None:
        epochs.append(metrics)
        logger.info(
            "%s fold %d epoch %d: loss=%.4f roc_auc=%.4f pr_auc=%.4f acc=%.4f",
            name,
            fold,
            metrics.epoch,
            metrics.loss,
            metrics.roc_auc,
            metrics.pr_auc,
            metrics.acc,
        )
        if recorder is not None:
            recorder.epoch(name, fold, metrics)

    epochs: list[EpochMetrics] = []
    nan = float("nan")
    record(
        evaluate(
            model, val_set, epoch=0, lr=schedule(0), train_loss=nan, step_ms=nan, batch_size=config.eval_batch_size
        )
    )
    step = 0
    for epoch in range(1, config.epochs + 1 if config.steps_per_epoch else 1):
        losses, elapsed, lr = [], 0.0, schedule(step)
        for _ in range(config.steps_per_epoch):
            idx = batch_rng.integers(0, len(train_set), size=config.batch_size)
            x = train_set.values[idx]
            if config.augment:
                x = _augment_batch(train_set, idx, policy, seed=config.seed, epoch=epoch, step=step)
            lr = schedule(step)
            started = time.perf_counter()
            zero_grad(params)
            out = forward_classifier(model, x, rng=model_rng, pad_counts=train_set.pad_counts[idx])
            loss = bce_loss(out.probabilities, train_set.labels[idx])
            _check_finite(loss.item(), step=step, lr=lr, data=train_set, idx=idx)
            loss.backward()
            adam_step(params, state, lr)
            elapsed += time.perf_counter() - started
            losses.append(loss.item())
            step += 1
        record(
            evaluate(
                model,
                val_set,
                epoch=epoch,
                lr=lr,
                train_loss=float(np.mean(losses)),
                step_ms=1000.0 * elapsed / config.steps_per_epoch,
                batch_size=config.eval_batch_size,
            )
        )
    return TrainResult(model, EvalReport(model=name, fold=fold, epochs=tuple(epochs)))


@dataclass(kw_only=True, frozen=True)
class VAEEpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    kld: float
    recon_mse: float
    rmse: float
    step_ms: float


@dataclass(kw_only=True, frozen=True)
class VAEReport:
    model: str
    fold: int
    epochs: tuple[VAEEpochMetrics, ...]

    def reconstruction_curve(self) -> FloatArray:
        return np.array([e.recon_mse for e in self.epochs], dtype=np.float64)

    def loss_curve(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "epoch": [e.epoch for e in self.epochs],
                "train_loss": [e.train_loss for e in self.epochs],
                "val_loss": [e.recon_mse for e in self.epochs],
            }
        )


class VAETrainResult(NamedTuple):
    model: Model
    report: VAEReport


def train_vae(
    model: Model,
    train_set: WindowedSet,
    config: TrainConfig,
    *,
    val_set: WindowedSet | None = None,
    fold: int = 0,
    recorder: RunRecorder | None = None,
    name: str | None = None,
) -> VAETrainResult:
    """Train the VAE on post-maintenance flights: reconstruction MSE plus warmed-up KLD.

    After every epoch the deterministic reconstruction error of `val_set` (or of the training
    set when no validation set is given) is recorded with its RMSE.

    Args:
        model: VAE to update in place.
        train_set: Normalized post-maintenance (label 0) flights.
        config: Training hyperparameters (`kld_weight`, `kld_warmup_epochs`).
        val_set: Optional set whose reconstruction error is tracked.
        fold: Fold index.
        recorder: Optional run log.
        name: Model name used in records.

    Returns:
        The trained model and its per-epoch reconstruction report.

    Raises:
        ValueError: If the training set is empty or holds pre-maintenance flights.
        NonFiniteLossError: If a step produces a NaN or infinite loss.
    """
    if len(train_set) == 0:
        raise ValueError("Cannot train on an empty training set")
    if np.any(train_set.labels == 1):
        raise ValueError("VAE training takes post-maintenance (label 0) flights only")
    name = name or model.kind.value
    tracked = val_set if val_set is not None else train_set
    schedule = config.learning_rate_schedule()
    state = AdamState()
    params = model.parameters()
    batch_rng, model_rng = _streams(config.seed, fold)
    nan = float("nan")
    epochs: list[VAEEpochMetrics] = []

    def record(epoch: int, lr: float, train_loss: float, kld: float, step_ms: float) -> None:
        mse = float(np.mean(anomaly_score(model, tracked.values, batch_size=config.eval_batch_size)))
        metrics = VAEEpochMetrics(
            epoch=epoch, lr=lr, train_loss=train_loss, kld=kld, recon_mse=mse, rmse=math.sqrt(mse), step_ms=step_ms
        )
        epochs.append(metrics)
        logger.info("%s fold %d epoch %d: recon_mse=%.5f rmse=%.5f kld=%.4f", name, fold, epoch, mse, metrics.rmse, kld)
        if recorder is not None:
            recorder.write(
                {
                    "model": name,
                    "fold": fold,
                    "epoch": epoch,
                    "lr": lr,
                    "loss": mse,
                    "roc_auc": nan,
                    "pr_auc": nan,
                    "acc": nan,
                    "step_ms": step_ms,
                    "train_loss": train_loss,
                    "kld": kld,
                    "rmse": metrics.rmse,
                }
            )

    record(0, schedule(0), nan, nan, nan)
    step = 0
    for epoch in range(1, config.epochs + 1 if config.steps_per_epoch else 1):
        losses, klds, elapsed, lr = [], [], 0.0, schedule(step)
        weight = config.kld_scale(epoch)
        for _ in range(config.steps_per_epoch):
            idx = batch_rng.integers(0, len(train_set), size=config.batch_size)
            x = train_set.values[idx]
            lr = schedule(step)
            started = time.perf_counter()
            zero_grad(params)
            out = forward_vae(model, x, rng=model_rng)
            kld = kld_mixture(out.mix_logits, out.mu, out.logvar)
            loss = mse_loss(out.reconstruction, x) + kld * weight
            _check_finite(loss.item(), step=step, lr=lr, data=train_set, idx=idx)
            loss.backward()
            adam_step(params, state, lr)
            elapsed += time.perf_counter() - started
            losses.append(loss.item())
            klds.append(kld.item())
            step += 1
        record(epoch, lr, float(np.mean(losses)), float(np.mean(klds)), 1000.0 * elapsed / config.steps_per_epoch)
    return VAETrainResult(model, VAEReport(model=name, fold=fold, epochs=tuple(epochs)))


@dataclass(kw_only=True, frozen=True)
class VAEEvaluation:
    """Anomaly-score evaluation of a VAE: ranking metrics and per-class exceedance curves."""

    scores: FloatArray
    labels: FloatArray
    roc_auc: float
    pr_auc: float
    rmse: float
    thresholds: FloatArray
    curves: Mapping[int, FloatArray] = field(default_factory=dict)

    def curves_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"threshold": self.thresholds})
        for label, curve in sorted(self.curves.items()):
            frame[f"class_{label}"] = curve
        return frame


def vae_classify_eval(
    model: Model, val_set: WindowedSet, *, thresholds: FloatArray | None = None, points: int = 101, batch_size: int = 16
) -> VAEEvaluation:
    """Use reconstruction error as a pre-maintenance score and summarise it per class.

    Args:
        model: Trained VAE.
        val_set: Normalized validation flights of both classes.
        thresholds: MSE thresholds for the exceedance curves; defaults to `points` values spanning
            [0, max score].
        points: Number of default thresholds.
        batch_size: Scoring batch size.

    Returns:
        Scores, ROC-AUC and PR-AUC (NaN when undefined), RMSE and one exceedance curve per class present.
    """
    scores = anomaly_score(model, val_set.values, batch_size=batch_size)
    if thresholds is None:
        top = float(scores.max()) if scores.size else 1.0
        thresholds = np.linspace(0.0, top, points)
    curves = {
        int(label): exceedance_curve(scores[val_set.labels == label], thresholds)
        for label in np.unique(val_set.labels)
    }
    return VAEEvaluation(
        scores=scores,
        labels=val_set.labels,
        roc_auc=_safe(roc_auc, scores, val_set.labels),
        pr_auc=_safe(pr_auc, scores, val_set.labels),
        rmse=math.sqrt(float(np.mean(scores))) if scores.size else float("nan"),
        thresholds=np.asarray(thresholds, dtype=np.float64),
        curves=curves,
    )


def _mean_defined(values: Sequence[float]) -> float:
    defined = [v for v in values if not math.isnan(v)]
    return float(np.mean(defined)) if defined else float("nan")


def summarize_reports(reports: Iterable[EvalReport], fold_count: int) -> CVSummary:
    """Average each metric's per-fold best value over exactly `fold_count` folds.

    Raises:
        FoldError: If a fold report is missing or duplicated.
    """
    by_fold: dict[int, EvalReport] = {}
    for report in reports:
        if report.fold in by_fold:
            raise FoldError(f"Duplicate report for fold {report.fold}")
        by_fold[report.fold] = report
    missing = sorted(set(range(fold_count)) - set(by_fold))
    if missing or len(by_fold) != fold_count:
        raise FoldError(f"Missing fold reports: {missing or sorted(set(by_fold) - set(range(fold_count)))}")
    ordered = [by_fold[f] for f in range(fold_count)]
    per_fold = tuple(report.best_values() for report in ordered)
    means = {metric: _mean_defined([v[metric] for v in per_fold]) for metric in METRICS}
    return CVSummary(model=ordered[0].model, fold_count=fold_count, per_fold=per_fold, means=means)


def normalize_set(data: WindowedSet, stats: NormalizationStats, *, mask_padding: bool = True) -> WindowedSet:
    pads = data.pad_counts if mask_padding else None
    return data.with_values(apply_normalization(data.values, stats, pad_count=pads))


def split_fold(data: WindowedSet, plan: FoldPlan, fold: int) -> tuple[WindowedSet, WindowedSet]:
    """Training and validation subsets of `data` for one fold.

    Raises:
        FoldError: If the fold is out of range or a flight is missing from the plan.
    """
    if not 0 <= fold < plan.fold_count:
        raise FoldError(f"Fold {fold} outside [0, {plan.fold_count})")
    unknown = [fid for fid in data.flight_ids if fid not in plan.assignment]
    if unknown:
        raise FoldError(f"Flights missing from the fold plan: {', '.join(unknown[:5])}")
    train_idx = [i for i, fid in enumerate(data.flight_ids) if plan.assignment[fid] != fold]
    val_idx = [i for i, fid in enumerate(data.flight_ids) if plan.assignment[fid] == fold]
    return data.subset(train_idx), data.subset(val_idx)


@dataclass(kw_only=True, frozen=True)
class FoldJob:
    """Everything one cross-validation fold needs; picklable for worker processes."""

    name: str
    model_config: ModelConfig
    train_config: TrainConfig
    policy: AugmentationPolicy
    train_set: WindowedSet
    val_set: WindowedSet
    fold: int
    output_dir: Path | None = None
    mask_padding: bool = True


def run_fold(job: FoldJob) -> EvalReport:
    """Fit normalization on the training fold, train, and write the fold's artifacts.

    The VAE trains on the fold's post-maintenance flights and is scored once on the validation fold
    through its reconstruction error.
    """
    stats = fit_normalization(job.train_set.windows())
    train_set = normalize_set(job.train_set, stats, mask_padding=job.mask_padding)
    val_set = normalize_set(job.val_set, stats, mask_padding=job.mask_padding)
    model = build(job.model_config, seed=job.train_config.seed)
    model.normalization = stats
    recorder = RunRecorder(job.output_dir / RUN_RECORDS_NAME) if job.output_dir is not None else None
    if job.model_config.kind.is_classifier:
        result = train(
            model,
            train_set,
            val_set,
            job.train_config,
            policy=job.policy,
            fold=job.fold,
            recorder=recorder,
            name=job.name,
        )
        report, curve = result.report, result.report.loss_curve()
    else:
        post = train_set.subset(np.flatnonzero(train_set.labels == 0))
        vae = train_vae(model, post, job.train_config, fold=job.fold, recorder=recorder, name=job.name)
        evaluation = vae_classify_eval(model, val_set, batch_size=job.train_config.eval_batch_size)
        last = vae.report.epochs[-1]
        report = EvalReport(
            model=job.name,
            fold=job.fold,
            epochs=(
                EpochMetrics(
                    epoch=last.epoch,
                    lr=last.lr,
                    train_loss=last.train_loss,
                    loss=float(np.mean(evaluation.scores)),
                    roc_auc=evaluation.roc_auc,
                    pr_auc=evaluation.pr_auc,
                    acc=float("nan"),
                    step_ms=last.step_ms,
                ),
            ),
        )
        curve = vae.report.loss_curve()
        if job.output_dir is not None:
            evaluation.curves_frame().to_csv(job.output_dir / EXCEEDANCE_NAME, index=False, float_format="%.9g")
    if job.output_dir is not None:
        save_model(model, job.output_dir)
        curve.to_csv(job.output_dir / LOSS_CURVE_NAME, index=False, float_format="%.9g")
    return report


def cross_validate(
    model_config: ModelConfig,
    data: WindowedSet,
    plan: FoldPlan,
    config: TrainConfig,
    *,
    policy: AugmentationPolicy | None = None,
    output_dir: Path | None = None,
    jobs: int = 1,
    name: str | None = None,
    mask_padding: bool = True,
) -> CVSummary:
    """Train one model per fold and summarise the per-fold best metrics.

    Each fold writes into `fold-<k>/` under `output_dir`; the per-epoch records of all folds are
    also gathered into a top-level run log next to the summary CSV.

    Args:
        model_config: Architecture to train on every fold.
        data: Raw (unnormalized) windowed flights covered by `plan`.
        plan: Tail-grouped fold assignment.
        config: Training hyperparameters.
        policy: Augmentation policy.
        output_dir: Directory for artifacts; nothing is written when None.
        jobs: Number of worker processes for folds.
        name: Model name used in records and the summary.
        mask_padding: Keep padded rows at zero after normalization.

    Returns:
        The cross-validation summary.
    """
    name = name or model_config.kind.value
    folds = list(range(plan.fold_count))
    if jobs > len(folds):
        warnings.warn(f"{jobs} workers requested for {len(folds)} folds; using {len(folds)}", stacklevel=2)
        jobs = len(folds)
    fold_jobs = []
    for fold in folds:
        train_set, val_set = split_fold(data, plan, fold)
        fold_jobs.append(
            FoldJob(
                name=name,
                model_config=model_config,
                train_config=config,
                policy=policy or AugmentationPolicy(),
                train_set=train_set,
                val_set=val_set,
                fold=fold,
                output_dir=output_dir / f"fold-{fold}" if output_dir is not None else None,
                mask_padding=mask_padding,
            )
        )
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(run_fold, fold_jobs))
    else:
        reports = [run_fold(job) for job in fold_jobs]
    summary = summarize_reports(reports, plan.fold_count)
    if output_dir is not None:
        _gather_records(output_dir, folds)
        summary.save(output_dir / CV_SUMMARY_NAME)
    logger.info("%s cross-validation means: %s", name, {k: round(v, 4) for k, v in summary.means.items()})
    return summary


def _gather_records(output_dir: Path, folds: Sequence[int]) -> None:
    with open(output_dir / RUN_RECORDS_NAME, "w", encoding="utf-8") as out:
        for fold in folds:
            path = output_dir / f"fold-{fold}" / RUN_RECORDS_NAME
            if path.is_file():
                out.write(path.read_text(encoding="utf-8"))

"""Two-phase training: plain pretraining, then importance-guided refinement.

Phase one trains with plain Adam and keeps the checkpoint with the highest
validation accuracy (ties go to the earliest epoch). Phase two starts from
that checkpoint and, on a configurable cadence, recomputes the feature
importance matrix from gradient attributions (optionally blended with the
normalized current head weights), rescales the head, and keeps training.

Every number logged is a pure function of (seed, config, dataset): batch
order, attribution draws, and sample selection all derive their seeds from
the master seed, and reductions run in fixed order.

Reporting follows the top (average) convention: for each metric the summary
carries the best single-epoch value and the mean over all epochs. Per-epoch
test metrics are logged for faithfulness to that convention even though
selecting "top" on the test set peeks at it; ``RunReport.val_selected_record``
reports the test row at the best-validation epoch instead.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset, batches
from .errors import ConfigError, DataError
from .metrics import classify_metrics, roc_auc
from .model import BackboneConfig, Model, build, clone, extract_features, forward, save_checkpoint
from .shap import ImportanceMatrix, ShapConfig, batch_mean_abs, gradient_shap, minmax_normalize
from .tensor import softmax
from .update import (
    CADENCES,
    PER_EPOCH,
    PER_STEP,
    AdamState,
    blended_scale_matrix,
    normalize_weights,
    scale_fc_weights,
    sicdn_step,
)

EVAL_BATCH = 64

# seed-derivation purposes; each (seed, purpose, epoch) triple is independent
_SEED_PRETRAIN_BATCH = 1
_SEED_TRAIN_BATCH = 2
_SEED_SHAP_TARGETS = 3
_SEED_SHAP_BACKGROUND = 4
_SEED_SHAP_DRAWS = 5


def derive_seed(base: int, purpose: int, index: int) -> int:
    return int(np.random.SeedSequence([base, purpose, index]).generate_state(1)[0])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 1e-4
    lambdas: tuple[float, ...] = (0.40, 0.45, 0.50, 0.55, 0.60, 1.00)
    scale_cadence: str = PER_EPOCH
    shap_refresh_every: int = 1
    shap_batch: int | None = None  # samples averaged per refresh; batch_size when None
    num_path_samples: int = 64
    noise_std: float = 0.01
    background_size: int = 16
    abs_before_mean: bool = False
    pretrain_epochs: int | None = None  # same as epochs when None
    seed: int = 0
    out_dir: str | None = None

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError(f"epochs ({self.epochs}) and batch_size ({self.batch_size}) must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.scale_cadence not in CADENCES:
            raise ConfigError(f"scale_cadence must be one of {CADENCES}, got {self.scale_cadence!r}")
        if self.shap_refresh_every < 1:
            raise ConfigError(f"shap_refresh_every must be >= 1, got {self.shap_refresh_every}")
        if self.shap_batch is not None and self.shap_batch < 1:
            raise ConfigError(f"shap_batch must be >= 1, got {self.shap_batch}")
        if self.pretrain_epochs is not None and self.pretrain_epochs < 1:
            raise ConfigError(f"pretrain_epochs must be >= 1, got {self.pretrain_epochs}")
        ShapConfig(
            num_path_samples=self.num_path_samples,
            noise_std=self.noise_std,
            background_size=self.background_size,
        ).validate()


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_acc: float
    test_acc: float
    recall: float
    f1: float
    auc: float


SUMMARY_METRICS = {"acc": "test_acc", "recall": "recall", "f1": "f1", "auc": "auc"}


@dataclass
class RunReport:
    records: list[EpochRecord] = field(default_factory=list)
    refresh_epochs: list[int] = field(default_factory=list)
    roc_points: list[tuple[float, float, float]] = field(default_factory=list)

    def top(self, metric: str) -> float:
        return max(getattr(r, metric) for r in self.records)

    def average(self, metric: str) -> float:
        return float(np.mean([getattr(r, metric) for r in self.records]))

    def summary(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for short, metric in SUMMARY_METRICS.items():
            out[f"top_{short}"] = self.top(metric)
            out[f"avg_{short}"] = self.average(metric)
        return out

    def best_record(self, metric: str = "test_acc") -> EpochRecord:
        """Earliest record attaining the metric's maximum."""
        best = self.records[0]
        for r in self.records[1:]:
            if getattr(r, metric) > getattr(best, metric):
                best = r
        return best

    def val_selected_record(self) -> EpochRecord:
        """Test metrics at the best-validation epoch (no test peeking)."""
        return self.best_record("val_acc")


@dataclass
class PretrainResult:
    model: Model
    best_epoch: int
    history: list[tuple[int, float]]  # (epoch, validation accuracy)


def best_epoch_index(values) -> int:
    """Index of the maximum; ties resolve to the earliest occurrence."""
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def _require_trainable(dataset: Dataset) -> None:
    for split in ("train", "val", "test"):
        if not dataset.splits.get(split):
            raise DataError(f"dataset split {split!r} is empty")
    if dataset.num_classes != 2:
        raise DataError(
            f"training metrics are binary; dataset has {dataset.num_classes} classes"
        )


def evaluate_scores(model: Model, samples) -> tuple[np.ndarray, np.ndarray]:
    """Positive-class probabilities and integer labels, in dataset order."""
    scores = []
    labels = []
    for start in range(0, len(samples), EVAL_BATCH):
        chunk = samples[start : start + EVAL_BATCH]
        images = np.stack([img for img, _ in chunk])
        probs = softmax(forward(model, images)).data
        scores.append(probs[:, 1].astype(np.float64))
        labels.extend(label for _, label in chunk)
    return np.concatenate(scores), np.asarray(labels)


def train_epoch(
    model: Model,
    adam_state: AdamState,
    samples,
    batch_size: int,
    seed: int,
    num_classes: int,
    importance: ImportanceMatrix | None = None,
    cadence: str = PER_EPOCH,
) -> float:
    """One pass over the shuffled split; returns the mean batch loss."""
    losses = []
    for images, targets in batches(samples, batch_size, seed, num_classes):
        losses.append(sicdn_step(model, images, targets, adam_state, importance, cadence))
    return float(np.mean(losses))


def _evaluate_epoch(model: Model, dataset: Dataset, epoch: int, train_loss: float):
    val_scores, val_labels = evaluate_scores(model, dataset.splits["val"])
    val_acc, _, _ = classify_metrics(val_scores, val_labels)
    test_scores, test_labels = evaluate_scores(model, dataset.splits["test"])
    test_acc, recall, f1 = classify_metrics(test_scores, test_labels)
    _, auc = roc_auc(test_scores, test_labels)
    record = EpochRecord(
        epoch=epoch,
        train_loss=train_loss,
        val_acc=val_acc,
        test_acc=test_acc,
        recall=recall,
        f1=f1,
        auc=auc,
    )
    return record, test_scores, test_labels


def pretrain(backbone: BackboneConfig, cfg: TrainConfig, dataset: Dataset) -> PretrainResult:
    """Plain-Adam training; returns the highest-validation-accuracy model."""
    cfg.validate()
    _require_trainable(dataset)
    model = build(backbone)
    adam = AdamState(lr=cfg.learning_rate)
    epochs = cfg.pretrain_epochs if cfg.pretrain_epochs is not None else cfg.epochs
    history: list[tuple[int, float]] = []
    best_params: dict[str, np.ndarray] = {n: p.data.copy() for n, p in model.parameters().items()}
    best_acc = -1.0
    best_epoch = 0
    for epoch in range(1, epochs + 1):
        train_epoch(
            model,
            adam,
            dataset.splits["train"],
            cfg.batch_size,
            derive_seed(cfg.seed, _SEED_PRETRAIN_BATCH, epoch),
            dataset.num_classes,
        )
        scores, labels = evaluate_scores(model, dataset.splits["val"])
        acc, _, _ = classify_metrics(scores, labels)
        history.append((epoch, acc))
        if acc > best_acc:
            best_acc = acc
            best_epoch = epoch
            best_params = {n: p.data.copy() for n, p in model.parameters().items()}
    best_model = build(backbone)
    for name, param in best_model.parameters().items():
        param.data[...] = best_params[name]
    return PretrainResult(model=best_model, best_epoch=best_epoch, history=history)


def _refresh_importance(model: Model, cfg: TrainConfig, dataset: Dataset, lam: float, epoch: int) -> ImportanceMatrix:
    train_samples = dataset.splits["train"]
    m = cfg.shap_batch if cfg.shap_batch is not None else cfg.batch_size
    m = min(m, len(train_samples))
    target_idx = np.random.default_rng(
        derive_seed(cfg.seed, _SEED_SHAP_TARGETS, epoch)
    ).choice(len(train_samples), size=m, replace=False)
    target_images = np.stack([train_samples[i][0] for i in target_idx])
    target_features = extract_features(model, target_images).data

    bg_size = min(cfg.background_size, len(train_samples))
    bg_idx = np.random.default_rng(
        derive_seed(cfg.seed, _SEED_SHAP_BACKGROUND, epoch)
    ).choice(len(train_samples), size=bg_size, replace=False)
    bg_images = np.stack([train_samples[i][0] for i in bg_idx])
    bg_features = extract_features(model, bg_images).data

    shap_cfg = ShapConfig(
        num_path_samples=cfg.num_path_samples,
        noise_std=cfg.noise_std,
        background_size=bg_size,
        seed=derive_seed(cfg.seed, _SEED_SHAP_DRAWS, epoch),
        abs_before_mean=cfg.abs_before_mean,
    )
    raw = gradient_shap(model, target_features, bg_features, shap_cfg)
    s_star = minmax_normalize(batch_mean_abs(raw, abs_before_mean=cfg.abs_before_mean))
    if lam < 1.0:
        w_star = normalize_weights(model.fc_weight.data)
        return blended_scale_matrix(s_star, w_star, lam)
    return s_star


def _run_training(model: Model, cfg: TrainConfig, dataset: Dataset, lam: float | None) -> RunReport:
    """Shared epoch loop; lam None disables importance machinery entirely."""
    report = RunReport()
    adam = AdamState(lr=cfg.learning_rate)
    importance: ImportanceMatrix | None = None
    best_roc: tuple[float, np.ndarray, np.ndarray] | None = None
    ckpt_dir = None
    if cfg.out_dir is not None:
        ckpt_dir = Path(cfg.out_dir) / "ckpt"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    for epoch in range(1, cfg.epochs + 1):
        if lam is not None and (epoch - 1) % cfg.shap_refresh_every == 0:
            importance = _refresh_importance(model, cfg, dataset, lam, epoch)
            report.refresh_epochs.append(epoch)
            if cfg.scale_cadence == PER_EPOCH:
                scale_fc_weights(model, importance)
        step_importance = importance if (lam is not None and cfg.scale_cadence == PER_STEP) else None
        train_loss = train_epoch(
            model,
            adam,
            dataset.splits["train"],
            cfg.batch_size,
            derive_seed(cfg.seed, _SEED_TRAIN_BATCH, epoch),
            dataset.num_classes,
            importance=step_importance,
            cadence=cfg.scale_cadence if lam is not None else PER_EPOCH,
        )
        record, test_scores, test_labels = _evaluate_epoch(model, dataset, epoch, train_loss)
        report.records.append(record)
        if best_roc is None or record.test_acc > best_roc[0]:
            best_roc = (record.test_acc, test_scores, test_labels)
        if ckpt_dir is not None:
            save_checkpoint(model, ckpt_dir / f"epoch_{epoch:03d}.sicd", adam_state=adam)
    assert best_roc is not None
    report.roc_points, _ = roc_auc(best_roc[1], best_roc[2])
    if cfg.out_dir is not None:
        write_report_csv(report, Path(cfg.out_dir) / "report.csv")
        write_roc_csv(report.roc_points, Path(cfg.out_dir) / "roc.csv")
    return report


def sicdn_train(start_model: Model, cfg: TrainConfig, dataset: Dataset, lam: float = 1.0) -> tuple[Model, RunReport]:
    """Importance-guided training from a pretrained checkpoint.

    lam weights the attribution matrix against the normalized current head
    weights at each refresh; lam=1 uses attributions alone.
    """
    cfg.validate()
    _require_trainable(dataset)
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    model = clone(start_model)
    report = _run_training(model, cfg, dataset, lam)
    return model, report


def plain_train(start_model: Model, cfg: TrainConfig, dataset: Dataset) -> tuple[Model, RunReport]:
    """Continued plain-Adam training; the importance-free baseline arm."""
    cfg.validate()
    _require_trainable(dataset)
    model = clone(start_model)
    report = _run_training(model, cfg, dataset, lam=None)
    return model, report


@dataclass
class SweepResult:
    rows: list[dict[str, float]]
    pretrain: PretrainResult


def _sweep_one(args) -> dict[str, float]:
    start_model, cfg, dataset, lam = args
    _, report = sicdn_train(start_model, cfg, dataset, lam)
    row = {"lambda": lam}
    row.update(report.summary())
    return row


def lambda_sweep(backbone: BackboneConfig, cfg: TrainConfig, dataset: Dataset, jobs: int = 1) -> SweepResult:
    """One full run per lambda, all from a single shared pretrain checkpoint."""
    cfg.validate()
    if not cfg.lambdas:
        raise ConfigError("lambda sweep requires a non-empty lambda list")
    for lam in cfg.lambdas:
        if not 0.0 < lam <= 1.0:
            raise ConfigError(f"sweep lambdas must lie in (0, 1], got {lam}")
    pre = pretrain(backbone, cfg, dataset)
    run_cfg = replace(cfg, out_dir=None)
    work = [(pre.model, run_cfg, dataset, lam) for lam in cfg.lambdas]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_one, work))
    else:
        rows = [_sweep_one(item) for item in work]
    if cfg.out_dir is not None:
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        write_sweep_csv(rows, Path(cfg.out_dir) / "sweep.csv")
    return SweepResult(rows=rows, pretrain=pre)


# --- CSV serialization ----------------------------------------------------


def _fmt(value: float) -> str:
    return format(float(value), ".10g")


REPORT_COLUMNS = ("epoch", "train_loss", "val_acc", "test_acc", "recall", "f1", "auc")
SWEEP_COLUMNS = (
    "lambda",
    "top_acc",
    "avg_acc",
    "top_recall",
    "avg_recall",
    "top_f1",
    "avg_f1",
    "top_auc",
    "avg_auc",
)


def write_report_csv(report: RunReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for r in report.records:
            writer.writerow([r.epoch] + [_fmt(getattr(r, c)) for c in REPORT_COLUMNS[1:]])


def write_roc_csv(points, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("threshold", "fpr", "tpr"))
        for threshold, fpr, tpr in points:
            writer.writerow([_fmt(threshold), _fmt(fpr), _fmt(tpr)])


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in SWEEP_COLUMNS])

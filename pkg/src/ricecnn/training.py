"""Mini-batch training, the two-stage protocol, evaluation metrics and
stratified cross-validation.

RNG discipline: every run owns a master stream seeded from the config. Layer
initialization uses per-layer substreams of the master; the training loop for
parent-label data always draws from the "train-parents" substream and the
symptom-label stage from "train-symptoms". Because streams are keyed by
purpose rather than by draw order, a two-stage run whose first stage does
zero epochs consumes exactly the same draws as a plain baseline run and
reproduces it bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import AugmentSpec, expand_dataset
from .dataset import ClassTaxonomy, DatasetError, FoldPlan, Sample, stratified_kfold
from .model import (
    ArchitectureSpec,
    WeightStore,
    apply_freeze_policy,
    build_simple_cnn,
    loss_for_sample,
    forward,
    replace_head,
)
from .rng import RngState
from .tensor import AdamState, Tensor, adam_step


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    epochs: int = 100
    dropout_rate: float = 0.3
    seed: int = 0
    # epochs for the symptom-label stage of two-stage training; None means
    # "same as epochs"
    stage_one_epochs: int | None = None

    def validate(self) -> "TrainConfig":
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0 or (self.stage_one_epochs is not None and self.stage_one_epochs < 0):
            raise ValueError("epoch counts must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        return self


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class StageReport:
    stage: str
    epochs: list[EpochStats] = field(default_factory=list)
    weights: WeightStore | None = None
    weights_path: str | None = None
    early_stopped: bool = False

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "epochs": [
                {"epoch": e.epoch, "loss": e.loss, "accuracy": e.accuracy}
                for e in self.epochs
            ],
            "early_stopped": self.early_stopped,
            "weights_path": self.weights_path,
        }


@dataclass
class Metrics:
    accuracy: float
    loss: float
    confusion: np.ndarray          # rows: true class, cols: predicted
    precision: list[float]
    recall: list[float]

    @property
    def count(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self, class_names: list[str] | None = None) -> dict:
        d = {
            "accuracy": self.accuracy,
            "loss": self.loss,
            "count": self.count,
            "confusion": self.confusion.tolist(),
            "precision": self.precision,
            "recall": self.recall,
        }
        if class_names is not None:
            d["classes"] = list(class_names)
        return d

    @staticmethod
    def from_dict(d: dict) -> "Metrics":
        return Metrics(
            accuracy=d["accuracy"],
            loss=d["loss"],
            confusion=np.asarray(d["confusion"], dtype=np.int64),
            precision=list(d["precision"]),
            recall=list(d["recall"]),
        )


@dataclass
class CrossValReport:
    k: int
    protocol: str
    fold_accuracies: list[float]
    fold_metrics: list[Metrics]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def std_accuracy(self) -> float:
        """Sample standard deviation (n-1 denominator)."""
        return float(np.std(self.fold_accuracies, ddof=1))

    def to_dict(self, class_names: list[str] | None = None) -> dict:
        return {
            "k": self.k,
            "protocol": self.protocol,
            "fold_accuracies": self.fold_accuracies,
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "folds": [m.to_dict(class_names) for m in self.fold_metrics],
        }


def _check_labels(labels: list[int], num_classes: int) -> None:
    for lab in labels:
        if not 0 <= lab < num_classes:
            raise ValueError(f"label {lab} out of range for {num_classes} classes")


def train(spec: ArchitectureSpec, weights: WeightStore, samples: list[Sample],
          labels: list[int], config: TrainConfig, rng: RngState,
          stage: str = "train", epoch_callback=None) -> tuple[WeightStore, StageReport]:
    """Run the mini-batch loop: per epoch, shuffle, then for each batch do
    train-mode forwards, average the cross-entropy loss, backprop, and one
    Adam step over the trainable tensors. Frozen tensors are never touched.

    An epoch_callback(epoch, stats) returning True stops training early; the
    report records the early termination.
    """
    config.validate()
    if not samples:
        raise ValueError("empty training set")
    if len(labels) != len(samples):
        raise ValueError("labels and samples length mismatch")
    _check_labels(labels, spec.num_classes)

    report = StageReport(stage=stage)
    state = AdamState(weights.tensors())
    target_hw = spec.input_shape[:2]
    n = len(samples)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            weights.zero_grads()
            for idx in batch:
                image = Tensor(samples[idx].load_pixels(target_hw))
                loss, probs = loss_for_sample(spec, weights, image, labels[idx],
                                              rng=rng, mode="train")
                loss.backward()
                epoch_loss += float(loss.data)
                if int(np.argmax(probs.data)) == labels[idx]:
                    correct += 1
            bs = len(batch)
            for e in weights:
                if e.tensor.trainable and e.tensor.grad is not None:
                    e.tensor.grad /= bs
            adam_step(weights.tensors(), state, config.learning_rate)
        stats = EpochStats(epoch, epoch_loss / n, correct / n)
        report.epochs.append(stats)
        if epoch_callback is not None and epoch_callback(epoch, stats):
            report.early_stopped = True
            break
    report.weights = weights
    return weights, report


def evaluate(spec: ArchitectureSpec, weights: WeightStore, samples: list[Sample],
             labels: list[int]) -> Metrics:
    """Inference-mode pass over the samples; predicted class is the argmax of
    the probabilities (lowest index wins ties)."""
    if not samples:
        raise ValueError("evaluate needs a non-empty sample list")
    if len(labels) != len(samples):
        raise ValueError("labels and samples length mismatch")
    m = spec.num_classes
    _check_labels(labels, m)
    confusion = np.zeros((m, m), dtype=np.int64)
    total_loss = 0.0
    target_hw = spec.input_shape[:2]
    for sample, label in zip(samples, labels):
        loss, probs = loss_for_sample(spec, weights, Tensor(sample.load_pixels(target_hw)),
                                      label, mode="infer")
        total_loss += float(loss.data)
        confusion[label, int(np.argmax(probs.data))] += 1
    correct = int(np.trace(confusion))
    rows = confusion.sum(axis=1)
    cols = confusion.sum(axis=0)
    diag = np.diag(confusion)
    precision = [float(diag[i] / cols[i]) if cols[i] else 0.0 for i in range(m)]
    recall = [float(diag[i] / rows[i]) if rows[i] else 0.0 for i in range(m)]
    return Metrics(accuracy=correct / len(samples), loss=total_loss / len(samples),
                   confusion=confusion, precision=precision, recall=recall)


def symptom_labels(taxonomy: ClassTaxonomy, samples: list[Sample]) -> list[int]:
    return [taxonomy.symptom_index(s.symptom) for s in samples]


def parent_labels(taxonomy: ClassTaxonomy, samples: list[Sample]) -> list[int]:
    return [taxonomy.parent_index(s.parent) for s in samples]


def baseline_train(taxonomy: ClassTaxonomy, samples: list[Sample], config: TrainConfig,
                   builder=build_simple_cnn) -> tuple[ArchitectureSpec, WeightStore, StageReport]:
    """Single-stage training on the parent classes from random init."""
    master = RngState(config.seed)
    spec, weights = builder(len(taxonomy.parents), master)
    weights = apply_freeze_policy(weights, "baseline")
    weights, report = train(spec, weights, samples, parent_labels(taxonomy, samples),
                            config, master.derive("train-parents"), stage="baseline")
    return spec, weights, report


def two_stage_train(taxonomy: ClassTaxonomy, samples: list[Sample], config: TrainConfig,
                    builder=build_simple_cnn,
                    ) -> tuple[ArchitectureSpec, WeightStore, tuple[StageReport, StageReport]]:
    """Stage one trains a symptom-class model; stage two replaces the head
    with a parent-class one, keeps every other tensor from stage one, and
    retrains everything on the parent labels."""
    master = RngState(config.seed)
    spec1, w1 = builder(len(taxonomy.symptoms), master)
    w1 = apply_freeze_policy(w1, "two_stage_stage1")
    stage1_cfg = replace(config,
                         epochs=config.epochs if config.stage_one_epochs is None
                         else config.stage_one_epochs)
    w1, report1 = train(spec1, w1, samples, symptom_labels(taxonomy, samples),
                        stage1_cfg, master.derive("train-symptoms"), stage="stage1")
    spec2, w2 = replace_head(spec1, w1, len(taxonomy.parents), master)
    w2 = apply_freeze_policy(w2, "two_stage_stage2", donor=w1)
    w2, report2 = train(spec2, w2, samples, parent_labels(taxonomy, samples),
                        config, master.derive("train-parents"), stage="stage2")
    return spec2, w2, (report1, report2)


def donor_regime_train(taxonomy: ClassTaxonomy, samples: list[Sample], config: TrainConfig,
                       regime: str, donor: WeightStore, builder=build_simple_cnn,
                       ) -> tuple[ArchitectureSpec, WeightStore, StageReport]:
    """Transfer (frozen conv) or fine-tune (donor-initialized conv) training
    on the parent classes, given donor weights."""
    if regime not in ("transfer", "fine_tune"):
        raise ValueError(f"unsupported donor regime {regime!r}")
    master = RngState(config.seed)
    spec, weights = builder(len(taxonomy.parents), master)
    weights = apply_freeze_policy(weights, regime, donor=donor)
    weights, report = train(spec, weights, samples, parent_labels(taxonomy, samples),
                            config, master.derive("train-parents"), stage=regime)
    return spec, weights, report


CROSSVAL_PROTOCOLS = ("two_stage", "baseline")


def cross_validate(taxonomy: ClassTaxonomy, samples: list[Sample], k: int,
                   config: TrainConfig, protocol: str,
                   augment_spec: AugmentSpec | None = None,
                   builder=build_simple_cnn,
                   fold_callback=None,
                   completed: dict[int, Metrics] | None = None) -> CrossValReport:
    """Stratified k-fold cross-validation of a training protocol.

    Per fold: train on the other folds' originals (expanded with augmented
    variants drawn per fold), validate on this fold's originals, never
    augmented. Each fold derives its own RNG universe from the config seed,
    so folds are independent and may be computed in any order; `completed`
    supplies fold metrics already computed by an interrupted run.
    """
    if protocol not in CROSSVAL_PROTOCOLS:
        raise ValueError(f"protocol must be one of {CROSSVAL_PROTOCOLS}, got {protocol!r}")
    originals = [s for s in samples if s.is_original]
    plan = stratified_kfold(originals, k, config.seed)
    master = RngState(config.seed)
    fold_metrics: list[Metrics] = []
    for fold in range(k):
        if completed is not None and fold in completed:
            fold_metrics.append(completed[fold])
            continue
        train_samples = [s for s in originals if plan.fold_of(s) != fold]
        val_samples = [s for s in originals if plan.fold_of(s) == fold]
        if augment_spec is not None and augment_spec.variants_per_image > 0:
            train_samples = expand_dataset(train_samples, augment_spec,
                                           master.derive(f"fold{fold}/augment"))
        fold_config = replace(config, seed=master.derive(f"fold{fold}").seed)
        if protocol == "two_stage":
            spec, weights, _ = two_stage_train(taxonomy, train_samples, fold_config,
                                               builder=builder)
        else:
            spec, weights, _ = baseline_train(taxonomy, train_samples, fold_config,
                                              builder=builder)
        metrics = evaluate(spec, weights, val_samples, parent_labels(taxonomy, val_samples))
        fold_metrics.append(metrics)
        if fold_callback is not None:
            fold_callback(fold, metrics)
    return CrossValReport(
        k=k,
        protocol=protocol,
        fold_accuracies=[m.accuracy for m in fold_metrics],
        fold_metrics=fold_metrics,
    )


def write_confusion_csv(path, metrics: Metrics, class_names: list[str]) -> None:
    """Confusion matrix as CSV: first column true-class names, header row the
    predicted-class names."""
    m = metrics.confusion
    lines = ["true\\predicted," + ",".join(class_names)]
    for i, name in enumerate(class_names):
        lines.append(name + "," + ",".join(str(int(v)) for v in m[i]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

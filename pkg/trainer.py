"""
Mini-batch SGD on the WARP objective with validation-based model selection.

Plain SGD with a constant learning rate. Each batch's objective is
normalized by the batch size. After every epoch the full training objective
and the validation TOP-1 (validation instances against validation classes
only) are recorded; the best epoch by validation TOP-1 is kept.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd

from classifier import top1_accuracy
from embedding_data import ClassTable, LabeledDataset
from errors import ConfigError, DataError, DivergenceError, ZeroShotError
from projection_models import Activation, Compatibility, ModelKind, ProjectionModel, init_model
from warp_loss import RankMode, RankPenalty, warp_terms


@dataclass(frozen=True)
class TrainConfig:
    """
    Training hyperparameters. The defaults are toolkit choices, not published settings.

    `rank` None means full rank, min(d_a, d_s). `activation` applies to fc2/fc3 only.
    """

    learning_rate: float = 0.01
    epochs: int = 100
    batch_size: int = 32
    l2_lambda: float = 1e-4
    rank: int | None = None
    model_kind: ModelKind = ModelKind.BILINEAR
    activation: Activation | None = None
    compat: Compatibility = Compatibility.DOT
    seed: int = 0
    validation_metric: str = "top1"
    shuffle: bool = True
    rank_mode: RankMode = RankMode.MARGIN
    penalty: RankPenalty = field(default_factory=RankPenalty)

    def __post_init__(self):
        try:
            object.__setattr__(self, "model_kind", ModelKind(self.model_kind))
            object.__setattr__(self, "compat", Compatibility(self.compat))
            object.__setattr__(self, "rank_mode", RankMode(self.rank_mode))
            if self.activation is not None:
                object.__setattr__(self, "activation", Activation(self.activation))
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if not math.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be a finite value >= 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.l2_lambda < 0:
            raise ConfigError(f"l2_lambda must be non-negative, got {self.l2_lambda}")
        if self.rank is not None and self.rank < 1:
            raise ConfigError(f"rank must be positive, got {self.rank}")
        if self.validation_metric != "top1":
            raise ConfigError(f"Unsupported validation metric '{self.validation_metric}'")


class EpochRecord(NamedTuple):
    epoch: int
    train_objective: float
    val_top1: float


@dataclass(frozen=True, eq=False)
class TrainResult:
    final_model: ProjectionModel
    best_model: ProjectionModel
    best_epoch: int
    per_epoch: tuple[EpochRecord, ...]
    seed: int
    config: TrainConfig

    @property
    def best_val_top1(self) -> float:
        return self.per_epoch[self.best_epoch].val_top1

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrainResult):
            return NotImplemented
        return (
            self.final_model == other.final_model
            and self.best_model == other.best_model
            and self.best_epoch == other.best_epoch
            and self.per_epoch == other.per_epoch
            and self.seed == other.seed
        )


def _check_inputs(train_set, train_classes, val_set, val_classes) -> None:
    if len(train_set) == 0:
        raise DataError("Training set is empty")
    if len(val_set) == 0:
        raise DataError("Validation set is empty")
    if train_set.acoustic_dim != val_set.acoustic_dim:
        raise DataError(f"Train and validation acoustic dimensions differ: {train_set.acoustic_dim} vs {val_set.acoustic_dim}")
    if train_classes.semantic_dim != val_classes.semantic_dim:
        raise DataError(
            f"Train and validation semantic dimensions differ: {train_classes.semantic_dim} vs {val_classes.semantic_dim}"
        )


def initial_model(train_set: LabeledDataset, train_classes: ClassTable, config: TrainConfig) -> ProjectionModel:
    """The seeded model a training run starts from."""
    return init_model(
        config.model_kind, train_set.acoustic_dim, train_classes.semantic_dim,
        config.rank, config.activation, config.seed,
    )


def train(
    train_set: LabeledDataset,
    train_classes: ClassTable,
    val_set: LabeledDataset,
    val_classes: ClassTable,
    config: TrainConfig,
) -> TrainResult:
    """
    Train one projection model.

    Args:
        train_set (LabeledDataset): Instances of seen classes.
        train_classes (ClassTable): Seen class table (the ranking candidates during training).
        val_set (LabeledDataset): Validation instances.
        val_classes (ClassTable): Candidates used to classify validation instances.
        config (TrainConfig): Hyperparameters and seed.

    Returns:
        TrainResult: The final model, the best model by validation
        TOP-1 and one record per epoch (epoch 0 is the initial model).

    Raises:
        DataError: empty sets or inconsistent dimensions / labels.
        DivergenceError: a non-finite gradient or objective, with its epoch.
    """
    _check_inputs(train_set, train_classes, val_set, val_classes)
    model = initial_model(train_set, train_classes, config)
    inputs = train_set.acoustic_matrix
    labels = train_classes.index_of(train_set.labels)
    semantic = train_classes.class_matrix()
    # the initialization stream is the root seed; shuffling uses a spawned child
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])

    def evaluate(current: ProjectionModel, epoch: int) -> EpochRecord:
        objective = warp_terms(
            current, inputs, labels, semantic, config.compat, config.penalty, config.l2_lambda, config.rank_mode
        ).objective
        if not math.isfinite(objective):
            raise DivergenceError(f"training objective is {objective}", epoch)
        return EpochRecord(epoch, objective, top1_accuracy(current, config.compat, val_set, val_classes))

    history = [evaluate(model, 0)]
    best_model, best_epoch = model, 0
    n = len(train_set)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n) if config.shuffle else np.arange(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            gradients = warp_terms(
                model, inputs[batch], labels[batch], semantic, config.compat,
                config.penalty, config.l2_lambda, config.rank_mode, with_gradient=True,
            ).gradients
            updated = {name: matrix - config.learning_rate * gradients[name] for name, matrix in model.parameters().items()}
            if not all(np.all(np.isfinite(matrix)) for matrix in updated.values()):
                raise DivergenceError("parameters became non-finite", epoch)
            model = model.with_parameters(updated)
        record = evaluate(model, epoch)
        history.append(record)
        # ties move to the later, longer-trained epoch
        if record.val_top1 >= history[best_epoch].val_top1:
            best_model, best_epoch = model, epoch
        logging.info(
            f"epoch {epoch}/{config.epochs}: objective {record.train_objective:.6f}, val top1 {record.val_top1:.4f}"
        )
    return TrainResult(model, best_model, best_epoch, tuple(history), config.seed, config)


def write_metrics_log(result: TrainResult, path: Path | str) -> Path:
    """Per-epoch log: `epoch\\ttrain_objective\\tval_top1`, one line per epoch."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(result.per_epoch, columns=list(EpochRecord._fields))
    frame.to_csv(path, sep="\t", header=False, index=False, float_format="%.17g", lineterminator="\n")
    logging.info(f"Wrote metrics log to {path}")
    return path


@dataclass(frozen=True, eq=False)
class GridSearchResult:
    best_index: int
    best_config: TrainConfig
    best_result: TrainResult
    failures: tuple[tuple[int, str], ...]


def grid_search(
    configs: Sequence[TrainConfig],
    train_set: LabeledDataset,
    train_classes: ClassTable,
    val_set: LabeledDataset,
    val_classes: ClassTable,
) -> GridSearchResult:
    """
    Train every config and keep the one with the highest validation TOP-1.

    Ties go to the earliest config. A failing config is logged and recorded
    without stopping the sweep; if every config fails the first error is raised.
    """
    if not configs:
        raise ConfigError("grid_search needs at least one config")
    best: tuple[int, TrainResult] | None = None
    failures: list[tuple[int, str]] = []
    first_error: ZeroShotError | None = None
    for index, config in enumerate(configs):
        try:
            result = train(train_set, train_classes, val_set, val_classes, config)
        except ZeroShotError as e:
            logging.error(f"Config {index} failed: {e}")
            failures.append((index, str(e)))
            first_error = first_error or e
            continue
        logging.info(f"Config {index}: best val top1 {result.best_val_top1:.4f} at epoch {result.best_epoch}")
        if best is None or result.best_val_top1 > best[1].best_val_top1:
            best = (index, result)
    if best is None:
        raise first_error
    return GridSearchResult(best[0], configs[best[0]], best[1], tuple(failures))

"""
Repeated-seed experiments and their statistics.

Each method is trained once per seed on shared splits and scored by TOP-1 on
the test fold against test-fold classes only. Methods are compared with a
two-sided, pooled-variance Student's t-test at alpha = 0.05.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import betainc

from classifier import top1_accuracy
from embedding_data import ClassTable, LabeledDataset
from errors import ConfigError, DataError, ExperimentError, ZeroShotError
from projection_models import Activation, ModelKind
from synthetic_task import SyntheticTask
from trainer import TrainConfig, train

ALPHA = 0.05
BASELINES = ("bilinear", "factored")


@dataclass(frozen=True)
class MethodSpec:
    """A named projection variant; `rank` None keeps the training config's rank."""

    name: str
    model_kind: ModelKind
    activation: Activation | None = None
    rank: int | None = None

    def train_config(self, base: TrainConfig, seed: int) -> TrainConfig:
        rank = None if self.model_kind is ModelKind.BILINEAR else (self.rank or base.rank)
        return replace(base, model_kind=self.model_kind, activation=self.activation, rank=rank, seed=seed)


METHODS: dict[str, MethodSpec] = {
    "bilinear": MethodSpec("bilinear", ModelKind.BILINEAR),
    "factored": MethodSpec("factored", ModelKind.FACTORED),
    "fc2_relu": MethodSpec("fc2_relu", ModelKind.FC2, Activation.RELU),
    "fc2_sigmoid": MethodSpec("fc2_sigmoid", ModelKind.FC2, Activation.SIGMOID),
    "fc2_tanh": MethodSpec("fc2_tanh", ModelKind.FC2, Activation.TANH),
    "fc3_tanh": MethodSpec("fc3_tanh", ModelKind.FC3, Activation.TANH),
}


def parse_method(name: str) -> MethodSpec:
    """Look up a method by name; `name@r` pins the inner rank, e.g. `factored@4`."""
    base_name, _, rank_text = name.strip().partition("@")
    if base_name not in METHODS:
        raise ConfigError(f"Unknown method '{base_name}', expected one of {sorted(METHODS)}")
    method = METHODS[base_name]
    if not rank_text:
        return method
    if method.model_kind is ModelKind.BILINEAR:
        raise ConfigError("The bilinear method has no rank to set")
    try:
        rank = int(rank_text)
    except ValueError:
        raise ConfigError(f"Invalid rank in method '{name}'") from None
    if rank < 1:
        raise ConfigError(f"Rank must be positive in method '{name}'")
    return replace(method, name=f"{base_name}@{rank}", rank=rank)


@dataclass(frozen=True, eq=False)
class ExperimentSplits:
    """Train / validation / test instances with the candidate classes of each split."""

    train: LabeledDataset
    train_classes: ClassTable
    val: LabeledDataset
    val_classes: ClassTable
    test: LabeledDataset
    test_classes: ClassTable

    def __post_init__(self):
        overlap = set(self.train_classes.class_ids) & set(self.test_classes.class_ids)
        if overlap:
            raise DataError(f"Test classes overlap training classes: {sorted(overlap)}")
        for name in ("train", "val", "test"):
            dataset, classes = getattr(self, name), getattr(self, f"{name}_classes")
            missing = dataset.label_set - set(classes.class_ids)
            if missing:
                raise DataError(f"{name} instances use classes outside the {name} fold: {sorted(missing)}")

    @classmethod
    def from_synthetic(cls, task: SyntheticTask) -> "ExperimentSplits":
        return cls(task.train, task.seen_classes, task.val, task.val_classes, task.test, task.unseen_classes)


@dataclass(frozen=True)
class RunStatistics:
    method_name: str
    seeds: tuple[int, ...]
    per_seed_top1: tuple[float, ...]
    mean: float
    std: float
    degenerate: bool = False

    @property
    def n(self) -> int:
        return len(self.per_seed_top1)


def summarize_runs(
    name: str, per_seed_top1: Sequence[float], seeds: Sequence[int] | None = None
) -> RunStatistics:
    """
    Mean and sample standard deviation (n - 1 divisor) of per-seed accuracies.

    A single run has std 0 and is flagged degenerate.
    """
    values = tuple(float(v) for v in per_seed_top1)
    if not values:
        raise DataError(f"No runs to summarize for '{name}'")
    if any(not 0.0 <= v <= 1.0 for v in values):
        raise DataError(f"TOP-1 values for '{name}' must lie in [0, 1]")
    seeds = tuple(range(len(values))) if seeds is None else tuple(seeds)
    if len(seeds) != len(values):
        raise DataError(f"Got {len(seeds)} seeds for {len(values)} runs of '{name}'")
    array = np.asarray(values)
    degenerate = len(values) == 1
    std = 0.0 if degenerate else float(np.std(array, ddof=1))
    return RunStatistics(name, seeds, values, float(np.mean(array)), std, degenerate)


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    degrees_of_freedom: int
    p_value: float
    significant: bool
    degenerate: bool = False


def student_t_p_value(t: float, df: int) -> float:
    """Two-sided p-value of Student's t with `df` degrees of freedom."""
    if df < 1:
        raise ValueError(f"Degrees of freedom must be positive, got {df}")
    if math.isinf(t):
        return 0.0
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def t_test_from_summary(
    mean_a: float, std_a: float, n_a: int, mean_b: float, std_b: float, n_b: int
) -> TTestResult:
    """
    Pooled-variance two-sample t-test from group means, sample stds and sizes.

    Args:
        mean_a (float), std_a (float), n_a (int): First group summary.
        mean_b (float), std_b (float), n_b (int): Second group summary.

    Returns:
        TTestResult: df = n_a + n_b - 2. Zero pooled variance gives
        t = 0, p = 1 for equal means, and a degenerate p = 0 otherwise.
    """
    if n_a < 2 or n_b < 2:
        raise DataError(f"Each group needs at least 2 values, got {n_a} and {n_b}")
    df = n_a + n_b - 2
    pooled_var = ((n_a - 1) * std_a ** 2 + (n_b - 1) * std_b ** 2) / df
    difference = mean_a - mean_b
    if pooled_var == 0.0:
        if difference == 0.0:
            return TTestResult(0.0, df, 1.0, False)
        return TTestResult(math.copysign(math.inf, difference), df, 0.0, True, degenerate=True)
    t = difference / math.sqrt(pooled_var * (1.0 / n_a + 1.0 / n_b))
    p = min(1.0, max(0.0, student_t_p_value(t, df)))
    return TTestResult(t, df, p, p < ALPHA)


def unpaired_t_test(group_a: Sequence[float], group_b: Sequence[float]) -> TTestResult:
    """Two-sided Student's t-test with pooled variance between two independent groups."""
    a = np.asarray(group_a, dtype=np.float64)
    b = np.asarray(group_b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise DataError(f"Each group needs at least 2 values, got {len(a)} and {len(b)}")
    return t_test_from_summary(
        float(np.mean(a)), float(np.std(a, ddof=1)), len(a),
        float(np.mean(b)), float(np.std(b, ddof=1)), len(b),
    )


def run_experiment(
    method: MethodSpec | str,
    splits: ExperimentSplits,
    n_seeds: int,
    base_seed: int = 0,
    config: TrainConfig | None = None,
) -> RunStatistics:
    """
    Train `method` once per seed and summarize test TOP-1.

    Args:
        method (MethodSpec | str): Method spec or registry name.
        splits (ExperimentSplits): Shared data splits.
        n_seeds (int): Number of runs; seeds are base_seed .. base_seed + n_seeds - 1.
        base_seed (int): First seed.
        config (TrainConfig | None): Training hyperparameters; the method sets kind, activation and rank.

    Returns:
        RunStatistics: Per-seed test TOP-1 of each run's best model, summarized.

    Raises:
        ExperimentError: a run failed; carries the seed and the cause's exit code.
    """
    method = parse_method(method) if isinstance(method, str) else method
    if n_seeds < 1:
        raise ConfigError(f"n_seeds must be at least 1, got {n_seeds}")
    base = config or TrainConfig()
    seeds = list(range(base_seed, base_seed + n_seeds))
    accuracies = []
    for seed in seeds:
        try:
            result = train(
                splits.train, splits.train_classes, splits.val, splits.val_classes,
                method.train_config(base, seed),
            )
            top1 = top1_accuracy(result.best_model, base.compat, splits.test, splits.test_classes)
        except ZeroShotError as e:
            raise ExperimentError(f"{method.name} failed: {e}", seed, e) from e
        logging.info(f"{method.name} seed {seed}: test top1 {top1:.4f} (best epoch {result.best_epoch})")
        accuracies.append(top1)
    stats = summarize_runs(method.name, accuracies, seeds)
    logging.info(f"{method.name}: mean top1 {stats.mean:.4f} +- {stats.std:.4f} over {stats.n} seeds")
    return stats


def _write_table(frame: pd.DataFrame, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, sep="\t", header=False, index=False, float_format="%.17g", lineterminator="\n")
    logging.info(f"Wrote {len(frame)} rows to {path}")
    return path


def write_results(runs: Sequence[RunStatistics], path: Path | str) -> Path:
    """`method\\tseed\\ttop1`, one row per method and seed."""
    rows = [(run.method_name, seed, top1) for run in runs for seed, top1 in zip(run.seeds, run.per_seed_top1)]
    return _write_table(pd.DataFrame(rows, columns=["method", "seed", "top1"]), path)


def write_summary(runs: Sequence[RunStatistics], path: Path | str) -> Path:
    """`method\\tmean\\tstd\\tn`, highest mean first (stable for ties)."""
    frame = pd.DataFrame(
        [(run.method_name, run.mean, run.std, run.n) for run in runs],
        columns=["method", "mean", "std", "n"],
    )
    frame = frame.sort_values("mean", ascending=False, kind="mergesort")
    return _write_table(frame, path)


def comparison_pairs(runs: Sequence[RunStatistics]) -> list[tuple[RunStatistics, RunStatistics]]:
    """Every method against each baseline (bilinear, then factored) present in `runs`."""
    by_name = {run.method_name: run for run in runs}
    pairs = []
    for baseline in BASELINES:
        if baseline not in by_name:
            continue
        for run in runs:
            if run.method_name in BASELINES[:BASELINES.index(baseline) + 1]:
                continue
            pairs.append((run, by_name[baseline]))
    return pairs


def write_t_test_report(runs: Sequence[RunStatistics], path: Path | str) -> Path:
    """`method_a\\tmethod_b\\tt\\tdf\\tp\\tsignificant` for every comparison pair with n >= 2."""
    rows = []
    for run, baseline in comparison_pairs(runs):
        if run.n < 2 or baseline.n < 2:
            logging.warning(f"Skipping t-test {run.method_name} vs {baseline.method_name}: fewer than 2 seeds")
            continue
        result = unpaired_t_test(run.per_seed_top1, baseline.per_seed_top1)
        rows.append((
            run.method_name, baseline.method_name, result.t_statistic,
            result.degrees_of_freedom, result.p_value, str(result.significant).lower(),
        ))
    frame = pd.DataFrame(rows, columns=["method_a", "method_b", "t", "df", "p", "significant"])
    return _write_table(frame, path)

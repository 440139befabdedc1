"""
Experiment config files: flat `key=value` lines grouped by dotted prefixes.

    synth.seen_classes=8          # a synthetic task ...
    data.acoustic=acoustic.tsv    # ... or file-based data, never both
    train.learning_rate=0.05
    bench.methods=bilinear,factored,fc2_tanh
    output.dir=results

Relative data paths resolve against the config file's directory.
"""

import logging
from collections.abc import Mapping
from dataclasses import dataclass, fields
from pathlib import Path

from dotenv import dotenv_values

from embedding_data import (
    ClassTable,
    LabeledDataset,
    average_segments,
    build_class_table,
    build_dataset,
    parse_embedding_file,
    parse_fold_file,
    parse_label_file,
    parse_manifest,
)
from errors import ConfigError, DataError
from experiment_stats import ExperimentSplits, MethodSpec, parse_method
from synthetic_task import SynthSpec, generate_synthetic_task
from trainer import TrainConfig
from warp_loss import RankPenalty

SYNTH_KEYS = {f.name for f in fields(SynthSpec)}
TRAIN_KEYS = {
    "learning_rate", "epochs", "batch_size", "l2_lambda", "rank", "model_kind", "activation",
    "compat", "seed", "validation_metric", "shuffle", "rank_mode", "penalty", "method",
}
DATA_PATH_KEYS = {"acoustic", "classes", "labels", "token_vectors", "train", "val", "test", "folds"}
DATA_KEYS = DATA_PATH_KEYS | {"train_folds", "val_folds", "test_folds", "segment_separator"}
BENCH_KEYS = {"methods", "n_seeds", "base_seed"}
OUTPUT_KEYS = {"dir"}
SECTIONS = {"synth": SYNTH_KEYS, "data": DATA_KEYS, "train": TRAIN_KEYS, "bench": BENCH_KEYS, "output": OUTPUT_KEYS}

INT_FIELDS = {"acoustic_dim", "semantic_dim", "seen_classes", "unseen_classes", "val_classes",
              "samples_per_class", "seed", "latent_dim", "families", "epochs", "batch_size", "rank", "n_seeds",
              "base_seed"}
FLOAT_FIELDS = {"noise", "val_fraction", "within_class_spread", "family_spread", "saturation", "magnitude_ratio",
                "learning_rate", "l2_lambda"}


@dataclass(frozen=True)
class DataPaths:
    acoustic: Path
    train: Path
    val: Path
    test: Path
    classes: Path | None = None
    labels: Path | None = None
    token_vectors: Path | None = None
    folds: Path | None = None
    train_folds: tuple[int, ...] = (0,)
    val_folds: tuple[int, ...] | None = None
    test_folds: tuple[int, ...] = (1,)
    segment_separator: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    """A parsed experiment: one data source, training settings, bench settings and an output directory."""

    train: TrainConfig
    method: MethodSpec
    methods: tuple[MethodSpec, ...]
    n_seeds: int
    base_seed: int
    output_dir: Path
    synth: SynthSpec | None = None
    data: DataPaths | None = None
    source: Path | None = None


def _convert(key: str, value: str):
    name = key.split(".", 1)[1]
    try:
        if name in INT_FIELDS:
            return None if value.lower() == "none" else int(value)
        if name in FLOAT_FIELDS:
            return float(value)
    except ValueError:
        raise ConfigError(f"Invalid value for {key}: '{value}'") from None
    if name == "shuffle":
        if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"Invalid value for {key}: '{value}', expected true or false")
        return value.lower() in ("true", "1", "yes")
    if name == "activation" and value.lower() == "none":
        return None
    return value


def _fold_list(key: str, value: str) -> tuple[int, ...]:
    try:
        folds = tuple(int(part) for part in value.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"Invalid fold list for {key}: '{value}'") from None
    if not folds or any(f < 0 for f in folds):
        raise ConfigError(f"Invalid fold list for {key}: '{value}'")
    return folds


def read_config_values(path: Path | str | None, overrides: Mapping[str, str] | None = None) -> dict[str, str]:
    """
    Raw dotted key/value pairs from the file, with `overrides` applied on top.

    Keys without a value or with an empty value count as unset. Unknown
    sections or keys are a ConfigError.
    """
    values: dict[str, str] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        values.update({k: v for k, v in dotenv_values(path, interpolate=False).items() if v})
    values.update({k: str(v) for k, v in (overrides or {}).items() if v is not None})
    for key in values:
        section, _, name = key.partition(".")
        if section not in SECTIONS or name not in SECTIONS[section]:
            raise ConfigError(f"Unknown config key '{key}'")
    return values


def section(values: Mapping[str, str], prefix: str) -> dict[str, str]:
    return {key.split(".", 1)[1]: value for key, value in values.items() if key.startswith(prefix + ".")}


def synth_spec_from(values: Mapping[str, str]) -> SynthSpec:
    return SynthSpec(**{name: _convert(f"synth.{name}", value) for name, value in section(values, "synth").items()})


def _train_config_from(values: Mapping[str, str]) -> tuple[TrainConfig, MethodSpec]:
    settings = {name: _convert(f"train.{name}", value) for name, value in section(values, "train").items()}
    method = parse_method(settings.pop("method", "bilinear"))
    if "penalty" in settings:
        try:
            settings["penalty"] = RankPenalty(tuple(float(a) for a in settings["penalty"].split(",")))
        except ValueError as e:
            raise ConfigError(f"Invalid train.penalty: {e}") from None
    # an explicit model_kind replaces the method's kind
    if "model_kind" in settings:
        config = TrainConfig(**settings)
        method = MethodSpec(config.model_kind.value, config.model_kind, config.activation, config.rank)
    else:
        config = method.train_config(TrainConfig(**settings), settings.get("seed", 0))
    return config, method


def _data_paths_from(values: Mapping[str, str], base_dir: Path) -> DataPaths:
    data = section(values, "data")
    for required in ("acoustic", "train", "val", "test"):
        if required not in data:
            raise ConfigError(f"Missing required key data.{required}")
    if ("classes" in data) == ("labels" in data):
        raise ConfigError("Set exactly one of data.classes or data.labels")
    if "labels" in data and "token_vectors" not in data:
        raise ConfigError("data.labels needs data.token_vectors")
    paths = {}
    for key in DATA_PATH_KEYS & data.keys():
        path = Path(data[key])
        path = path if path.is_absolute() else base_dir / path
        if not path.is_file():
            raise DataError(f"File not found for data.{key}: {path}")
        paths[key] = path
    folds = {key: _fold_list(f"data.{key}", data[key]) for key in ("train_folds", "val_folds", "test_folds") if key in data}
    if folds and "folds" not in paths:
        raise ConfigError("Fold roles need data.folds")
    return DataPaths(**paths, **folds, segment_separator=data.get("segment_separator"))


def load_experiment_config(path: Path | str | None, overrides: Mapping[str, str] | None = None) -> ExperimentConfig:
    """
    Parse and validate an experiment config file.

    Args:
        path (Path | str | None): Config file, or None to build from overrides alone.
        overrides (Mapping[str, str] | None): Dotted keys that replace file values (command-line flags).

    Returns:
        ExperimentConfig: Exactly one of `synth` or `data` is set.

    Raises:
        ConfigError: malformed file, unknown keys, invalid values or both / neither data source.
        DataError: a referenced data file does not exist.
    """
    values = read_config_values(path, overrides)
    has_synth = any(key.startswith("synth.") for key in values)
    has_data = any(key.startswith("data.") for key in values)
    if has_synth == has_data:
        raise ConfigError("Config must contain exactly one of synth.* or data.* keys")
    base_dir = Path(path).resolve().parent if path is not None else Path.cwd()

    train_config, method = _train_config_from(values)
    bench = section(values, "bench")
    if "methods" in bench:
        methods = tuple(parse_method(name) for name in bench["methods"].split(",") if name.strip())
    else:
        methods = (method,)
    if not methods:
        raise ConfigError("bench.methods lists no methods")
    n_seeds = _convert("bench.n_seeds", bench.get("n_seeds", "20"))
    if n_seeds is None or n_seeds < 1:
        raise ConfigError(f"bench.n_seeds must be at least 1, got {n_seeds}")
    base_seed = _convert("bench.base_seed", bench.get("base_seed", "0")) or 0
    output_dir = Path(values.get("output.dir", "results"))

    config = ExperimentConfig(
        train=train_config,
        method=method,
        methods=methods,
        n_seeds=n_seeds,
        base_seed=base_seed,
        output_dir=output_dir,
        synth=synth_spec_from(values) if has_synth else None,
        data=_data_paths_from(values, base_dir) if has_data else None,
        source=None if path is None else Path(path),
    )
    logging.info(f"Loaded config from {path or 'flags'}: {'synthetic' if has_synth else 'file-based'} data")
    return config


def _candidates(classes: ClassTable, dataset: LabeledDataset, fold_classes: tuple[str, ...] | None) -> ClassTable:
    wanted = fold_classes if fold_classes is not None else sorted(dataset.label_set)
    missing = [c for c in wanted if c not in classes]
    if missing:
        raise DataError(f"Classes without a semantic embedding: {missing}")
    return classes.subset(wanted)


def load_splits(config: ExperimentConfig) -> ExperimentSplits:
    """Build train / validation / test splits from the synthetic task settings or the data files."""
    if config.synth is not None:
        return ExperimentSplits.from_synthetic(generate_synthetic_task(config.synth))
    data = config.data
    acoustic = parse_embedding_file(data.acoustic)
    if data.segment_separator:
        acoustic = average_segments(acoustic, data.segment_separator)
    if data.classes is not None:
        classes = ClassTable.from_table(parse_embedding_file(data.classes))
    else:
        classes = build_class_table(parse_label_file(data.labels), parse_embedding_file(data.token_vectors))
    train_set = build_dataset(parse_manifest(data.train), acoustic)
    val_set = build_dataset(parse_manifest(data.val), acoustic)
    test_set = build_dataset(parse_manifest(data.test), acoustic)

    roles: dict[str, tuple[str, ...] | None] = {"train": None, "val": None, "test": None}
    if data.folds is not None:
        folds = parse_fold_file(data.folds)
        val_folds = data.val_folds
        if val_folds is None:
            val_folds = (2,) if folds.k > 2 else data.train_folds
        roles = {
            "train": folds.classes_in(data.train_folds),
            "val": folds.classes_in(val_folds),
            "test": folds.classes_in(data.test_folds),
        }
    logging.info(
        f"Loaded {len(train_set)} train, {len(val_set)} val and {len(test_set)} test instances over {len(classes)} classes"
    )
    return ExperimentSplits(
        train_set, _candidates(classes, train_set, roles["train"]),
        val_set, _candidates(classes, val_set, roles["val"]),
        test_set, _candidates(classes, test_set, roles["test"]),
    )


def format_data_config(files: Mapping[str, str], train_settings: Mapping[str, str] | None = None) -> str:
    """Config text pointing at data files (relative to the config's directory)."""
    lines = ["# generated data config"]
    lines.extend(f"data.{key}={value}" for key, value in files.items())
    lines.extend(f"train.{key}={value}" for key, value in (train_settings or {}).items())
    return "\n".join(lines) + "\n"

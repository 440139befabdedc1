"""
Command-line entry point.

    python zero_shot_cli.py synth --out data/synth --seed 3
    python zero_shot_cli.py train --config data/synth/data.cfg --out runs/bilinear
    python zero_shot_cli.py bench --config bench.cfg --method bilinear,fc2_tanh
    python zero_shot_cli.py eval --config data/synth/data.cfg --checkpoint runs/bilinear/model.ckpt

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

import argparse
import logging
import sys
from pathlib import Path

import pandas as pd

from classifier import predict_batch
from embedding_data import EmbeddingTable, LabeledDataset, fold_summary, write_embedding_file, write_fold_file, write_manifest
from errors import ExperimentError, ZeroShotError
from experiment_config import format_data_config, load_experiment_config, load_splits, read_config_values, synth_spec_from
from experiment_stats import run_experiment, write_results, write_summary, write_t_test_report
from projection_models import load_checkpoint, save_checkpoint
from synthetic_task import generate_synthetic_task
from trainer import train, write_metrics_log

SYNTH_FLAGS = {
    "acoustic_dim": int,
    "semantic_dim": int,
    "seen_classes": int,
    "unseen_classes": int,
    "val_classes": int,
    "samples_per_class": int,
    "latent_dim": int,
    "families": int,
    "noise": float,
    "map_kind": str,
}


def cmd_train(args: argparse.Namespace) -> int:
    config = load_experiment_config(
        args.config, {"train.seed": args.seed, "output.dir": args.out, "train.method": args.method}
    )
    splits = load_splits(config)
    result = train(splits.train, splits.train_classes, splits.val, splits.val_classes, config.train)
    out_dir = config.output_dir
    save_checkpoint(result.best_model, out_dir / "model.ckpt", result.seed)
    save_checkpoint(result.final_model, out_dir / "final.ckpt", result.seed)
    write_metrics_log(result, out_dir / "metrics.tsv")
    logging.info(f"Best validation top1 {result.best_val_top1:.4f} at epoch {result.best_epoch}")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    config = load_experiment_config(
        args.config, {"bench.base_seed": args.seed, "output.dir": args.out, "bench.methods": args.method}
    )
    splits = load_splits(config)
    runs, failures = [], []
    for method in config.methods:
        logging.info(f"Running {method.name} over {config.n_seeds} seeds from {config.base_seed}")
        try:
            runs.append(run_experiment(method, splits, config.n_seeds, config.base_seed, config.train))
        except ExperimentError as e:
            logging.error(f"Method {method.name} failed: {e}")
            failures.append(e)
            continue
    out_dir = config.output_dir
    write_results(runs, out_dir / "results.tsv")
    write_summary(runs, out_dir / "summary.tsv")
    write_t_test_report(runs, out_dir / "ttest.tsv")
    if failures:
        logging.error(f"{len(failures)} of {len(config.methods)} methods failed")
        return failures[0].exit_code
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    overrides = {f"synth.{name}": getattr(args, name) for name in SYNTH_FLAGS}
    overrides["synth.seed"] = args.seed
    values = read_config_values(args.config, overrides)
    spec = synth_spec_from(values)
    task = generate_synthetic_task(spec)
    out_dir = Path(args.out or values.get("output.dir", "synth"))

    instances = [item for split in (task.train, task.val, task.test) for item in split]
    write_embedding_file(EmbeddingTable((item.instance_id, item.acoustic) for item in instances), out_dir / "acoustic.tsv")
    write_embedding_file(task.classes, out_dir / "classes.tsv")
    write_manifest(task.train, out_dir / "train.tsv")
    write_manifest(task.val, out_dir / "val.tsv")
    write_manifest(task.test, out_dir / "test.tsv")
    write_fold_file(task.folds, out_dir / "folds.tsv")
    save_checkpoint(task.ground_truth, out_dir / "ground_truth.ckpt", spec.seed)
    files = {
        "acoustic": "acoustic.tsv", "classes": "classes.tsv", "train": "train.tsv", "val": "val.tsv",
        "test": "test.tsv", "folds": "folds.tsv",
        "train_folds": "0", "val_folds": "2" if spec.val_classes else "0", "test_folds": "1",
    }
    (out_dir / "data.cfg").write_text(format_data_config(files), encoding="utf-8")
    summary = fold_summary(task.folds, LabeledDataset(tuple(instances), spec.acoustic_dim))
    logging.info(f"Wrote synthetic task to {out_dir}\n{summary.to_string(index=False)}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = load_experiment_config(args.config, {"output.dir": args.out})
    splits = load_splits(config)
    model = load_checkpoint(args.checkpoint).model
    predicted = predict_batch(model, config.train.compat, splits.test.acoustic_matrix, splits.test_classes)
    frame = pd.DataFrame({
        "instance_id": splits.test.instance_ids,
        "predicted": predicted,
        "true": splits.test.labels,
    })
    out_path = config.output_dir / "predictions.tsv"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out_path, sep="\t", header=False, index=False, lineterminator="\n")
    top1 = float((frame["predicted"] == frame["true"]).mean())
    logging.info(f"Wrote {len(frame)} predictions to {out_path}")
    print(f"top1\t{top1!r}")
    return 0


COMMANDS = {"train": cmd_train, "bench": cmd_bench, "synth": cmd_synth, "eval": cmd_eval}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    verbosity.add_argument("--quiet", action="store_true", help="Log warnings and errors only")
    common.add_argument("--out", help="Output directory (overrides output.dir)")
    common.add_argument("--seed", type=int, help="Seed override")

    parser = argparse.ArgumentParser(description="Zero-shot classification with acoustic-semantic projections")
    commands = parser.add_subparsers(dest="command", required=True)

    train_parser = commands.add_parser("train", parents=[common], help="Train one model and save checkpoints")
    train_parser.add_argument("--config", required=True, help="Experiment config file")
    train_parser.add_argument("--method", help="Method name, e.g. fc2_tanh or factored@4")

    bench_parser = commands.add_parser("bench", parents=[common], help="Repeated-seed comparison of methods")
    bench_parser.add_argument("--config", required=True, help="Experiment config file")
    bench_parser.add_argument("--method", help="Comma-separated method names (overrides bench.methods)")

    synth_parser = commands.add_parser("synth", parents=[common], help="Write a synthetic task to disk")
    synth_parser.add_argument("--config", help="Optional config with synth.* keys")
    for name, kind in SYNTH_FLAGS.items():
        synth_parser.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind)

    eval_parser = commands.add_parser("eval", parents=[common], help="Classify the test split with a checkpoint")
    eval_parser.add_argument("--config", required=True, help="Experiment config file")
    eval_parser.add_argument("--checkpoint", required=True, help="Checkpoint written by train")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s - %(levelname)s - %(message)s')
    try:
        return COMMANDS[args.command](args)
    except ZeroShotError as e:
        logging.error(str(e))
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())

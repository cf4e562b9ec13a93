import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd
from dotenv import load_dotenv
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from ..classify import (
    ConfusionMatrix,
    TwoStageModel,
    boost,
    evaluate,
    sweep,
    train_two_stage,
)
from ..data import Dataset, build_dataset
from ..exceptions import (
    ArtifactError,
    ContractViolation,
    DigestMismatch,
    InsufficientData,
    QgsNetError,
)
from ..trainers import TRAINERS
from ..utils.persistence import SCHEMA_VERSION, read_json, write_csv, write_json
from .config import RunConfig, describe_validation_error, load_run_config

logger = logging.getLogger(__name__)
console = Console()

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_TRAINING = 4
EXIT_SWEEP = 5


def _output_dir(args: argparse.Namespace, config: RunConfig, default_leaf: str) -> Path:
    if args.out:
        return Path(args.out)
    base = os.getenv("QGSNET_OUTPUT_DIR") or config.output_dir
    return Path(base) / default_leaf


def _accuracy_table(title: str, rows) -> Table:
    table = Table(title=title)
    table.add_column("Item")
    table.add_column("Value", justify="right")
    for name, value in rows:
        table.add_row(name, value)
    return table


def _confusion_table(matrix: ConfusionMatrix) -> Table:
    table = Table(title="Confusion matrix (% of target class)")
    table.add_column("target")
    for c in matrix.classes:
        table.add_column(str(c), justify="right")
    for c, row in zip(matrix.classes, matrix.percentages()):
        table.add_row(str(c), *[f"{v:.2f}" if v else "-" for v in row])
    return table


def cmd_generate(args: argparse.Namespace, config: RunConfig) -> int:
    scenario, _ = config.seeded()
    out = _output_dir(args, config, "dataset")
    dataset = build_dataset(scenario, jobs=config.jobs, keep_streams=args.raw_streams)
    dataset.save(out, raw_streams=args.raw_streams)
    console.print(_accuracy_table("Dataset", [
        ("events", str(len(dataset))),
        ("train / eval", f"{len(dataset.train_ids)} / {len(dataset.eval_ids)}"),
        ("features", str(dataset.n_features)),
        ("feature digest", dataset.feature_digest),
        ("dataset digest", dataset.content_digest),
        ("written to", str(out)),
    ]))
    return EXIT_OK


def _write_model(model: TwoStageModel, out: Path) -> None:
    write_json(model.to_dict(), out / "model.json")
    for name, minima in zip(("stage1", "stage2"), model.minima):
        if minima is not None:
            write_json(minima.to_dict(), out / f"minima_{name}.json")


def cmd_train(args: argparse.Namespace, config: RunConfig) -> int:
    dataset = Dataset.load(args.dataset)
    _, two_stage = config.seeded()
    initial = None
    if args.resume:
        initial = TwoStageModel.from_dict(read_json(args.resume))
        if initial.feature_digest != dataset.feature_digest:
            raise DigestMismatch(f"{args.resume} was trained on features {initial.feature_digest[:12]}, "
                                 f"dataset has {dataset.feature_digest[:12]}")
    model = train_two_stage(dataset.train(), dataset.config, two_stage, initial=initial)
    out = _output_dir(args, config, "model")
    _write_model(model, out)
    console.print(_accuracy_table(f"Trained with {two_stage.trainer}", [
        ("stage 1 validation accuracy", f"{model.stage1.validation_accuracy:.4f}"),
        ("stage 2 validation accuracy", f"{model.stage2.validation_accuracy:.4f}"),
        ("written to", str(out)),
    ]))
    return EXIT_OK


def _write_evaluation(accuracy: float, matrix: ConfusionMatrix, model: TwoStageModel, out: Path) -> None:
    write_csv(matrix.to_csv_frame(), out / "confusion.csv")
    write_json({
        "schema_version": SCHEMA_VERSION,
        "accuracy": accuracy,
        "correct": int(matrix.counts.trace()),
        "total": matrix.total,
        "feature_digest": model.feature_digest,
        "config_digest": model.config_digest,
    }, out / "summary.json")


def cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> int:
    model = TwoStageModel.from_dict(read_json(args.model))
    dataset = Dataset.load(args.dataset)
    if model.feature_digest != dataset.feature_digest:
        raise DigestMismatch("model and dataset were built with different feature layouts")
    accuracy, matrix = evaluate(model, dataset.evaluation())
    out = _output_dir(args, config, "evaluation")
    _write_evaluation(accuracy, matrix, model, out)
    console.print(_confusion_table(matrix))
    console.print(_accuracy_table("Evaluation", [
        ("events", str(matrix.total)),
        ("accuracy", f"{accuracy:.4f}"),
        ("written to", str(out)),
    ]))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, config: RunConfig) -> int:
    scenario, two_stage = config.seeded()
    report = sweep(args.axis, scenario, two_stage, trainer=args.trainer, jobs=config.jobs)
    out = _output_dir(args, config, f"sweep_{args.axis}")
    report.save(out)

    table = Table(title=f"Sweep over {args.axis}")
    for column in ("setting", "accuracy", "reference", "runtime (s)", "status"):
        table.add_column(column)
    for row in report.to_frame().itertuples(index=False):
        table.add_row(
            row.setting,
            "-" if pd.isna(row.accuracy) else f"{row.accuracy:.4f}",
            "-" if pd.isna(row.reference_accuracy) else f"{row.reference_accuracy:.4f}",
            f"{row.runtime_s:.1f}",
            "ok" if pd.isna(row.error) else str(row.error),
        )
    console.print(table)
    if not report.succeeded:
        logger.error(f"every point of the {args.axis} sweep failed")
        return EXIT_SWEEP
    return EXIT_OK


def cmd_boost(args: argparse.Namespace, config: RunConfig) -> int:
    scenario, two_stage = config.seeded()
    dataset = build_dataset(scenario, jobs=config.jobs)
    train = dataset.train()
    batches = dataset.eval_batches(config.boost_rounds + 1)
    model = train_two_stage(train, scenario, two_stage)
    normal_accuracy, _ = evaluate(model, batches[-1])
    result = boost(model, train, batches, scenario, two_stage, rounds=config.boost_rounds)

    out = _output_dir(args, config, "boost")
    _write_model(result.model, out)
    write_json({**result.to_dict(), "normal_accuracy": normal_accuracy}, out / "boost.json")
    console.print(_accuracy_table("Boosting", [
        ("training set sizes", " -> ".join(str(s) for s in result.train_sizes)),
        ("misclassified per round", ", ".join(str(m) for m in result.misclassified)),
        ("normal accuracy", f"{normal_accuracy:.4f}"),
        ("boosted accuracy", f"{result.final_accuracy:.4f}"),
        ("written to", str(out)),
    ]))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qgsnet", description="QGS-trained recurrent networks for PMU event classification")
    parser.add_argument("--log-level", default=None, help="Logging level (default: $QGSNET_LOG_LEVEL or INFO)")
    commands = parser.add_subparsers(dest="command", required=True)

    def common(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--config", help="JSON run configuration")
        sub.add_argument("--out", help="Output directory")
        sub.add_argument("--seed", type=int, help="Top-level seed")
        sub.add_argument("--jobs", type=int, help="Worker processes")
        sub.add_argument("--trainer", choices=sorted(TRAINERS), help="Training method")

    generate = commands.add_parser("generate", help="Generate a synthetic event dataset")
    common(generate)
    generate.add_argument("--raw-streams", action="store_true", help="Also write the raw phasor streams")
    generate.set_defaults(handler=cmd_generate)

    train = commands.add_parser("train", help="Train the two-stage classifier")
    common(train)
    train.add_argument("--dataset", required=True, help="Dataset directory")
    train.add_argument("--resume", help="Model JSON to start training from")
    train.set_defaults(handler=cmd_train)

    evaluate_cmd = commands.add_parser("evaluate", help="Evaluate a model on a dataset's evaluation split")
    common(evaluate_cmd)
    evaluate_cmd.add_argument("--model", required=True, help="Model JSON")
    evaluate_cmd.add_argument("--dataset", required=True, help="Dataset directory")
    evaluate_cmd.set_defaults(handler=cmd_evaluate)

    sweep_cmd = commands.add_parser("sweep", help="Retrain and evaluate along one sensitivity axis")
    common(sweep_cmd)
    sweep_cmd.add_argument("axis", help="reporting_rate, noise, pmu_count, boosting or trainer")
    sweep_cmd.set_defaults(handler=cmd_sweep)

    boost_cmd = commands.add_parser("boost", help="Retrain on misclassified events for several rounds")
    common(boost_cmd)
    boost_cmd.set_defaults(handler=cmd_boost)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    level = (args.log_level or os.getenv("QGSNET_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(level=level, format="%(asctime)s - %(levelname)s - %(message)s")

    try:
        config = load_run_config(args.config).with_overrides(seed=args.seed, trainer=args.trainer, jobs=args.jobs)
    except ValidationError as e:
        logger.error(f"invalid configuration:\n{describe_validation_error(e)}")
        return EXIT_CONFIG
    except OSError as e:
        logger.error(f"cannot read configuration: {e}")
        return EXIT_IO

    try:
        return args.handler(args, config)
    except ValidationError as e:
        logger.error(f"invalid configuration:\n{describe_validation_error(e)}")
        return EXIT_CONFIG
    except (ContractViolation, DigestMismatch, InsufficientData) as e:
        logger.error(str(e))
        return EXIT_CONFIG
    except (OSError, ArtifactError) as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO
    except QgsNetError as e:
        logger.error(f"training failed: {type(e).__name__}: {e}")
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end: train, predict, evaluate, and benchmark.

Exit codes: 0 success, 2 data/format error, 3 training failure, 4 model
task mismatch, 64 usage error.  Every report CSV written here gets a PNG
figure rendered next to it.
"""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional, Tuple

from . import deptree, multiclass, seqtag
from .core import (
    ContractError,
    DataFormatError,
    Lexicon,
    ModelArtifact,
    ModelFormatError,
    NumericError,
    TaskMismatchError,
    TrainingError,
    load_model,
    save_model,
)
from .learners import LearnerConfig, train_dcd, train_demidcd, train_perceptron
from .plots import figure_path_for, render_benchmark, render_train_report

EXIT_OK = 0
EXIT_DATA = 2
EXIT_TRAINING = 3
EXIT_MODEL_MISMATCH = 4
EXIT_USAGE = 64

TASKS = ("sequence", "deptree", "multiclass")
ALGOS = ("perceptron", "dcd", "demidcd")
TRAINERS = {
    "perceptron": train_perceptron,
    "dcd": train_dcd,
    "demidcd": train_demidcd,
}


class UsageError(Exception):
    """Bad flag combination caught after argparse."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; we reserve 2 for data
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_learner_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--C", type=float, default=0.1, help="slack penalty weight")
    p.add_argument("--eta", type=float, default=1.0, help="perceptron learning rate")
    p.add_argument("--epochs", type=int, default=None,
                   help="max passes (default 50 perceptron, 100 dcd/demidcd)")
    p.add_argument("--tolerance", type=float, default=0.1,
                   help="violation/improvement stopping threshold")
    p.add_argument("--threads", type=int, default=1,
                   help="total threads for demidcd (1 learner + rest inference)")
    p.add_argument("--seed", type=int, default=0, help="shuffling seed")


def build_parser() -> _Parser:
    parser = _Parser(prog="structlearn",
                     description="Structured prediction toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="fit a model and save it")
    train.add_argument("--task", required=True, choices=TASKS)
    train.add_argument("--algo", required=True, choices=ALGOS)
    train.add_argument("--train", required=True, help="training data file")
    train.add_argument("--model", required=True, help="output model file")
    train.add_argument("--report", default=None, help="per-epoch CSV (+PNG) path")
    _add_learner_flags(train)

    predict = sub.add_parser("predict", help="apply a saved model")
    predict.add_argument("--task", required=True, choices=TASKS)
    predict.add_argument("--model", required=True, help="model file")
    predict.add_argument("--test", required=True, help="input data file")
    predict.add_argument("--output", required=True, help="predictions file")

    evaluate = sub.add_parser("evaluate", help="score predictions against gold")
    evaluate.add_argument("--task", required=True, choices=TASKS)
    evaluate.add_argument("--test", required=True, help="gold data file")
    evaluate.add_argument("--output", required=True, help="predictions file")

    bench = sub.add_parser("benchmark",
                           help="train with per-epoch test checkpoints")
    bench.add_argument("--task", required=True, choices=TASKS)
    bench.add_argument("--algo", required=True, choices=ALGOS)
    bench.add_argument("--train", required=True, help="training data file")
    bench.add_argument("--test", required=True, help="held-out data file")
    bench.add_argument("--report", required=True,
                       help="output CSV of (seconds, test_metric)")
    bench.add_argument("--model", default=None, help="optional final model path")
    _add_learner_flags(bench)
    return parser


def _learner_config(args) -> LearnerConfig:
    try:
        return LearnerConfig(
            C=args.C,
            eta=args.eta,
            epochs=args.epochs,
            tolerance=args.tolerance,
            threads=args.threads,
            seed=args.seed,
        )
    except ContractError as exc:
        raise UsageError(str(exc)) from exc


def _check_algo(args) -> None:
    if args.algo == "demidcd" and args.threads < 2:
        raise UsageError("--algo demidcd needs --threads >= 2 "
                         "(one learner plus at least one inference worker)")


def _training_context(task: str, train_path):
    """Read training data and build matching feature generator + solver."""
    if task == "sequence":
        label_lexicon = Lexicon()
        data = seqtag.read_column_data(train_path, label_lexicon)
        fg = seqtag.SequenceFeatureGenerator(Lexicon(), label_lexicon)
        return data, fg, seqtag.SequenceSolver(fg)
    if task == "deptree":
        data = deptree.read_conll_deps(train_path)
        fg = deptree.DependencyFeatureGenerator(Lexicon())
        return data, fg, deptree.DependencySolver(fg)
    label_lexicon, raw_lexicon = Lexicon(), Lexicon()
    data, costs = multiclass.read_svmlight_multiclass(
        train_path, label_lexicon, raw_lexicon
    )
    fg = multiclass.MulticlassFeatureGenerator(label_lexicon, raw_lexicon)
    return data, fg, multiclass.MulticlassSolver(fg, costs)


def _model_context(model: ModelArtifact):
    """Rebuild feature generator + solver around a loaded model."""
    if model.task == "sequence":
        fg = seqtag.SequenceFeatureGenerator(
            model.feature_lexicon, model.label_lexicon
        )
        return fg, seqtag.SequenceSolver(fg)
    if model.task == "deptree":
        fg = deptree.DependencyFeatureGenerator(
            model.feature_lexicon, model.label_lexicon
        )
        return fg, deptree.DependencySolver(fg)
    raw = multiclass.raw_lexicon_from_model(model.feature_lexicon, model.label_lexicon)
    fg = multiclass.MulticlassFeatureGenerator(model.label_lexicon, raw)
    return fg, multiclass.MulticlassSolver(fg)


def run_train(args) -> int:
    cfg = _learner_config(args)
    _check_algo(args)
    data, fg, solver = _training_context(args.task, args.train)
    model, report = TRAINERS[args.algo](data, fg, solver, cfg)
    save_model(model, args.model)
    if args.report:
        report.write_csv(args.report)
        render_train_report(report, figure_path_for(args.report))
    return EXIT_OK


def run_predict(args) -> int:
    model = load_model(args.model)
    if model.task != args.task:
        raise TaskMismatchError(
            f"model was trained for task {model.task!r}, not {args.task!r}"
        )
    fg, solver = _model_context(model)
    w = model.weights
    if args.task == "sequence":
        data = seqtag.read_column_data(
            args.test, model.label_lexicon, allow_empty=True
        )
        preds = [solver.best(w, x) for x, _ in data.examples]
        seqtag.write_column_predictions(
            args.output, [x for x, _ in data.examples], preds, model.label_lexicon
        )
    elif args.task == "deptree":
        data = deptree.read_conll_deps(args.test, allow_empty=True)
        preds = [solver.best(w, x) for x, _ in data.examples]
        deptree.write_conll_predictions(
            args.output, [x for x, _ in data.examples], preds
        )
    else:
        data, _ = multiclass.read_svmlight_multiclass(
            args.test, model.label_lexicon, fg.raw_lexicon, allow_empty=True
        )
        preds = [solver.best(w, x) for x, _ in data.examples]
        multiclass.write_multiclass_predictions(
            args.output, preds, model.label_lexicon
        )
    return EXIT_OK


def _evaluate_sequence(gold_path, pred_path) -> List[Tuple[str, float]]:
    label_lexicon = Lexicon()
    gold = seqtag.read_column_data(gold_path, label_lexicon)
    pred = seqtag.read_column_data(pred_path, label_lexicon)
    if len(gold) != len(pred):
        raise DataFormatError(
            f"{len(gold)} gold sequences but {len(pred)} predicted", path=pred_path
        )
    total = correct = 0
    for (gx, gy), (px, py) in zip(gold.examples, pred.examples):
        if len(gy) != len(py):
            raise DataFormatError(
                "sequence length mismatch between gold and predictions",
                path=pred_path,
            )
        total += len(gy)
        correct += len(gy) - seqtag.hamming_loss(py, gy)
    return [("accuracy", correct / total)]


def _evaluate_deptree(gold_path, pred_path) -> List[Tuple[str, float]]:
    gold = deptree.read_conll_deps(gold_path)
    pred = deptree.read_conll_deps(pred_path)
    try:
        value = deptree.uas(
            [y for _, y in pred.examples], [y for _, y in gold.examples]
        )
    except ContractError as exc:
        raise DataFormatError(str(exc), path=pred_path) from exc
    return [("uas", value)]


def _evaluate_multiclass(gold_path, pred_path) -> List[Tuple[str, float]]:
    label_lexicon, raw_lexicon = Lexicon(), Lexicon()
    gold, costs = multiclass.read_svmlight_multiclass(
        gold_path, label_lexicon, raw_lexicon
    )
    label_lexicon.freeze()
    if costs is None:
        costs = multiclass.CostMatrix.zero_one(len(label_lexicon))
    preds: List[int] = []
    with open(pred_path, "r", encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            name = raw.strip()
            if not name:
                continue
            y = label_lexicon.get(name)
            if y is None:
                raise DataFormatError(
                    f"unknown label {name!r}", path=pred_path, line=lineno
                )
            preds.append(y)
    if len(preds) != len(gold):
        raise DataFormatError(
            f"{len(gold)} gold examples but {len(preds)} predictions",
            path=pred_path,
        )
    pairs = list(zip((y for _, y in gold.examples), preds))
    avg_cost = sum(costs.cost(g, p) for g, p in pairs) / len(pairs)
    accuracy = sum(1 for g, p in pairs if g == p) / len(pairs)
    return [("avg_cost", avg_cost), ("accuracy", accuracy)]


def run_evaluate(args) -> int:
    if args.task == "sequence":
        metrics = _evaluate_sequence(args.test, args.output)
    elif args.task == "deptree":
        metrics = _evaluate_deptree(args.test, args.output)
    else:
        metrics = _evaluate_multiclass(args.test, args.output)
    for name, value in metrics:
        print(f"{name}\t{value:.6f}")
    return EXIT_OK


def _read_benchmark_test(task: str, path, fg):
    """The training file fixes the label space; test files must fit it."""
    if task == "sequence":
        fg.label_lexicon.freeze()
        return seqtag.read_column_data(path, fg.label_lexicon)
    if task == "deptree":
        return deptree.read_conll_deps(path)
    data, _ = multiclass.read_svmlight_multiclass(
        path, fg.label_lexicon, fg.raw_lexicon
    )
    return data


def _test_metric(task: str, solver, w, test_data) -> float:
    """Token accuracy / UAS / 0-1 accuracy under the current weights."""
    if task == "sequence":
        total = correct = 0
        for x, y_gold in test_data.examples:
            y_hat = solver.best(w, x)
            total += len(y_gold)
            correct += len(y_gold) - seqtag.hamming_loss(y_hat, y_gold)
        return correct / total
    if task == "deptree":
        preds = [solver.best(w, x) for x, _ in test_data.examples]
        return deptree.uas(preds, [y for _, y in test_data.examples])
    hits = sum(1 for x, y in test_data.examples if solver.best(w, x) == y)
    return hits / len(test_data)


def run_benchmark(args) -> int:
    cfg = _learner_config(args)
    _check_algo(args)
    data, fg, solver = _training_context(args.task, args.train)
    test_data = _read_benchmark_test(args.task, args.test, fg)
    points: List[Tuple[float, float]] = []

    def on_epoch(epoch, w, state, row):
        points.append((row.seconds, _test_metric(args.task, solver, w, test_data)))

    model, report = TRAINERS[args.algo](data, fg, solver, cfg, on_epoch=on_epoch)
    with open(args.report, "w", encoding="utf-8") as fh:
        for key, value in report.config.items():
            fh.write(f"# {key}={value}\n")
        fh.write("seconds,test_metric\n")
        for seconds, metric in points:
            fh.write(f"{seconds:.6f},{metric:.12g}\n")
    render_benchmark(points, report.config, figure_path_for(args.report))
    if args.model:
        save_model(model, args.model)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    commands = {
        "train": run_train,
        "predict": run_predict,
        "evaluate": run_evaluate,
        "benchmark": run_benchmark,
    }
    try:
        return commands[args.command](args)
    except UsageError as exc:
        print(f"structlearn: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, ModelFormatError) as exc:
        print(f"structlearn: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TaskMismatchError as exc:
        print(f"structlearn: {exc}", file=sys.stderr)
        return EXIT_MODEL_MISMATCH
    except (TrainingError, NumericError) as exc:
        print(f"structlearn: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except ContractError as exc:
        print(f"structlearn: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"structlearn: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

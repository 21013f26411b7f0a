"""Structured prediction with linear models: averaged perceptron and
L2-loss structured SVM trainers (sequential and parallel dual coordinate
descent) over pluggable inference, with sequence tagging, dependency
parsing, and cost-sensitive multiclass tasks included."""

from .contracts import FeatureGenerator, InferenceSolver
from .core import (
    ContractError,
    DataFormatError,
    Dataset,
    Lexicon,
    ModelArtifact,
    ModelFormatError,
    NumericError,
    SparseFeatureVector,
    StructLearnError,
    TaskMismatchError,
    TrainingError,
    WeightVector,
    axpy,
    diff_squared_norm,
    difference,
    dot,
    load_model,
    save_model,
)
from .learners import (
    DualState,
    LearnerConfig,
    TrainReport,
    dcd_step,
    dual_objective,
    exact_match_accuracy,
    primal_objective,
    train_dcd,
    train_demidcd,
    train_perceptron,
)

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "DataFormatError",
    "Dataset",
    "DualState",
    "FeatureGenerator",
    "InferenceSolver",
    "LearnerConfig",
    "Lexicon",
    "ModelArtifact",
    "ModelFormatError",
    "NumericError",
    "SparseFeatureVector",
    "StructLearnError",
    "TaskMismatchError",
    "TrainReport",
    "TrainingError",
    "WeightVector",
    "axpy",
    "dcd_step",
    "diff_squared_norm",
    "difference",
    "dot",
    "dual_objective",
    "exact_match_accuracy",
    "load_model",
    "primal_objective",
    "save_model",
    "train_dcd",
    "train_demidcd",
    "train_perceptron",
]

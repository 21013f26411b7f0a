"""Cost-sensitive multiclass classification as a degenerate structured task.

Class-independent raw features live in a dense slot space of size B (one
slot per distinct feature token seen in training, plus an always-on bias
slot by default).  The joint feature vector for class y shifts the raw
vector into block y: index j becomes y*B + j, so blocks never collide.
The loss is a K x K cost matrix with a zero diagonal; a missing cost file
means uniform 0/1 costs.
"""

from __future__ import annotations

import os
from typing import List, Optional, Tuple

import numpy as np

from .contracts import FeatureGenerator, InferenceSolver
from .core import (
    ContractError,
    DataFormatError,
    Dataset,
    Lexicon,
    SparseFeatureVector,
    WeightVector,
)

BIAS_NAME = "<bias>"


class MulticlassInstance:
    """Raw (class-independent) features of one example."""

    __slots__ = ("raw",)

    def __init__(self, raw: SparseFeatureVector):
        self.raw = raw

    def __repr__(self) -> str:
        return f"MulticlassInstance({self.raw!r})"


class CostMatrix:
    """cost[gold][predicted], non-negative with a zero diagonal."""

    __slots__ = ("costs",)

    def __init__(self, costs):
        arr = np.asarray(costs, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ContractError("cost matrix must be square")
        if not np.all(np.isfinite(arr)):
            raise ContractError("cost matrix entries must be finite")
        if np.any(arr < 0):
            raise ContractError("cost matrix entries must be non-negative")
        if np.any(np.diag(arr) != 0):
            raise ContractError("cost matrix diagonal must be zero")
        self.costs = arr

    @classmethod
    def zero_one(cls, k: int) -> "CostMatrix":
        return cls(np.ones((k, k)) - np.eye(k))

    @property
    def size(self) -> int:
        return self.costs.shape[0]

    def cost(self, gold: int, predicted: int) -> float:
        return float(self.costs[gold, predicted])

    def row(self, gold: int) -> np.ndarray:
        return self.costs[gold]


def build_conjoined_lexicon(label_lexicon: Lexicon, raw_lexicon: Lexicon) -> Lexicon:
    """Enumerate the full K*B block feature space, label-major, and freeze it.

    Entry y*B + j is named "<label y>|<raw feature j>", which keeps the
    model artifact's weight-per-lexicon-entry correspondence exact.
    """
    lex = Lexicon()
    raw_names = raw_lexicon.names()
    for label in label_lexicon.names():
        for raw in raw_names:
            lex.intern(f"{label}|{raw}")
    return lex.freeze()


def raw_lexicon_from_model(feature_lexicon: Lexicon, label_lexicon: Lexicon) -> Lexicon:
    """Invert build_conjoined_lexicon using block 0's names."""
    k = len(label_lexicon)
    if k == 0:
        raise ContractError("multiclass model has an empty label lexicon")
    total = len(feature_lexicon)
    if total % k != 0:
        raise ContractError(
            f"conjoined feature space size {total} is not a multiple of {k} classes"
        )
    block = total // k
    prefix = len(label_lexicon.name(0)) + 1
    names = [feature_lexicon.name(j)[prefix:] for j in range(block)]
    return Lexicon.from_names(names, frozen=True)


class MulticlassFeatureGenerator(FeatureGenerator):
    """Block-offset feature map over a fully enumerated conjoined lexicon."""

    def __init__(self, label_lexicon: Lexicon, raw_lexicon: Lexicon):
        if len(label_lexicon) == 0:
            raise ContractError("multiclass needs at least one label")
        if len(raw_lexicon) == 0:
            raise ContractError("multiclass needs a non-empty raw feature space")
        self.label_lexicon = label_lexicon.freeze()
        self.raw_lexicon = raw_lexicon.freeze()
        self.feature_lexicon = build_conjoined_lexicon(label_lexicon, raw_lexicon)

    @property
    def block_size(self) -> int:
        return len(self.raw_lexicon)

    @property
    def num_classes(self) -> int:
        return len(self.label_lexicon)

    def features(self, x: MulticlassInstance, y: int) -> SparseFeatureVector:
        k = self.num_classes
        if not 0 <= y < k:
            raise ContractError(f"class index {y} outside 0..{k - 1}")
        b = self.block_size
        offset = y * b
        keep = x.raw.indices < b  # unseen prediction-time slots drop out
        return SparseFeatureVector(
            zip((x.raw.indices[keep] + offset).tolist(), x.raw.values[keep].tolist())
        )


class MulticlassSolver(InferenceSolver):
    """Linear scan over class scores; ties break toward the lowest index."""

    def __init__(self, fg: MulticlassFeatureGenerator, costs: Optional[CostMatrix] = None):
        self.fg = fg
        self.costs = costs if costs is not None else CostMatrix.zero_one(fg.num_classes)
        if self.costs.size != fg.num_classes:
            raise ContractError(
                f"cost matrix is {self.costs.size}x{self.costs.size} "
                f"but there are {fg.num_classes} classes"
            )

    def class_scores(self, w: WeightVector, x: MulticlassInstance) -> np.ndarray:
        b = self.fg.block_size
        k = self.fg.num_classes
        arr = w.array
        cap = arr.shape[0]
        keep = x.raw.indices < b
        idx = x.raw.indices[keep]
        vals = x.raw.values[keep]
        scores = np.zeros(k, dtype=np.float64)
        for y in range(k):
            shifted = idx + y * b
            inside = shifted < cap
            scores[y] = np.dot(arr[shifted[inside]], vals[inside])
        return scores

    def best(self, w: WeightVector, x: MulticlassInstance) -> int:
        return int(np.argmax(self.class_scores(w, x)))

    def loss_augmented_best(
        self, w: WeightVector, x: MulticlassInstance, y_gold: int
    ) -> Tuple[int, float]:
        augmented = self.class_scores(w, x) + self.costs.row(y_gold)
        y_hat = int(np.argmax(augmented))
        return y_hat, self.costs.cost(y_gold, y_hat)

    def loss(self, y: int, y_gold: int) -> float:
        return self.costs.cost(y_gold, y)


def read_cost_matrix(path, k: int) -> CostMatrix:
    """Parse a whitespace-separated K x K matrix sidecar file."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            cells = line.split()
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                raise DataFormatError(
                    "non-numeric cost entry", path=path, line=lineno
                ) from None
            if len(cells) != k:
                raise DataFormatError(
                    f"expected {k} columns, got {len(cells)}", path=path, line=lineno
                )
    if len(rows) != k:
        raise DataFormatError(
            f"expected {k} rows for {k} labels, got {len(rows)}", path=path
        )
    try:
        return CostMatrix(rows)
    except ContractError as exc:
        raise DataFormatError(f"invalid cost matrix: {exc}", path=path) from exc


def read_svmlight_multiclass(
    path,
    label_lexicon: Lexicon,
    raw_lexicon: Lexicon,
    bias: bool = True,
    allow_empty: bool = False,
    cost_path=None,
) -> Tuple[Dataset, Optional[CostMatrix]]:
    """Parse "label idx:val idx:val ..." lines.

    Feature indices must be strictly increasing integers within a line.
    With unfrozen lexicons, labels and feature tokens are interned
    (training); frozen lexicons treat unknown labels as errors and unknown
    feature tokens as droppable.  A sidecar file <path>.cost (or an
    explicit cost_path) supplies the cost matrix; otherwise costs are 0/1.
    """
    parsed: List[Tuple[int, List[Tuple[str, float]]]] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            label_name = tokens[0]
            if label_lexicon.frozen:
                y = label_lexicon.get(label_name)
                if y is None:
                    raise DataFormatError(
                        f"unknown label {label_name!r} (model label set is fixed)",
                        path=path,
                        line=lineno,
                    )
            else:
                y = label_lexicon.intern(label_name)
            feats: List[Tuple[str, float]] = []
            prev_idx = None
            for tok in tokens[1:]:
                name, sep, val_s = tok.partition(":")
                if not sep:
                    raise DataFormatError(
                        f"malformed feature {tok!r} (expected idx:value)",
                        path=path,
                        line=lineno,
                    )
                try:
                    idx = int(name)
                    val = float(val_s)
                except ValueError:
                    raise DataFormatError(
                        f"non-numeric feature {tok!r}", path=path, line=lineno
                    ) from None
                if not np.isfinite(val):
                    raise DataFormatError(
                        f"non-finite feature value in {tok!r}", path=path, line=lineno
                    )
                if prev_idx is not None and idx <= prev_idx:
                    raise DataFormatError(
                        f"feature indices must be strictly increasing "
                        f"({idx} after {prev_idx})",
                        path=path,
                        line=lineno,
                    )
                prev_idx = idx
                feats.append((name, val))
            if not feats and not bias:
                raise DataFormatError(
                    "example has no features and the bias slot is disabled",
                    path=path,
                    line=lineno,
                )
            if not raw_lexicon.frozen:
                for name, _ in feats:
                    raw_lexicon.intern(name)
            parsed.append((y, feats))
    if not parsed and not allow_empty:
        raise DataFormatError("no examples found (empty dataset)", path=path)

    if bias and not raw_lexicon.frozen:
        raw_lexicon.intern(BIAS_NAME)
    bias_slot = raw_lexicon.get(BIAS_NAME)

    examples = []
    for y, feats in parsed:
        pairs = []
        for name, val in feats:
            slot = raw_lexicon.get(name)
            if slot is not None:
                pairs.append((slot, val))
        if bias and bias_slot is not None:
            pairs.append((bias_slot, 1.0))
        examples.append((MulticlassInstance(SparseFeatureVector(pairs)), y))

    costs = None
    sidecar = cost_path if cost_path is not None else f"{path}.cost"
    if os.path.exists(sidecar):
        costs = read_cost_matrix(sidecar, len(label_lexicon))
    return Dataset("multiclass", examples), costs


def write_multiclass_predictions(path, labels, label_lexicon: Lexicon) -> None:
    """One predicted label name per line, in input order."""
    with open(path, "w", encoding="utf-8") as fh:
        for y in labels:
            fh.write(label_lexicon.name(y) + "\n")

"""Sparse/dense vector arithmetic, string lexicons, and dataset containers.

Everything downstream (trainers, inference solvers, model files) moves
scores through the two vector types defined here.  All weights and scores
are 64-bit floats; dual coordinate descent step sizes are sensitive to
cancellation, so nothing in this package downcasts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Tuple

import numpy as np

TASKS = ("sequence", "deptree", "multiclass")


class StructLearnError(Exception):
    """Base class for every error raised by this package."""


class ContractError(StructLearnError):
    """An API precondition or invariant was violated by the caller."""


class NumericError(StructLearnError):
    """A score or weight became NaN/Inf, signalling corrupted state."""


class DataFormatError(StructLearnError):
    """An input data file could not be parsed."""

    def __init__(self, message: str, path=None, line: Optional[int] = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None and line is not None:
            prefix = f"{path}:{line}: "
        elif path is not None:
            prefix = f"{path}: "
        elif line is not None:
            prefix = f"line {line}: "
        super().__init__(prefix + message)


class ModelFormatError(StructLearnError):
    """A model file is truncated, corrupted, or has an unsupported version."""


class TaskMismatchError(StructLearnError):
    """A model was loaded for a different task than the one requested."""


class TrainingError(StructLearnError):
    """Training aborted, e.g. because a parallel worker died."""


class SparseFeatureVector:
    """Immutable sparse vector of (index, value) pairs.

    Indices are kept strictly increasing.  Duplicate indices passed to the
    constructor are summed and entries that are (or cancel to) zero are
    dropped, so two vectors with the same entries always compare equal.
    """

    __slots__ = ("indices", "values")

    def __init__(self, pairs: Iterable[Tuple[int, float]] = ()):
        items = list(pairs)
        if not items:
            self.indices = np.empty(0, dtype=np.int64)
            self.values = np.empty(0, dtype=np.float64)
            return
        idx = np.asarray([p[0] for p in items], dtype=np.int64)
        val = np.asarray([p[1] for p in items], dtype=np.float64)
        if idx.min() < 0:
            raise ContractError("feature indices must be non-negative")
        if not np.all(np.isfinite(val)):
            raise ContractError("feature values must be finite")
        uniq, inverse = np.unique(idx, return_inverse=True)
        summed = np.bincount(inverse, weights=val)
        keep = summed != 0.0
        self.indices = uniq[keep]
        self.values = summed[keep]

    def __len__(self) -> int:
        return int(self.indices.size)

    def __iter__(self) -> Iterator[Tuple[int, float]]:
        return zip((int(i) for i in self.indices), (float(v) for v in self.values))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseFeatureVector):
            return NotImplemented
        return np.array_equal(self.indices, other.indices) and np.array_equal(
            self.values, other.values
        )

    def __repr__(self) -> str:
        inside = ", ".join(f"{i}:{v:g}" for i, v in self)
        return f"SparseFeatureVector({{{inside}}})"

    def scaled(self, factor: float) -> "SparseFeatureVector":
        return SparseFeatureVector(zip(self.indices, self.values * factor))

    def squared_norm(self) -> float:
        return float(np.dot(self.values, self.values))

    def to_dense(self, dimension: int) -> np.ndarray:
        dense = np.zeros(dimension, dtype=np.float64)
        inside = self.indices < dimension
        dense[self.indices[inside]] = self.values[inside]
        return dense


class WeightVector:
    """Dense weight vector that grows lazily as features are discovered.

    Reads past the current dimension return 0.  One thread may write while
    others read: readers may observe stale values but never garbage, because
    the backing buffer is only ever replaced wholesale and spare capacity is
    zero-filled.  `freeze` pins the dimension for the prediction phase.
    """

    __slots__ = ("_data", "_dimension", "_frozen")

    def __init__(self, dimension: int = 0):
        if dimension < 0:
            raise ContractError("dimension must be non-negative")
        self._data = np.zeros(max(dimension, 16), dtype=np.float64)
        self._dimension = dimension
        self._frozen = False

    @classmethod
    def from_array(cls, array: np.ndarray) -> "WeightVector":
        arr = np.asarray(array, dtype=np.float64)
        if arr.ndim != 1:
            raise ContractError("weight array must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise NumericError("weight array contains non-finite values")
        w = cls(0)
        w._data = arr.copy()
        w._dimension = arr.size
        return w

    @property
    def array(self) -> np.ndarray:
        """Backing buffer; entries past `dimension` are zero."""
        return self._data

    @property
    def dimension(self) -> int:
        return self._dimension

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> "WeightVector":
        self._frozen = True
        return self

    def value(self, index: int) -> float:
        arr = self._data
        if 0 <= index < arr.shape[0]:
            return float(arr[index])
        return 0.0

    def resize(self, dimension: int) -> None:
        """Grow the logical dimension (never shrinks)."""
        if dimension <= self._dimension:
            return
        if self._frozen:
            raise ContractError(
                "cannot grow a frozen weight vector (prediction phase)"
            )
        if dimension > self._data.shape[0]:
            capacity = max(2 * self._data.shape[0], dimension)
            fresh = np.zeros(capacity, dtype=np.float64)
            fresh[: self._data.shape[0]] = self._data
            self._data = fresh  # old buffer stays valid for concurrent readers
        self._dimension = dimension

    def snapshot(self) -> np.ndarray:
        """Copy of the logical contents, for checkpoints and reports."""
        return self._data[: self._dimension].copy()

    def copy(self) -> "WeightVector":
        w = WeightVector.from_array(self.snapshot())
        if self._frozen:
            w.freeze()
        return w

    def l2_squared(self) -> float:
        live = self._data[: self._dimension]
        return float(np.dot(live, live))

    def __repr__(self) -> str:
        return f"WeightVector(dimension={self._dimension}, frozen={self._frozen})"


def dot(weights: WeightVector, feats: SparseFeatureVector) -> float:
    """Score a sparse feature vector: sum of w[i] * v over entries.

    Indices beyond the weight dimension contribute zero, so prediction-time
    features unseen in training silently drop out.
    """
    arr = weights.array  # grab the buffer once; safe under concurrent growth
    if feats.indices.size == 0:
        return 0.0
    inside = feats.indices < arr.shape[0]
    result = float(np.dot(arr[feats.indices[inside]], feats.values[inside]))
    if not math.isfinite(result):
        raise NumericError("dot product is not finite; weights or features corrupted")
    return result


def axpy(weights: WeightVector, scale: float, feats: SparseFeatureVector) -> None:
    """In-place update w[i] += scale * v, growing the vector as needed."""
    if not math.isfinite(scale):
        raise ContractError("axpy scale must be finite")
    if scale == 0.0 or feats.indices.size == 0:
        return
    top = int(feats.indices[-1])
    if top >= weights.dimension:
        weights.resize(top + 1)  # raises ContractError when frozen
    weights.array[feats.indices] += scale * feats.values


def diff_squared_norm(a: SparseFeatureVector, b: SparseFeatureVector) -> float:
    """||a - b||^2 by merged traversal, without materializing the difference."""
    ai, av = a.indices, a.values
    bi, bv = b.indices, b.values
    i = j = 0
    total = 0.0
    while i < ai.size and j < bi.size:
        if ai[i] == bi[j]:
            d = av[i] - bv[j]
            total += d * d
            i += 1
            j += 1
        elif ai[i] < bi[j]:
            total += av[i] * av[i]
            i += 1
        else:
            total += bv[j] * bv[j]
            j += 1
    while i < ai.size:
        total += av[i] * av[i]
        i += 1
    while j < bi.size:
        total += bv[j] * bv[j]
        j += 1
    return total


def difference(a: SparseFeatureVector, b: SparseFeatureVector) -> SparseFeatureVector:
    """Sparse a - b; cancelled entries are dropped by construction."""
    pairs = list(zip(a.indices, a.values))
    pairs.extend(zip(b.indices, -b.values))
    return SparseFeatureVector(pairs)


class Lexicon:
    """Bijection between strings and dense indices 0..size-1.

    A frozen lexicon never grows: lookups of unknown strings return None
    instead of allocating a new index.
    """

    __slots__ = ("_index", "_names", "_frozen")

    def __init__(self):
        self._index: dict = {}
        self._names: list = []
        self._frozen = False

    def __len__(self) -> int:
        return len(self._names)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> "Lexicon":
        self._frozen = True
        return self

    def intern(self, name: str) -> int:
        existing = self._index.get(name)
        if existing is not None:
            return existing
        if self._frozen:
            raise ContractError(f"frozen lexicon cannot intern new entry {name!r}")
        idx = len(self._names)
        self._index[name] = idx
        self._names.append(name)
        return idx

    def get(self, name: str) -> Optional[int]:
        return self._index.get(name)

    def name(self, index: int) -> str:
        return self._names[index]

    def names(self) -> Tuple[str, ...]:
        return tuple(self._names)

    @classmethod
    def from_names(cls, names: Iterable[str], frozen: bool = False) -> "Lexicon":
        lex = cls()
        for name in names:
            lex.intern(name)
        if frozen:
            lex.freeze()
        return lex


@dataclass
class Dataset:
    """A list of (instance, gold structure) pairs plus the task it belongs to."""

    task: str
    examples: list = field(default_factory=list)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ContractError(f"unknown task {self.task!r}; expected one of {TASKS}")

    def __len__(self) -> int:
        return len(self.examples)

    def require_nonempty(self) -> "Dataset":
        if not self.examples:
            raise ContractError("training requires a non-empty dataset")
        return self


# ---------------------------------------------------------------------------
# Model persistence


MODEL_MAGIC = b"structln"
MODEL_FORMAT_VERSION = 1


@dataclass
class ModelArtifact:
    """Trained weights plus everything needed to apply them to new data."""

    weights: WeightVector
    task: str
    feature_lexicon: Lexicon
    label_lexicon: Lexicon
    format_version: int = MODEL_FORMAT_VERSION
    trainer_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ContractError(f"unknown task {self.task!r}")
        if self.weights.dimension != len(self.feature_lexicon):
            raise ContractError(
                "weight dimension %d does not match feature lexicon size %d"
                % (self.weights.dimension, len(self.feature_lexicon))
            )
        if not self.feature_lexicon.frozen or not self.label_lexicon.frozen:
            raise ContractError("model lexicons must be frozen")

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelArtifact):
            return NotImplemented
        return (
            self.task == other.task
            and self.format_version == other.format_version
            and self.trainer_meta == other.trainer_meta
            and self.feature_lexicon.names() == other.feature_lexicon.names()
            and self.label_lexicon.names() == other.label_lexicon.names()
            and np.array_equal(self.weights.snapshot(), other.weights.snapshot())
        )


class _ByteReader:
    """Cursor over a byte string that reports the offset of any short read."""

    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.offset = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.blob):
            raise ModelFormatError(
                f"{self.path}: truncated model file: needed {n} bytes at byte "
                f"offset {self.offset}, file has {len(self.blob)}"
            )
        chunk = self.blob[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def u32(self) -> int:
        return int.from_bytes(self.take(4), "little")

    def u64(self) -> int:
        return int.from_bytes(self.take(8), "little")

    def string(self) -> str:
        length = self.u32()
        raw = self.take(length)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ModelFormatError(
                f"{self.path}: invalid UTF-8 in string at byte offset "
                f"{self.offset - length}: {exc}"
            ) from exc


def _pack_string(text: str) -> bytes:
    raw = text.encode("utf-8")
    return len(raw).to_bytes(4, "little") + raw


def save_model(model: ModelArtifact, path) -> None:
    """Write a model as a length-prefixed binary container.

    Layout: 8-byte magic, u32 version, task string, label string table,
    feature string table, u64 weight count + raw little-endian float64
    weights, then the trainer metadata map. All integers little-endian.
    """
    parts = [MODEL_MAGIC]
    parts.append(int(model.format_version).to_bytes(4, "little"))
    parts.append(_pack_string(model.task))
    for lex in (model.label_lexicon, model.feature_lexicon):
        names = lex.names()
        parts.append(len(names).to_bytes(4, "little"))
        for name in names:
            parts.append(_pack_string(name))
    weights = model.weights.snapshot()
    parts.append(weights.size.to_bytes(8, "little"))
    parts.append(np.ascontiguousarray(weights, dtype="<f8").tobytes())
    meta = model.trainer_meta
    parts.append(len(meta).to_bytes(4, "little"))
    for key in meta:
        parts.append(_pack_string(str(key)))
        parts.append(_pack_string(str(meta[key])))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_model(path) -> ModelArtifact:
    """Read a model container written by save_model; inverse bit-for-bit."""
    with open(path, "rb") as fh:
        blob = fh.read()
    reader = _ByteReader(blob, path)
    magic = reader.take(len(MODEL_MAGIC))
    if magic != MODEL_MAGIC:
        raise ModelFormatError(
            f"{path}: bad magic {magic!r}; not a structlearn model file"
        )
    version = reader.u32()
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: unsupported model version {version} "
            f"(this build reads version {MODEL_FORMAT_VERSION})"
        )
    task = reader.string()
    if task not in TASKS:
        raise ModelFormatError(f"{path}: unknown task tag {task!r}")
    tables = []
    for _ in range(2):
        count = reader.u32()
        tables.append([reader.string() for _ in range(count)])
    label_names, feature_names = tables
    weight_count = reader.u64()
    raw = reader.take(8 * weight_count)
    weights = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if weight_count != len(feature_names):
        raise ModelFormatError(
            f"{path}: weight count {weight_count} does not match feature "
            f"table size {len(feature_names)}"
        )
    meta_count = reader.u32()
    meta = {}
    for _ in range(meta_count):
        key = reader.string()
        meta[key] = reader.string()
    if reader.offset != len(blob):
        raise ModelFormatError(
            f"{path}: {len(blob) - reader.offset} trailing bytes after byte "
            f"offset {reader.offset}"
        )
    return ModelArtifact(
        weights=WeightVector.from_array(weights).freeze(),
        task=task,
        feature_lexicon=Lexicon.from_names(feature_names, frozen=True),
        label_lexicon=Lexicon.from_names(label_names, frozen=True),
        format_version=version,
        trainer_meta=meta,
    )

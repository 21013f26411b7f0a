"""Linear-chain sequence tagging: Viterbi decoding over emission and
transition features, Hamming loss, and the two-column data format.

Feature templates are first-order only: one emission feature per (token,
tag) position, one transition feature per adjacent tag pair, and a start
feature for the first tag.  An optional flag adds token-shape and suffix
templates; it is off by default.
"""

from __future__ import annotations

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

BEGIN = "<s>"


class TokenSequence:
    """A sentence to be tagged."""

    __slots__ = ("tokens",)

    def __init__(self, tokens):
        toks = tuple(tokens)
        if not toks:
            raise ContractError("token sequence must be non-empty")
        self.tokens = toks

    def __len__(self) -> int:
        return len(self.tokens)

    def __repr__(self) -> str:
        return f"TokenSequence({list(self.tokens)!r})"


class TagSequence:
    """Tag indices (into the label lexicon), one per token."""

    __slots__ = ("tags",)

    def __init__(self, tags):
        self.tags = tuple(int(t) for t in tags)

    def __len__(self) -> int:
        return len(self.tags)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TagSequence):
            return NotImplemented
        return self.tags == other.tags

    def __hash__(self) -> int:
        return hash(self.tags)

    def __repr__(self) -> str:
        return f"TagSequence({list(self.tags)!r})"


def _token_shape(token: str) -> str:
    # collapse runs: "McA1" -> "XxXd"
    out = []
    for ch in token:
        if ch.isupper():
            code = "X"
        elif ch.islower():
            code = "x"
        elif ch.isdigit():
            code = "d"
        else:
            code = "-"
        if not out or out[-1] != code:
            out.append(code)
    return "".join(out)


class SequenceFeatureGenerator(FeatureGenerator):
    """Emission/transition templates over a shared feature lexicon.

    While the lexicon is unfrozen, new feature strings are interned; once
    frozen, unknown strings are dropped (their score contribution is zero).
    """

    def __init__(
        self,
        feature_lexicon: Lexicon,
        label_lexicon: Lexicon,
        extra_templates: bool = False,
    ):
        self.feature_lexicon = feature_lexicon
        self.label_lexicon = label_lexicon
        self.extra_templates = extra_templates

    def _emit(self, pairs: List[Tuple[int, float]], name: str) -> None:
        lex = self.feature_lexicon
        if lex.frozen:
            idx = lex.get(name)
            if idx is None:
                return
        else:
            idx = lex.intern(name)
        pairs.append((idx, 1.0))

    def features(self, x: TokenSequence, y: TagSequence) -> SparseFeatureVector:
        if len(x) != len(y):
            raise ContractError(
                f"tag sequence length {len(y)} != token count {len(x)}"
            )
        n_tags = len(self.label_lexicon)
        pairs: List[Tuple[int, float]] = []
        prev_name = BEGIN
        for token, tag in zip(x.tokens, y.tags):
            if not 0 <= tag < n_tags:
                raise ContractError(f"tag index {tag} outside label lexicon")
            tag_name = self.label_lexicon.name(tag)
            self._emit(pairs, f"E|{token}|{tag_name}")
            self._emit(pairs, f"T|{prev_name}|{tag_name}")
            if self.extra_templates:
                self._emit(pairs, f"SH|{_token_shape(token)}|{tag_name}")
                self._emit(pairs, f"S3|{token[-3:]}|{tag_name}")
            prev_name = tag_name
        return SparseFeatureVector(pairs)


def hamming_loss(y: TagSequence, y_gold: TagSequence) -> int:
    """Number of positions whose tags differ."""
    if len(y) != len(y_gold):
        raise ContractError(
            f"cannot compare tag sequences of lengths {len(y)} and {len(y_gold)}"
        )
    return sum(1 for a, b in zip(y.tags, y_gold.tags) if a != b)


def viterbi_decode(
    emission: np.ndarray, transition: np.ndarray, start: np.ndarray
) -> np.ndarray:
    """Max-sum dynamic program over an L x T emission score matrix.

    transition[p, c] scores tag p followed by tag c; start[c] scores tag c
    in first position.  Ties break toward the lowest tag index (argmax
    takes the first maximum).  O(L * T^2).
    """
    length, n_tags = emission.shape
    delta = start + emission[0]
    back = np.zeros((length, n_tags), dtype=np.int64)
    for t in range(1, length):
        scores = delta[:, None] + transition  # scores[p, c]
        best_prev = np.argmax(scores, axis=0)
        delta = scores[best_prev, np.arange(n_tags)] + emission[t]
        back[t] = best_prev
    tags = np.zeros(length, dtype=np.int64)
    tags[-1] = int(np.argmax(delta))
    for t in range(length - 1, 0, -1):
        tags[t - 1] = back[t, tags[t]]
    return tags


class SequenceSolver(InferenceSolver):
    """Viterbi inference against the feature generator's lexicons.

    Scoring always uses read-only lexicon lookups, so concurrent decoding
    against a growing training lexicon stays safe (a feature not yet
    interned simply scores zero, exactly as an unseen feature would).
    """

    def __init__(self, fg: SequenceFeatureGenerator):
        self.fg = fg

    def _score_matrices(self, w: WeightVector, x: TokenSequence):
        flex = self.fg.feature_lexicon
        llex = self.fg.label_lexicon
        n_tags = len(llex)
        if n_tags == 0:
            raise ContractError("tag lexicon is empty; nothing to decode")
        tag_names = llex.names()
        arr = w.array
        cap = arr.shape[0]

        def weight_of(name: str) -> float:
            idx = flex.get(name)
            if idx is None or idx >= cap:
                return 0.0
            return float(arr[idx])

        emission = np.zeros((len(x), n_tags), dtype=np.float64)
        for t, token in enumerate(x.tokens):
            for k, tag_name in enumerate(tag_names):
                score = weight_of(f"E|{token}|{tag_name}")
                if self.fg.extra_templates:
                    score += weight_of(f"SH|{_token_shape(token)}|{tag_name}")
                    score += weight_of(f"S3|{token[-3:]}|{tag_name}")
                emission[t, k] = score
        transition = np.zeros((n_tags, n_tags), dtype=np.float64)
        for p, prev_name in enumerate(tag_names):
            for c, cur_name in enumerate(tag_names):
                transition[p, c] = weight_of(f"T|{prev_name}|{cur_name}")
        begin = np.asarray(
            [weight_of(f"T|{BEGIN}|{name}") for name in tag_names], dtype=np.float64
        )
        return emission, transition, begin

    def best(self, w: WeightVector, x: TokenSequence) -> TagSequence:
        emission, transition, begin = self._score_matrices(w, x)
        return TagSequence(viterbi_decode(emission, transition, begin))

    def loss_augmented_best(
        self, w: WeightVector, x: TokenSequence, y_gold: TagSequence
    ) -> Tuple[TagSequence, float]:
        if len(x) != len(y_gold):
            raise ContractError(
                f"gold length {len(y_gold)} != token count {len(x)}"
            )
        emission, transition, begin = self._score_matrices(w, x)
        # Hamming loss decomposes per position: +1 on every non-gold tag.
        emission += 1.0
        emission[np.arange(len(x)), np.asarray(y_gold.tags)] -= 1.0
        y_hat = TagSequence(viterbi_decode(emission, transition, begin))
        return y_hat, float(hamming_loss(y_hat, y_gold))

    def loss(self, y: TagSequence, y_gold: TagSequence) -> float:
        return float(hamming_loss(y, y_gold))


def read_column_data(
    path, label_lexicon: Lexicon, allow_empty: bool = False
) -> Dataset:
    """Parse token<TAB>tag lines; a blank line ends a sequence.

    With an unfrozen lexicon new tags are interned (training); with a
    frozen one an unknown tag is a data error (prediction/evaluation).
    """
    examples = []
    tokens: List[str] = []
    tags: List[int] = []

    def flush():
        if tokens:
            examples.append((TokenSequence(tokens), TagSequence(tags)))
            tokens.clear()
            tags.clear()

    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                flush()
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise DataFormatError(
                    f"expected 2 tab-separated fields, got {len(fields)}",
                    path=path,
                    line=lineno,
                )
            token, tag_name = fields
            if label_lexicon.frozen:
                tag = label_lexicon.get(tag_name)
                if tag is None:
                    raise DataFormatError(
                        f"unknown tag {tag_name!r} (model tagset is fixed)",
                        path=path,
                        line=lineno,
                    )
            else:
                tag = label_lexicon.intern(tag_name)
            tokens.append(token)
            tags.append(tag)
    flush()
    if not examples and not allow_empty:
        raise DataFormatError("no sequences found (empty dataset)", path=path)
    return Dataset("sequence", examples)


def write_column_predictions(
    path, instances, predictions, label_lexicon: Lexicon
) -> None:
    """Write sequences back out with the predicted tag in column 2."""
    with open(path, "w", encoding="utf-8") as fh:
        for x, y in zip(instances, predictions):
            for token, tag in zip(x.tokens, y.tags):
                fh.write(f"{token}\t{label_lexicon.name(tag)}\n")
            fh.write("\n")

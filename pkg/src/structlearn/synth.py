"""Synthetic corpora drawn from known linear models.

Each generator samples inputs, then labels them with exact inference under
a randomly drawn "true" weight assignment over the same feature templates
the matching task uses.  The gold structures are therefore realizable by
construction: the true weights themselves achieve zero training loss, so a
max-margin or perceptron learner can in principle recover them exactly.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Dict, List, Tuple

import numpy as np

from .deptree import Sentence, chu_liu_edmonds, edge_feature_names
from .seqtag import viterbi_decode


def _hash_weight(seed: int, name: str, scale: float) -> float:
    """Deterministic pseudo-random weight in [-scale, scale] for a feature
    name; stable across processes (unlike the builtin hash)."""
    digest = hashlib.blake2b(
        f"{seed}|{name}".encode("utf-8"), digest_size=8
    ).digest()
    (raw,) = struct.unpack("<Q", digest)
    return scale * (2.0 * raw / 2**64 - 1.0)


# ---------------------------------------------------------------------------
# Sequence tagging


def tagging_corpus(
    n_sequences: int,
    seed: int,
    vocab_size: int = 100,
    n_tags: int = 6,
    min_len: int = 5,
    max_len: int = 12,
    ambiguous_fraction: float = 0.25,
    transition_scale: float = 1.5,
) -> List[Tuple[List[str], List[str]]]:
    """Sentences of synthetic words with Viterbi-consistent gold tags.

    Most words strongly prefer one tag; an ambiguous minority carries two
    weak preferences so the transition scores decide, which keeps the task
    from collapsing into per-token classification.  Split one call's output
    into train/test portions (separate calls draw different true models).
    A small transition_scale with ambiguous_fraction=0 yields an easy
    wide-margin corpus; the defaults yield a context-dependent one.
    Returns (tokens, tags) pairs with string tags T0..T{n_tags-1}.
    """
    rng = np.random.default_rng(seed)
    tags = [f"T{k}" for k in range(n_tags)]
    words = [f"w{j:03d}" for j in range(vocab_size)]
    emission: Dict[str, np.ndarray] = {}
    for j, word in enumerate(words):
        scores = rng.uniform(0.0, 0.4, size=n_tags)
        if rng.random() < ambiguous_fraction:
            a, b = rng.choice(n_tags, size=2, replace=False)
            scores[a] += 2.0 + rng.uniform(0, 0.3)
            scores[b] += 2.0 + rng.uniform(0, 0.3)
        else:
            scores[rng.integers(n_tags)] += 4.0 + rng.uniform(0, 1.0)
        emission[word] = scores
    transition = rng.uniform(-transition_scale, transition_scale, size=(n_tags, n_tags))
    start = rng.uniform(-0.5, 0.5, size=n_tags)
    corpus = []
    for _ in range(n_sequences):
        length = int(rng.integers(min_len, max_len + 1))
        sent = [words[int(j)] for j in rng.integers(0, vocab_size, size=length)]
        e = np.stack([emission[wd] for wd in sent])
        gold = viterbi_decode(e, transition, start)
        corpus.append((sent, [tags[int(k)] for k in gold]))
    return corpus


def write_tagging_file(path, corpus) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tokens, tags in corpus:
            for token, tag in zip(tokens, tags):
                fh.write(f"{token}\t{tag}\n")
            fh.write("\n")


# ---------------------------------------------------------------------------
# Dependency parsing


_LEXICAL_PREFIXES = ("HW|", "MW|", "HM|")
_BIN_RANK = {"1": 0, "2": 1, "3": 2, "4": 3, "5": 4, "6-10": 5, "11+": 6}


def _true_edge_weight(seed: int, name: str, lexical_scale: float) -> float:
    """True-model weight for one edge feature name.

    The bias template carries a deterministic penalty that grows with the
    binned distance, on top of hashed jitter.  Because the penalty is a
    function of the feature name alone, the true model stays an exact
    linear function of the extracted features, but attachment decisions
    get decisive margins instead of coin-flip hash comparisons.
    """
    if name.startswith("B|"):
        ctx = name[2:]
        return _hash_weight(seed, name, 1.0) - 0.8 * _BIN_RANK[ctx[1:]]
    if name.startswith(_LEXICAL_PREFIXES):
        return _hash_weight(seed, name, lexical_scale)
    return _hash_weight(seed, name, 1.0)


def parsing_corpus(
    n_sentences: int,
    seed: int,
    vocab_size: int = 60,
    n_pos: int = 5,
    min_len: int = 3,
    max_len: int = 8,
    lexical_scale: float = 0.1,
) -> List[Tuple[List[str], List[str], List[int]]]:
    """Sentences with gold trees = maximum arborescence under true weights.

    The true weight of every edge feature comes from a seeded hash, so the
    scoring model is a fixed function over exactly the templates the parser
    extracts (word pair, POS pair, direction, binned distance).  Word-based
    templates get weights shrunk by lexical_scale, and the bias template
    prefers short attachments: the POS and geometry feature space is small
    enough for a few hundred sentences to cover, which makes held-out trees
    predictable from training data.  Split one call's output into train/test
    portions.  Returns (words, pos, heads) triples.
    """
    rng = np.random.default_rng(seed)
    words = [f"v{j:03d}" for j in range(vocab_size)]
    pos_of = {w: f"P{int(rng.integers(n_pos))}" for w in words}
    corpus = []
    for _ in range(n_sentences):
        length = int(rng.integers(min_len, max_len + 1))
        sent_words = [words[int(j)] for j in rng.integers(0, vocab_size, size=length)]
        sent = Sentence(sent_words, [pos_of[w] for w in sent_words])
        scores = np.zeros((length + 1, length + 1))
        for m in range(1, length + 1):
            for h in range(0, length + 1):
                if h == m:
                    continue
                scores[h, m] = sum(
                    _true_edge_weight(seed, name, lexical_scale)
                    for name in edge_feature_names(sent, h, m)
                )
        tree = chu_liu_edmonds(scores)
        corpus.append((sent_words, [pos_of[w] for w in sent_words], list(tree.heads)))
    return corpus


def write_conll_file(path, corpus) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for words, pos, heads in corpus:
            for m, (word, tag, head) in enumerate(zip(words, pos, heads), start=1):
                cols = [str(m), word, "_", "_", tag, "_", str(head), "_", "_", "_"]
                fh.write("\t".join(cols) + "\n")
            fh.write("\n")


# ---------------------------------------------------------------------------
# Multiclass


def multiclass_corpus(
    n_examples: int,
    seed: int,
    n_classes: int = 4,
    block: int = 3,
    noise: float = 0.2,
) -> List[Tuple[str, List[Tuple[int, float]]]]:
    """Linearly separable points: class k lights up its own feature block.

    Raw feature indices are 1-based as in the data format; class k owns
    indices k*block+1 .. (k+1)*block, and every example gets one weak noise
    feature from another class's block.  Returns (label, [(idx, val)]).
    """
    rng = np.random.default_rng(seed)
    corpus = []
    for _ in range(n_examples):
        k = int(rng.integers(n_classes))
        feats = {}
        for j in range(block):
            feats[k * block + j + 1] = 1.0 + float(rng.uniform(0, 0.5))
        other = int(rng.integers(n_classes * block)) + 1
        if other not in feats:
            feats[other] = float(rng.uniform(0, noise))
        corpus.append((f"L{k}", sorted(feats.items())))
    return corpus


def write_svmlight_file(path, corpus) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for label, feats in corpus:
            cells = " ".join(f"{idx}:{val:g}" for idx, val in feats)
            fh.write(f"{label} {cells}\n")

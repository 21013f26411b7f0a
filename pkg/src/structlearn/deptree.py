"""Graph-based dependency parsing: arc-factored edge features, maximum
spanning arborescence search (Chu-Liu-Edmonds), attachment loss, and the
CoNLL-style column format.

Trees are rooted at the artificial node 0; word m's head is heads[m-1].
The root may take multiple children (no single-root constraint), which is
what plain Chu-Liu-Edmonds yields.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Sequence as Seq, Set, Tuple

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

ROOT_WORD = "<root>"


class Sentence:
    """Words to be parsed, with optional POS tags."""

    __slots__ = ("words", "pos")

    def __init__(self, words, pos=None):
        ws = tuple(words)
        if not ws:
            raise ContractError("sentence must be non-empty")
        self.words = ws
        if pos is not None:
            pos = tuple(pos)
            if len(pos) != len(ws):
                raise ContractError("POS list length differs from word count")
        self.pos = pos

    def __len__(self) -> int:
        return len(self.words)

    def __repr__(self) -> str:
        return f"Sentence({list(self.words)!r})"


class DependencyTree:
    """heads[m-1] is the head of word m (0 denotes the artificial root)."""

    __slots__ = ("heads",)

    def __init__(self, heads):
        hs = tuple(int(h) for h in heads)
        if not hs:
            raise ContractError("tree must cover at least one word")
        n = len(hs)
        for m, h in enumerate(hs, start=1):
            if h == m:
                raise ContractError(f"self-loop at word {m}")
            if not 0 <= h <= n:
                raise ContractError(f"head {h} of word {m} outside 0..{n}")
        # every node must reach the root; a cycle never does
        for m in range(1, n + 1):
            seen = set()
            node = m
            while node != 0:
                if node in seen:
                    raise ContractError(f"cycle through word {node}")
                seen.add(node)
                node = hs[node - 1]
        self.heads = hs

    def __len__(self) -> int:
        return len(self.heads)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DependencyTree):
            return NotImplemented
        return self.heads == other.heads

    def __hash__(self) -> int:
        return hash(self.heads)

    def __repr__(self) -> str:
        return f"DependencyTree({list(self.heads)!r})"


def distance_bin(h: int, m: int) -> str:
    d = abs(h - m)
    if d <= 5:
        return str(d)
    if d <= 10:
        return "6-10"
    return "11+"


def edge_feature_names(x: Sentence, h: int, m: int):
    """Template expansion for arc h -> m; the single source of truth used
    by feature extraction, arc scoring, and the synthetic treebank."""
    n = len(x)
    if not (0 <= h <= n and 1 <= m <= n):
        raise ContractError(f"arc ({h},{m}) out of range for {n} words")
    if h == m:
        raise ContractError(f"self-loop arc ({h},{m})")
    ctx = ("R" if h < m else "L") + distance_bin(h, m)
    hw = ROOT_WORD if h == 0 else x.words[h - 1]
    mw = x.words[m - 1]
    yield f"B|{ctx}"
    yield f"HW|{hw}|{ctx}"
    yield f"MW|{mw}|{ctx}"
    yield f"HM|{hw}|{mw}|{ctx}"
    if x.pos is not None:
        hp = ROOT_WORD if h == 0 else x.pos[h - 1]
        mp = x.pos[m - 1]
        yield f"HP|{hp}|{ctx}"
        yield f"MP|{mp}|{ctx}"
        yield f"HPMP|{hp}|{mp}|{ctx}"


class DependencyFeatureGenerator(FeatureGenerator):
    """Arc templates over word pair, POS pair, direction, binned distance.

    Every template is conjoined with direction (L/R; an arc from the root
    is always R) and the distance bin, so features(h,m) != features(m,h).
    Tree features are the sum of edge features over all arcs.
    """

    def __init__(self, feature_lexicon: Lexicon, label_lexicon: Optional[Lexicon] = None):
        self.feature_lexicon = feature_lexicon
        # parsing has no label set; an empty frozen lexicon keeps the
        # model container uniform across tasks
        self.label_lexicon = label_lexicon if label_lexicon is not None else Lexicon().freeze()

    def _emit(self, pairs: List[Tuple[int, float]], name: str) -> None:
        lex = self.feature_lexicon
        if lex.frozen:
            idx = lex.get(name)
            if idx is None:
                return
        else:
            idx = lex.intern(name)
        pairs.append((idx, 1.0))

    def edge_features(self, x: Sentence, h: int, m: int) -> SparseFeatureVector:
        pairs: List[Tuple[int, float]] = []
        self._collect_edge(pairs, x, h, m)
        return SparseFeatureVector(pairs)

    def _collect_edge(self, pairs, x: Sentence, h: int, m: int) -> None:
        for name in edge_feature_names(x, h, m):
            self._emit(pairs, name)

    def features(self, x: Sentence, y: DependencyTree) -> SparseFeatureVector:
        if len(y) != len(x):
            raise ContractError(
                f"tree covers {len(y)} words, sentence has {len(x)}"
            )
        pairs: List[Tuple[int, float]] = []
        for m, h in enumerate(y.heads, start=1):
            self._collect_edge(pairs, x, h, m)
        return SparseFeatureVector(pairs)


def _find_cycle(best: Dict[int, int]) -> Optional[List[int]]:
    """First cycle in the best-incoming map, scanning nodes in order."""
    state: Dict[int, int] = {0: 2}  # 0 unvisited, 1 on path, 2 cleared
    for start in sorted(best):
        if state.get(start, 0) == 2:
            continue
        path = []
        node = start
        while state.get(node, 0) == 0:
            state[node] = 1
            path.append(node)
            node = best[node]
        if state[node] == 1:
            cycle = path[path.index(node):]
            return cycle
        for p in path:
            state[p] = 2
    return None


def _solve_arborescence(
    nodes: List[int], score: Dict[Tuple[int, int], float], next_id: int
) -> Set[Tuple[int, int]]:
    """Recursive cycle contraction; returns chosen arcs over this graph.

    All selections break ties toward the smaller node id; contracted
    supernodes get ids after every existing node, so originals win ties.
    """
    best: Dict[int, int] = {}
    for m in sorted(nodes):
        if m == 0:
            continue
        best_h, best_s = None, None
        for h in sorted(nodes):
            if h == m:
                continue
            s = score.get((h, m))
            if s is None:
                continue
            if best_s is None or s > best_s:
                best_h, best_s = h, s
        if best_h is None:
            raise ContractError(f"node {m} has no incoming arcs")
        best[m] = best_h
    cycle = _find_cycle(best)
    if cycle is None:
        return {(best[m], m) for m in best}

    in_cycle = set(cycle)
    cycle_weight = sum(score[(best[m], m)] for m in cycle)
    c = next_id
    new_nodes = [n for n in nodes if n not in in_cycle] + [c]
    new_score: Dict[Tuple[int, int], float] = {}
    enter_at: Dict[int, int] = {}  # external head -> cycle node whose arc it replaces
    leave_from: Dict[int, int] = {}  # external modifier -> cycle node serving as head
    for (h, m), s in score.items():
        h_in, m_in = h in in_cycle, m in in_cycle
        if h_in and m_in:
            continue
        if m_in:
            adjusted = cycle_weight + s - score[(best[m], m)]
            old = new_score.get((h, c))
            if old is None or adjusted > old or (adjusted == old and m < enter_at[h]):
                new_score[(h, c)] = adjusted
                enter_at[h] = m
        elif h_in:
            old = new_score.get((c, m))
            if old is None or s > old or (s == old and h < leave_from[m]):
                new_score[(c, m)] = s
                leave_from[m] = h
        else:
            new_score[(h, m)] = s

    chosen = _solve_arborescence(new_nodes, new_score, next_id + 1)
    result: Set[Tuple[int, int]] = set()
    for (h, m) in chosen:
        if m == c:
            broken = enter_at[h]
            result.add((h, broken))
            for node in cycle:
                if node != broken:
                    result.add((best[node], node))
        elif h == c:
            result.add((leave_from[m], m))
        else:
            result.add((h, m))
    return result


def chu_liu_edmonds(scores: np.ndarray) -> DependencyTree:
    """Maximum spanning arborescence of a complete (n+1)-node digraph.

    scores[h][m] is the score of arc h -> m; row/column 0 is the root, so
    column 0 and the diagonal are ignored.  Ties break toward the smaller
    head index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise ContractError("arc score matrix must be square")
    n = scores.shape[0] - 1
    if n < 1:
        raise ContractError("need at least one word to parse")
    if not np.all(np.isfinite(scores)):
        raise ContractError("arc scores must be finite")
    score: Dict[Tuple[int, int], float] = {}
    for m in range(1, n + 1):
        for h in range(0, n + 1):
            if h != m:
                score[(h, m)] = float(scores[h, m])
    arcs = _solve_arborescence(list(range(n + 1)), score, n + 1)
    heads = [0] * n
    for h, m in arcs:
        heads[m - 1] = h
    return DependencyTree(heads)


def attachment_loss(y: DependencyTree, y_gold: DependencyTree) -> int:
    """Number of words whose head differs from gold."""
    if len(y) != len(y_gold):
        raise ContractError(
            f"cannot compare trees over {len(y)} and {len(y_gold)} words"
        )
    return sum(1 for a, b in zip(y.heads, y_gold.heads) if a != b)


def uas(predicted: Seq[DependencyTree], gold: Seq[DependencyTree]) -> float:
    """Fraction of words with the correct head, over a whole corpus."""
    if len(predicted) != len(gold):
        raise ContractError(
            f"corpus size mismatch: {len(predicted)} predicted vs {len(gold)} gold"
        )
    total = correct = 0
    for y, g in zip(predicted, gold):
        if len(y) != len(g):
            raise ContractError("sentence length mismatch between corpora")
        total += len(g)
        correct += len(g) - attachment_loss(y, g)
    if total == 0:
        raise ContractError("empty corpus")
    return correct / total


class DependencySolver(InferenceSolver):
    """Arc-factored inference via Chu-Liu-Edmonds."""

    def __init__(self, fg: DependencyFeatureGenerator):
        self.fg = fg

    def arc_scores(self, w: WeightVector, x: Sentence) -> np.ndarray:
        n = len(x)
        scores = np.zeros((n + 1, n + 1), dtype=np.float64)
        flex = self.fg.feature_lexicon
        arr = w.array
        cap = arr.shape[0]
        for m in range(1, n + 1):
            for h in range(0, n + 1):
                if h == m:
                    continue
                # read-only scoring: look up, never intern
                total = 0.0
                for name in edge_feature_names(x, h, m):
                    idx = flex.get(name)
                    if idx is not None and idx < cap:
                        total += arr[idx]
                scores[h, m] = total
        return scores

    def best(self, w: WeightVector, x: Sentence) -> DependencyTree:
        return chu_liu_edmonds(self.arc_scores(w, x))

    def loss_augmented_best(
        self, w: WeightVector, x: Sentence, y_gold: DependencyTree
    ) -> Tuple[DependencyTree, float]:
        if len(y_gold) != len(x):
            raise ContractError("gold tree does not match sentence length")
        scores = self.arc_scores(w, x)
        n = len(x)
        # attachment loss decomposes per arc: +1 for every wrong head
        scores[:, 1:] += 1.0
        gold = np.asarray(y_gold.heads)
        scores[gold, np.arange(1, n + 1)] -= 1.0
        y_hat = chu_liu_edmonds(scores)
        return y_hat, float(attachment_loss(y_hat, y_gold))

    def loss(self, y: DependencyTree, y_gold: DependencyTree) -> float:
        return float(attachment_loss(y, y_gold))


def read_conll_deps(path, allow_empty: bool = False) -> Dataset:
    """Parse CoNLL-style rows: columns 1 id, 2 form, 5 pos, 7 head.

    Blank lines end a sentence; '#' comment lines are skipped.  Heads are
    validated against the sentence length once the sentence is complete.
    """
    examples = []
    rows: List[Tuple[int, str, Optional[str], int]] = []  # (line, form, pos, head)

    def flush():
        if not rows:
            return
        n = len(rows)
        words, tags, heads = [], [], []
        for lineno, form, pos, head in rows:
            if not 0 <= head <= n:
                raise DataFormatError(
                    f"head index {head} out of range for a {n}-token sentence",
                    path=path,
                    line=lineno,
                )
            words.append(form)
            tags.append(pos)
            heads.append(head)
        pos_tags = None if all(t is None for t in tags) else [t or "_" for t in tags]
        try:
            tree = DependencyTree(heads)
        except ContractError as exc:
            raise DataFormatError(
                f"gold annotation is not a tree: {exc}", path=path, line=rows[0][0]
            ) from exc
        examples.append((Sentence(words, pos_tags), tree))
        rows.clear()

    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                flush()
                continue
            if line.lstrip().startswith("#"):
                continue
            cols = line.split("\t") if "\t" in line else line.split()
            if len(cols) < 7:
                raise DataFormatError(
                    f"expected at least 7 columns, got {len(cols)}",
                    path=path,
                    line=lineno,
                )
            wid, form, pos, head_s = cols[0], cols[1], cols[4], cols[6]
            if not wid.isdigit() or int(wid) != len(rows) + 1:
                raise DataFormatError(
                    f"token id {wid!r} out of sequence", path=path, line=lineno
                )
            try:
                head = int(head_s)
            except ValueError:
                raise DataFormatError(
                    f"non-integer head {head_s!r}", path=path, line=lineno
                ) from None
            rows.append((lineno, form, None if pos == "_" else pos, head))
        flush()
    if not examples and not allow_empty:
        raise DataFormatError("no sentences found (empty dataset)", path=path)
    return Dataset("deptree", examples)


def write_conll_predictions(path, sentences, trees) -> None:
    """Write sentences back out with the predicted head in column 7."""
    with open(path, "w", encoding="utf-8") as fh:
        for x, y in zip(sentences, trees):
            for m in range(1, len(x) + 1):
                pos = x.pos[m - 1] if x.pos is not None else "_"
                cols = [str(m), x.words[m - 1], "_", "_", pos, "_",
                        str(y.heads[m - 1]), "_", "_", "_"]
                fh.write("\t".join(cols) + "\n")
            fh.write("\n")

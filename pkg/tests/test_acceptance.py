"""End-to-end acceptance gate.

Each test covers one release criterion and prints a single PASS/FAIL line
(visible with -s or on failure) so the whole gate can be read at a glance:

  1. exact argmax-vs-enumeration equivalence for all three inference engines
  2. DCD optimizer invariants plus agreement with an independent QP oracle
  3. parallel and sequential SVM training reach the same objective
  4. averaged perceptron equals the naive averaging oracle; separable data fits
  5. held-out tagging quality for both trainer families
  6. parser output validity and held-out attachment accuracy
  7. benchmark harness curves: monotone clocks and parallel time-to-quality
  8. model round-trip fidelity and corruption handling
"""

import itertools
import time

import numpy as np
import pytest

from structlearn import synth
from structlearn.cli import EXIT_DATA, EXIT_MODEL_MISMATCH, main
from structlearn.core import (
    Dataset,
    Lexicon,
    ModelArtifact,
    ModelFormatError,
    SparseFeatureVector,
    WeightVector,
    difference,
    dot,
    load_model,
    save_model,
)
from structlearn.deptree import (
    DependencyFeatureGenerator,
    DependencySolver,
    DependencyTree,
    Sentence,
    chu_liu_edmonds,
    uas,
)
from structlearn.learners import (
    DualState,
    LearnerConfig,
    dcd_step,
    dual_objective,
    primal_objective,
    train_dcd,
    train_demidcd,
    train_perceptron,
    _try_admit,
)
from structlearn.multiclass import (
    MulticlassFeatureGenerator,
    MulticlassInstance,
    MulticlassSolver,
)
from structlearn.seqtag import (
    SequenceFeatureGenerator,
    SequenceSolver,
    TagSequence,
    TokenSequence,
    viterbi_decode,
)


def verdict(name, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}"
    if detail:
        line += f"  ({detail})"
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# helpers shared across criteria


def tagging_dataset(corpus):
    flex, llex = Lexicon(), Lexicon()
    for _, tags in corpus:
        for t in tags:
            llex.intern(t)
    llex.freeze()
    fg = SequenceFeatureGenerator(flex, llex)
    solver = SequenceSolver(fg)
    examples = [
        (TokenSequence(tuple(toks)), TagSequence(tuple(llex.get(t) for t in tags)))
        for toks, tags in corpus
    ]
    return Dataset("sequence", examples), fg, solver, llex


def parsing_dataset(corpus, fg=None):
    if fg is None:
        fg = DependencyFeatureGenerator(Lexicon())
    solver = DependencySolver(fg)
    examples = [
        (Sentence(words, pos), DependencyTree(heads)) for words, pos, heads in corpus
    ]
    return Dataset("deptree", examples), fg, solver


def multiclass_dataset(rows, n_labels, n_raw):
    labels = Lexicon.from_names([f"c{k}" for k in range(n_labels)])
    raw = Lexicon.from_names([f"x{j}" for j in range(n_raw)])
    fg = MulticlassFeatureGenerator(labels, raw)
    solver = MulticlassSolver(fg)
    examples = [
        (MulticlassInstance(SparseFeatureVector(pairs)), gold) for pairs, gold in rows
    ]
    return Dataset("multiclass", examples), fg, solver


def token_accuracy(solver, model, examples):
    right = total = 0
    for x, y in examples:
        pred = solver.best(model.weights, x)
        right += sum(1 for a, b in zip(pred.tags, y.tags) if a == b)
        total += len(y.tags)
    return right / total


# ---------------------------------------------------------------------------
# 1. inference equals brute-force enumeration


def test_criterion_1_inference_matches_enumeration():
    t0 = time.perf_counter()
    rng = np.random.default_rng(100)

    def seq_path_score(emission, transition, start, path):
        s = start[path[0]] + emission[0, path[0]]
        for t in range(1, len(path)):
            s += transition[path[t - 1], path[t]] + emission[t, path[t]]
        return s

    for _ in range(500):
        L, T = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        emission = rng.normal(size=(L, T))
        transition = rng.normal(size=(T, T))
        start = rng.normal(size=T)
        got = viterbi_decode(emission, transition, start)
        best = max(
            seq_path_score(emission, transition, start, p)
            for p in itertools.product(range(T), repeat=L)
        )
        assert seq_path_score(emission, transition, start, got) == best

    def all_trees(n):
        for heads in itertools.product(range(n + 1), repeat=n):
            if any(h == m for m, h in enumerate(heads, start=1)):
                continue
            ok = True
            for m in range(1, n + 1):
                node, hops = m, 0
                while node != 0 and hops <= n:
                    node = heads[node - 1]
                    hops += 1
                if node != 0:
                    ok = False
                    break
            if ok:
                yield heads

    def tree_score(scores, heads):
        return sum(scores[h, m] for m, h in enumerate(heads, start=1))

    for _ in range(500):
        n = int(rng.integers(1, 5))
        scores = rng.normal(size=(n + 1, n + 1))
        tree = chu_liu_edmonds(scores)
        best = max(tree_score(scores, heads) for heads in all_trees(n))
        assert tree_score(scores, tree.heads) == best

    for _ in range(500):
        K, B = int(rng.integers(2, 11)), int(rng.integers(1, 6))
        _, fg, solver = multiclass_dataset([], n_labels=K, n_raw=B)
        w = WeightVector.from_array(rng.normal(size=K * B))
        pairs = [(int(j), float(rng.normal())) for j in range(B)]
        x = MulticlassInstance(SparseFeatureVector(pairs))
        got = solver.best(w, x)
        scores = [dot(w, fg.features(x, y)) for y in range(K)]
        assert scores[got] == max(scores)

    elapsed = time.perf_counter() - t0
    verdict(
        "criterion 1: 500-trial argmax equivalence per task",
        elapsed < 30.0,
        f"all scores matched exactly, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 2. DCD optimizer invariants and QP oracle agreement


def test_criterion_2_dcd_invariants_and_qp_oracle():
    rng = np.random.default_rng(200)
    steps_checked = 0
    for _ in range(20):
        n_labels, n_raw = 3, 4
        rows = []
        for _ in range(int(rng.integers(3, 8))):
            k = int(rng.integers(1, n_raw + 1))
            idx = sorted(rng.choice(n_raw, size=k, replace=False))
            rows.append(
                ([(int(j), float(rng.normal())) for j in idx], int(rng.integers(0, n_labels)))
            )
        data, fg, solver = multiclass_dataset(rows, n_labels, n_raw)
        n = len(data)
        C, tol = 0.5, 1e-6
        w = WeightVector()
        state = DualState(n)
        gold = [fg.features(x, y) for x, y in data.examples]
        prev_dual = 0.0
        for _ in range(6):
            for i in range(n):
                x, y_gold = data.examples[i]
                y_hat, loss = solver.loss_augmented_best(w, x, y_gold)
                _try_admit(state, i, y_hat, loss, gold, fg, x, w, C, tol)
            for sweep in range(4):
                for i in range(n):
                    for k in range(len(state.working_sets[i])):
                        dcd_step(state, i, k, w, C)
                        steps_checked += 1
                        d = dual_objective(state, w, C)
                        assert d >= prev_dual - 1e-9, "dual decreased"
                        prev_dual = d
                        assert all(
                            e.alpha >= 0.0
                            for ws in state.working_sets
                            for e in ws
                        )
            # weak duality at the round boundary
            assert dual_objective(state, w, C) <= primal_objective(
                w, data, fg, solver, C
            ) + 1e-7

    # symmetric sanity point first: two one-feature examples demanding
    # opposite labels have w* = 0 by symmetry, both slacks 1, primal 2C
    for C in (0.25, 1.0, 4.0):
        data, fg, solver = multiclass_dataset(
            [([(0, 1.0)], 0), ([(0, 1.0)], 1)], n_labels=2, n_raw=1
        )
        _, rep = train_dcd(data, fg, solver, LearnerConfig(C=C, tolerance=1e-10, epochs=60))
        assert abs(rep.rows[-1].primal - 2.0 * C) <= 1e-6

    # independent QP oracle on the canonical 2-example problem: stationarity
    # of the dual gives (G + I/(2C)) a = loss, solved by linear algebra
    rows = [([(0, 1.0), (1, 0.5)], 0), ([(0, 0.3), (1, 2.0)], 1)]
    data, fg, solver = multiclass_dataset(rows, n_labels=2, n_raw=2)
    C = 0.8
    (x1, g1), (x2, g2) = data.examples

    def phi(x, y):
        return fg.features(x, y).to_dense(4)

    d1 = phi(x1, g1) - phi(x1, 1 - g1)
    d2 = phi(x2, g2) - phi(x2, 1 - g2)
    G = np.array([[d1 @ d1, d1 @ d2], [d2 @ d1, d2 @ d2]])
    alpha = np.linalg.solve(G + np.eye(2) / (2 * C), np.ones(2))
    assert np.all(alpha >= 0)
    w_star = alpha[0] * d1 + alpha[1] * d2
    xi = np.maximum([1.0 - w_star @ d1, 1.0 - w_star @ d2], 0.0)
    primal_star = 0.5 * float(w_star @ w_star) + C * float(np.sum(xi**2))

    _, report = train_dcd(data, fg, solver, LearnerConfig(C=C, tolerance=1e-10, epochs=80))
    gap = abs(report.rows[-1].primal - primal_star)
    verdict(
        "criterion 2: DCD invariants + QP oracle",
        gap <= 1e-4,
        f"{steps_checked} steps dual-monotone, |primal - oracle| = {gap:.2e}",
    )


# ---------------------------------------------------------------------------
# 3. parallel/sequential objective agreement


def test_criterion_3_demidcd_matches_dcd():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(300 + seed)
        rows = []
        for _ in range(16):
            idx = sorted(rng.choice(5, size=int(rng.integers(1, 6)), replace=False))
            rows.append(
                ([(int(j), float(rng.normal())) for j in idx], int(rng.integers(0, 3)))
            )
        data, fg, solver = multiclass_dataset(rows, n_labels=3, n_raw=5)
        for threads in (2, 4):
            cfg = LearnerConfig(C=0.5, tolerance=1e-5, epochs=40, threads=threads, seed=seed)
            _, seq = train_dcd(data, fg, solver, cfg)
            _, par = train_demidcd(data, fg, solver, cfg)
            rel = abs(par.rows[-1].primal - seq.rows[-1].primal) / max(
                1.0, abs(seq.rows[-1].primal)
            )
            worst = max(worst, rel)
    elapsed = time.perf_counter() - t0
    verdict(
        "criterion 3: parallel vs sequential final primal",
        worst < 0.01 and elapsed < 120.0,
        f"worst relative gap {worst:.4%} over 5 seeds x threads {{2,4}}, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 4. averaged perceptron: oracle equality and separable convergence


def test_criterion_4_averaged_perceptron():
    # (a) bitwise agreement with the naive average-of-iterates oracle
    rng = np.random.default_rng(400)
    rows = []
    for _ in range(10):
        idx = sorted(rng.choice(4, size=int(rng.integers(1, 4)), replace=False))
        rows.append(([(int(j), 1.0) for j in idx], int(rng.integers(0, 3))))
    data, fg, solver = multiclass_dataset(rows, n_labels=3, n_raw=4)
    cfg = LearnerConfig(eta=1.0, epochs=3, seed=7)
    model, _ = train_perceptron(data, fg, solver, cfg)

    dim = len(fg.feature_lexicon)
    w = WeightVector()
    w.resize(dim)
    mirror_rng = np.random.default_rng(cfg.seed)
    snapshots = []
    for _ in range(cfg.epochs):
        for i in mirror_rng.permutation(len(data)):
            x, y_gold = data.examples[int(i)]
            y_hat = solver.best(w, x)
            if y_hat != y_gold:
                d = difference(fg.features(x, y_gold), fg.features(x, y_hat))
                for j, v in zip(d.indices, d.values):
                    w.array[j] += cfg.eta * v
            snapshots.append(w.snapshot()[:dim].copy())
    oracle = np.sum(snapshots, axis=0) / len(snapshots)
    bitwise = model.weights.snapshot().tobytes() == oracle.tobytes()

    # (b) linearly separable tagging corpus fits perfectly within 20 epochs
    corpus = synth.tagging_corpus(
        500, seed=3, ambiguous_fraction=0.0, transition_scale=0.4
    )
    sep_data, sep_fg, sep_solver, _ = tagging_dataset(corpus)
    _, report = train_perceptron(
        sep_data, sep_fg, sep_solver, LearnerConfig(epochs=20, seed=0)
    )
    first_perfect = next(
        (r.epoch for r in report.rows if r.train_accuracy == 1.0), None
    )
    verdict(
        "criterion 4: averaged perceptron",
        bitwise and first_perfect is not None,
        f"bitwise={bitwise}, separable corpus perfect at epoch {first_perfect}",
    )


# ---------------------------------------------------------------------------
# 5. held-out tagging quality


def test_criterion_5_tagging_quality():
    corpus = synth.tagging_corpus(770, seed=21)
    n_train_tokens = sum(len(toks) for toks, _ in corpus[:620])
    assert n_train_tokens >= 5000

    def held_out_accuracy(trainer, cfg):
        # fresh lexicons per run so neither trainer inherits the other's
        # interned feature space
        data, fg, solver, _ = tagging_dataset(corpus)
        train_data = Dataset("sequence", data.examples[:620])
        model, _ = trainer(train_data, fg, solver, cfg)
        return token_accuracy(solver, model, data.examples[620:])

    perc_acc = held_out_accuracy(train_perceptron, LearnerConfig(epochs=15, seed=0))
    dcd_acc = held_out_accuracy(
        train_dcd, LearnerConfig(C=1.0, tolerance=0.01, epochs=40, seed=0)
    )

    verdict(
        "criterion 5: tagging quality",
        dcd_acc >= perc_acc - 0.01 and perc_acc >= 0.90 and dcd_acc >= 0.90,
        f"{n_train_tokens} train tokens, perceptron {perc_acc:.4f}, svm {dcd_acc:.4f}",
    )


# ---------------------------------------------------------------------------
# 6. parser validity and attachment accuracy


def test_criterion_6_parsing_validity_and_uas():
    rng = np.random.default_rng(600)
    for _ in range(1000):
        n = int(rng.integers(1, 13))
        tree = chu_liu_edmonds(rng.normal(size=(n + 1, n + 1)))
        # constructor enforces single-head/acyclic; re-verify root reachability
        for m in range(1, n + 1):
            node, hops = m, 0
            while node != 0:
                node = tree.heads[node - 1]
                hops += 1
                assert hops <= n

    corpus = synth.parsing_corpus(4200, seed=7)
    train, test = corpus[:4000], corpus[4000:]
    data, fg, solver = parsing_dataset(train)
    model, _ = train_perceptron(data, fg, solver, LearnerConfig(epochs=10, seed=0))
    test_data, _, _ = parsing_dataset(test, fg=fg)
    preds = [solver.best(model.weights, x) for x, _ in test_data.examples]
    golds = [y for _, y in test_data.examples]
    score = uas(preds, golds)
    verdict(
        "criterion 6: parsing validity + UAS",
        score >= 0.95,
        f"1000 random decodes valid, held-out UAS {score:.4f}",
    )


# ---------------------------------------------------------------------------
# 7. benchmark harness curves


def load_curve(path):
    rows = [
        line.split(",")
        for line in path.read_text(encoding="utf-8").splitlines()
        if line and not line.startswith("#") and line[0].isdigit()
    ]
    return [(float(s), float(m)) for s, m in rows]


def test_criterion_7_benchmark_speedup(tmp_path):
    corpus = synth.tagging_corpus(770, seed=21)
    train_p, test_p = tmp_path / "train.tsv", tmp_path / "test.tsv"
    synth.write_tagging_file(train_p, corpus[:620])
    synth.write_tagging_file(test_p, corpus[620:])
    assert sum(len(t) for t, _ in corpus[:620]) >= 5000

    # both trainers get the same config and run to their natural stopping
    # point; the parallel curve must reach the sequential curve's final
    # quality without exceeding the sequential wall-clock
    common = [
        "--train", str(train_p),
        "--test", str(test_p),
        "--task", "sequence",
        "--C", "1.0",
        "--tolerance", "0.01",
        "--seed", "0",
    ]
    dcd_csv = tmp_path / "dcd.csv"
    assert main(["benchmark", "--algo", "dcd", "--epochs", "60",
                 "--report", str(dcd_csv), *common]) == 0
    demi_csv = tmp_path / "demi.csv"
    assert main(["benchmark", "--algo", "demidcd", "--threads", "4", "--epochs", "60",
                 "--report", str(demi_csv), *common]) == 0

    dcd_curve, demi_curve = load_curve(dcd_csv), load_curve(demi_csv)
    for curve in (dcd_curve, demi_curve):
        seconds = [s for s, _ in curve]
        assert seconds == sorted(seconds), "benchmark clock went backwards"

    wall, final_metric = dcd_curve[-1]
    reach = next((s for s, m in demi_curve if m >= final_metric), None)
    verdict(
        "criterion 7: benchmark harness",
        reach is not None and reach <= wall,
        f"sequential {final_metric:.4f} @ {wall:.2f}s, parallel reached it @ "
        + (f"{reach:.2f}s" if reach is not None else "never"),
    )


# ---------------------------------------------------------------------------
# 8. serialization fidelity and corruption handling


def test_criterion_8_serialization(tmp_path):
    rng = np.random.default_rng(800)
    for trial in range(100):
        n_feats = int(rng.integers(1, 60))
        task = ("sequence", "deptree", "multiclass")[int(rng.integers(3))]
        art = ModelArtifact(
            weights=WeightVector.from_array(rng.normal(size=n_feats)).freeze(),
            task=task,
            feature_lexicon=Lexicon.from_names(
                [f"f{j}" for j in range(n_feats)], frozen=True
            ),
            label_lexicon=Lexicon.from_names(
                [f"L{j}" for j in range(int(rng.integers(1, 7)))], frozen=True
            ),
            trainer_meta={"algorithm": "dcd", "seed": str(trial)},
        )
        p = tmp_path / f"rt{trial}.model"
        save_model(art, p)
        back = load_model(p)
        assert back == art
        assert back.weights.snapshot().tobytes() == art.weights.snapshot().tobytes()

    good = tmp_path / "rt0.model"
    raw = good.read_bytes()

    bad_magic = tmp_path / "bad_magic.model"
    bad_magic.write_bytes(b"NOTMODEL" + raw[8:])
    with pytest.raises(ModelFormatError):
        load_model(bad_magic)

    truncated = tmp_path / "trunc.model"
    truncated.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(ModelFormatError):
        load_model(truncated)

    trailing = tmp_path / "trailing.model"
    trailing.write_bytes(raw + b"junk")
    with pytest.raises(ModelFormatError):
        load_model(trailing)

    # exit codes through the CLI: corrupt model -> data error; model trained
    # for one task applied to another -> dedicated mismatch code
    test_tsv = tmp_path / "t.tsv"
    synth.write_tagging_file(test_tsv, synth.tagging_corpus(5, seed=1))
    code_corrupt = main(
        [
            "predict",
            "--task", "sequence",
            "--model", str(truncated),
            "--test", str(test_tsv),
            "--output", str(tmp_path / "p.tsv"),
        ]
    )

    seq_corpus = synth.tagging_corpus(30, seed=2)
    train_tsv = tmp_path / "train.tsv"
    synth.write_tagging_file(train_tsv, seq_corpus)
    seq_model = tmp_path / "seq.model"
    assert main(
        [
            "train",
            "--task", "sequence",
            "--algo", "perceptron",
            "--train", str(train_tsv),
            "--model", str(seq_model),
            "--epochs", "2",
        ]
    ) == 0
    dep_test = tmp_path / "d.conll"
    synth.write_conll_file(dep_test, synth.parsing_corpus(5, seed=3))
    code_mismatch = main(
        [
            "predict",
            "--task", "deptree",
            "--model", str(seq_model),
            "--test", str(dep_test),
            "--output", str(tmp_path / "p.conll"),
        ]
    )
    verdict(
        "criterion 8: serialization",
        code_corrupt == EXIT_DATA and code_mismatch == EXIT_MODEL_MISMATCH,
        f"100 round-trips bit-exact, corrupt exit={code_corrupt}, mismatch exit={code_mismatch}",
    )

"""Cost-sensitive multiclass: conjoined features, argmax, svmlight IO."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from structlearn.core import ContractError, DataFormatError, Lexicon, SparseFeatureVector, WeightVector, dot
from structlearn.multiclass import (
    BIAS_NAME,
    CostMatrix,
    MulticlassFeatureGenerator,
    MulticlassInstance,
    MulticlassSolver,
    build_conjoined_lexicon,
    raw_lexicon_from_model,
    read_cost_matrix,
    read_svmlight_multiclass,
    write_multiclass_predictions,
)


def make_fg(n_labels=3, n_raw=4):
    labels = Lexicon.from_names([f"c{k}" for k in range(n_labels)])
    raw = Lexicon.from_names([f"x{j}" for j in range(n_raw)])
    return MulticlassFeatureGenerator(labels, raw)


# ---------------------------------------------------------------------------
# Cost matrices


def test_cost_matrix_validation():
    with pytest.raises(ContractError):
        CostMatrix([[0.0, 1.0]])  # not square
    with pytest.raises(ContractError):
        CostMatrix([[0.0, -1.0], [1.0, 0.0]])  # negative cost
    with pytest.raises(ContractError):
        CostMatrix([[0.5, 1.0], [1.0, 0.0]])  # non-zero diagonal
    with pytest.raises(ContractError):
        CostMatrix([[0.0, np.inf], [1.0, 0.0]])


def test_zero_one_cost_matrix():
    cm = CostMatrix.zero_one(3)
    assert cm.cost(0, 0) == 0.0
    assert cm.cost(0, 2) == 1.0
    assert list(cm.row(1)) == [1.0, 0.0, 1.0]


# ---------------------------------------------------------------------------
# Conjoined feature space


def test_conjoined_lexicon_is_label_major():
    labels = Lexicon.from_names(["neg", "pos"])
    raw = Lexicon.from_names(["a", "b"])
    conj = build_conjoined_lexicon(labels, raw)
    assert conj.names() == ("neg|a", "neg|b", "pos|a", "pos|b")
    assert conj.frozen


def test_raw_lexicon_recovered_from_conjoined():
    labels = Lexicon.from_names(["neg", "pos"], frozen=True)
    conj = build_conjoined_lexicon(labels, Lexicon.from_names(["a", "b", BIAS_NAME]))
    raw = raw_lexicon_from_model(conj, labels)
    assert raw.names() == ("a", "b", BIAS_NAME)
    assert raw.frozen


def test_raw_lexicon_rejects_indivisible_size():
    labels = Lexicon.from_names(["x", "y"], frozen=True)
    conj = Lexicon.from_names(["x|a", "x|b", "y|a"], frozen=True)
    with pytest.raises(ContractError):
        raw_lexicon_from_model(conj, labels)


@settings(max_examples=100, deadline=None)
@given(
    st.integers(0, 2),
    st.lists(st.tuples(st.integers(0, 3), st.floats(-2, 2, allow_nan=False)), max_size=6),
)
def test_features_offset_raw_indices_by_class_block(y, pairs):
    fg = make_fg(n_labels=3, n_raw=4)
    raw_vec = SparseFeatureVector(pairs)
    out = fg.features(MulticlassInstance(raw_vec), y)
    assert list(out.indices) == [i + y * fg.block_size for i in raw_vec.indices]
    assert list(out.values) == list(raw_vec.values)


def test_features_rejects_label_out_of_range():
    fg = make_fg()
    with pytest.raises(ContractError):
        fg.features(MulticlassInstance(SparseFeatureVector([(0, 1.0)])), 3)


def test_features_drops_raw_indices_beyond_block():
    fg = make_fg(n_labels=2, n_raw=3)
    v = SparseFeatureVector([(0, 1.0), (7, 2.0)])
    out = fg.features(MulticlassInstance(v), 1)
    assert list(out.indices) == [3]


# ---------------------------------------------------------------------------
# Solver


def test_best_matches_blockwise_numpy_argmax():
    rng = np.random.default_rng(0)
    fg = make_fg(n_labels=4, n_raw=5)
    solver = MulticlassSolver(fg)
    for _ in range(100):
        w_arr = rng.normal(size=4 * 5)
        w = WeightVector.from_array(w_arr)
        k = int(rng.integers(1, 5))
        idx = sorted(rng.choice(5, size=k, replace=False))
        v = SparseFeatureVector([(int(i), float(rng.normal())) for i in idx])
        x = MulticlassInstance(v)
        scores = np.array([float(np.dot(w_arr[y * 5 : (y + 1) * 5], v.to_dense(5))) for y in range(4)])
        assert solver.best(w, x) == int(np.argmax(scores))


def test_loss_augmented_best_adds_cost_row():
    rng = np.random.default_rng(1)
    costs = CostMatrix([[0.0, 2.0, 0.5], [1.0, 0.0, 1.0], [4.0, 0.25, 0.0]])
    fg = make_fg(n_labels=3, n_raw=4)
    solver = MulticlassSolver(fg, costs)
    for _ in range(100):
        w = WeightVector.from_array(rng.normal(size=12))
        v = SparseFeatureVector([(int(j), float(rng.normal())) for j in range(4)])
        x = MulticlassInstance(v)
        gold = int(rng.integers(0, 3))
        y_hat, loss = solver.loss_augmented_best(w, x, gold)
        best = max(
            dot(w, fg.features(x, y)) + costs.cost(gold, y) for y in range(3)
        )
        got = dot(w, fg.features(x, y_hat)) + costs.cost(gold, y_hat)
        assert got == pytest.approx(best, abs=1e-12)
        assert loss == costs.cost(gold, y_hat)


def test_default_loss_is_zero_one():
    fg = make_fg(n_labels=3)
    solver = MulticlassSolver(fg)
    assert solver.loss(1, 1) == 0.0
    assert solver.loss(0, 1) == 1.0


# ---------------------------------------------------------------------------
# svmlight IO


def test_svmlight_reader_parses_labels_features_and_bias(tmp_path):
    p = tmp_path / "d.svm"
    p.write_text("spam 1:2.0 4:1.5\nham 2:1.0\n", encoding="utf-8")
    labels, raw = Lexicon(), Lexicon()
    data, costs = read_svmlight_multiclass(p, labels, raw)
    assert costs is None
    assert labels.names() == ("spam", "ham")
    assert raw.get(BIAS_NAME) == len(raw) - 1  # bias slot interned last
    x0, y0 = data.examples[0]
    assert y0 == 0
    bias_idx = raw.get(BIAS_NAME)
    assert bias_idx in list(x0.raw.indices)


def test_svmlight_reader_without_bias_rejects_empty_rows(tmp_path):
    p = tmp_path / "d.svm"
    p.write_text("a\n", encoding="utf-8")
    with pytest.raises(DataFormatError):
        read_svmlight_multiclass(p, Lexicon(), Lexicon(), bias=False)
    data, _ = read_svmlight_multiclass(p, Lexicon(), Lexicon(), bias=True)
    assert len(data) == 1


def test_svmlight_reader_requires_increasing_indices(tmp_path):
    p = tmp_path / "d.svm"
    p.write_text("a 3:1.0 2:1.0\n", encoding="utf-8")
    with pytest.raises(DataFormatError):
        read_svmlight_multiclass(p, Lexicon(), Lexicon())


def test_svmlight_reader_rejects_bad_feature_syntax(tmp_path):
    p = tmp_path / "d.svm"
    p.write_text("a 1=2.0\n", encoding="utf-8")
    with pytest.raises(DataFormatError):
        read_svmlight_multiclass(p, Lexicon(), Lexicon())
    p.write_text("a 1:notanumber\n", encoding="utf-8")
    with pytest.raises(DataFormatError):
        read_svmlight_multiclass(p, Lexicon(), Lexicon())


def test_svmlight_reader_picks_up_cost_sidecar(tmp_path):
    p = tmp_path / "d.svm"
    p.write_text("a 1:1.0\nb 1:2.0\n", encoding="utf-8")
    (tmp_path / "d.svm.cost").write_text("0 3\n1 0\n", encoding="utf-8")
    _, costs = read_svmlight_multiclass(p, Lexicon(), Lexicon())
    assert costs is not None
    assert costs.cost(0, 1) == 3.0


def test_cost_matrix_reader_validates_shape_and_diagonal(tmp_path):
    p = tmp_path / "c.cost"
    p.write_text("0 1\n1 0\n", encoding="utf-8")
    assert read_cost_matrix(p, 2).cost(1, 0) == 1.0
    p.write_text("0 1\n", encoding="utf-8")
    with pytest.raises(DataFormatError):
        read_cost_matrix(p, 2)
    p.write_text("0 x\n1 0\n", encoding="utf-8")
    with pytest.raises(DataFormatError):
        read_cost_matrix(p, 2)
    p.write_text("9 1\n1 0\n", encoding="utf-8")
    with pytest.raises(DataFormatError):
        read_cost_matrix(p, 2)


def test_prediction_writer_emits_label_names(tmp_path):
    labels = Lexicon.from_names(["neg", "pos"], frozen=True)
    out = tmp_path / "pred.txt"
    write_multiclass_predictions(out, [1, 0, 1], labels)
    assert out.read_text(encoding="utf-8").splitlines() == ["pos", "neg", "pos"]

import numpy as np
import pytest

from thermocrack import metrics
from thermocrack.dataset import CrackLevel
from thermocrack.errors import DomainError
from thermocrack.metrics import ConfusionMatrix, compute_metrics, render_report

from oracles import metrics_naive

WORKED_MATRIX = np.array([[8, 2, 0], [1, 9, 0], [0, 0, 10]])


# ---------------------------------------------------------------------------
# accumulation


def test_accumulate_single_cell():
    cm = ConfusionMatrix()
    cm.accumulate(CrackLevel.LEVEL_1, CrackLevel.LEVEL_1)
    assert cm.counts[0, 0] == 1
    assert cm.total == 1


def test_accumulate_total_and_row_sums():
    rng = np.random.default_rng(0)
    stream = [(int(rng.integers(1, 4)), int(rng.integers(1, 4))) for _ in range(57)]
    cm = ConfusionMatrix()
    for actual, pred in stream:
        cm.accumulate(actual, pred)
    assert cm.total == 57
    for level in (1, 2, 3):
        assert cm.counts[level - 1].sum() == sum(1 for a, _ in stream if a == level)


def test_merge_is_cellwise_sum():
    a = ConfusionMatrix(WORKED_MATRIX)
    b = ConfusionMatrix(WORKED_MATRIX * 2)
    assert np.array_equal(a.merge(b).counts, WORKED_MATRIX * 3)
    assert np.array_equal(a.merge(b).counts, b.merge(a).counts)


# ---------------------------------------------------------------------------
# metrics


def test_perfect_diagonal():
    rep = compute_metrics(ConfusionMatrix(np.diag([90, 90, 90])))
    assert rep.accuracy == 1.0
    for c in rep.per_class:
        assert c.precision == 1.0 and c.recall == 1.0 and c.f1 == 1.0


def test_worked_matrix():
    rep = compute_metrics(ConfusionMatrix(WORKED_MATRIX))
    assert rep.accuracy == pytest.approx(0.9)
    c0 = rep.per_class[0]
    assert c0.precision == pytest.approx(8 / 9)
    assert c0.recall == pytest.approx(0.8)
    assert c0.f1 == pytest.approx(0.8421, abs=1e-4)


def test_label_permutation_symmetry():
    perm = [2, 0, 1]
    permuted = WORKED_MATRIX[perm][:, perm]
    a = compute_metrics(ConfusionMatrix(WORKED_MATRIX))
    b = compute_metrics(ConfusionMatrix(permuted))
    assert b.accuracy == a.accuracy
    for k in range(3):
        assert b.per_class[k].f1 == a.per_class[perm[k]].f1
        assert b.per_class[k].precision == a.per_class[perm[k]].precision


def test_matches_bruteforce_oracle_random():
    rng = np.random.default_rng(123)
    for _ in range(200):
        counts = rng.integers(0, 40, size=(3, 3))
        if counts.sum() == 0:
            counts[0, 0] = 1
        rep = compute_metrics(ConfusionMatrix(counts))
        want = metrics_naive(counts)
        assert rep.accuracy == pytest.approx(float(want["accuracy"]), abs=1e-12)
        for k in range(3):
            got, ref = rep.per_class[k], want["per_class"][k]
            assert (got.tp, got.fp, got.fn, got.tn) == (ref["tp"], ref["fp"], ref["fn"], ref["tn"])
            assert got.tp + got.fp + got.fn + got.tn == int(counts.sum())
            for name in ("accuracy", "precision", "recall", "f1"):
                assert getattr(got, name) == pytest.approx(float(ref[name]), abs=1e-12)


def test_scaling_invariance():
    a = compute_metrics(ConfusionMatrix(WORKED_MATRIX))
    b = compute_metrics(ConfusionMatrix(WORKED_MATRIX * 7))
    assert b.accuracy == pytest.approx(a.accuracy, abs=1e-12)
    for ca, cb in zip(a.per_class, b.per_class):
        assert cb.precision == pytest.approx(ca.precision, abs=1e-12)
        assert cb.recall == pytest.approx(ca.recall, abs=1e-12)
        assert cb.f1 == pytest.approx(ca.f1, abs=1e-12)


def test_zero_over_zero_flagged():
    counts = np.zeros((3, 3), int)
    counts[0, 0] = 10  # classes 2 and 3 never occur
    rep = compute_metrics(ConfusionMatrix(counts))
    assert rep.per_class[1].precision == 0.0
    assert rep.per_class[1].undefined
    assert not rep.per_class[0].undefined


def test_empty_matrix_rejected():
    with pytest.raises(DomainError):
        compute_metrics(ConfusionMatrix())


def test_paper_formula_variants():
    rep = compute_metrics(ConfusionMatrix(WORKED_MATRIX), paper_formulas=True)
    c0 = rep.per_class[0]
    # printed accuracy variant: (TP + FN) / total
    assert c0.accuracy == pytest.approx((8 + 2) / 30)
    # printed F-score variant lacks the factor 2
    p, r = 8 / 9, 0.8
    assert c0.f1 == pytest.approx(p * r / (p + r))


# ---------------------------------------------------------------------------
# rendering


def test_render_percent_formatting():
    counts = np.diag([61, 61, 61])
    counts[0, 1] = 6  # accuracy 183/189 = 0.968253...
    rep = compute_metrics(ConfusionMatrix(counts))
    text = render_report({"msx_like": rep})
    assert "96.83%" in text
    assert text.count("\n") >= 6


def test_render_single_source_one_data_row():
    rep = compute_metrics(ConfusionMatrix(WORKED_MATRIX))
    text = render_report({"fusion": rep})
    table = text.split("\nConfusion")[0].strip().split("\n")
    assert len(table) == 3  # header, rule, one data row
    assert table[2].startswith("fusion")


def test_render_cell_percent_of_total():
    counts = np.zeros((3, 3), int)
    counts[0, 0] = 414
    counts[1, 1] = 414
    counts[2, 2] = 414  # total 1242; each cell is 33.33%
    text = render_report({"fusion": compute_metrics(ConfusionMatrix(counts))})
    assert "414 ( 33.33%)" in text


def test_render_requires_reports():
    with pytest.raises(DomainError):
        render_report({})

import math

import numpy as np
import pytest

from klcbl.data import EmbeddedExample
from klcbl.metrics import (
    ConfusionMatrix,
    MetricError,
    accuracy,
    average_loss,
    build_report,
    confusion,
    evaluate_model,
    format_metrics_table,
    per_class_prf,
    softmax_probs,
    weighted_prf,
)
from klcbl.tensor import Tensor


def _random_cm(rng):
    return ConfusionMatrix(rng.integers(0, 30, size=(3, 3)))


class _FixedLogits:
    """Evaluation stub: returns a canned logit row per example id."""

    def __init__(self, table):
        self.table = table

    def logits(self, ex):
        return np.asarray(self.table[ex.id], dtype=np.float64)


def _ex(ex_id, label):
    return EmbeddedExample(id=ex_id, tokens=Tensor(np.zeros((1, 2))), pooled=Tensor(np.zeros(2)), label=label)


class TestConfusion:
    def test_perfect_predictions_are_diagonal(self):
        labels = [0, 1, 2, 1, 0, 2, 2]
        cm = confusion(labels, labels)
        assert np.array_equal(cm.counts, np.diag([2, 2, 3]))

    def test_empty_inputs(self):
        cm = confusion([], [])
        assert np.array_equal(cm.counts, np.zeros((3, 3)))

    def test_random_vs_counting_oracle(self):
        rng = np.random.default_rng(0)
        preds = list(rng.integers(0, 3, size=50))
        labels = list(rng.integers(0, 3, size=50))
        cm = confusion(preds, labels)
        for t in range(3):
            for p in range(3):
                want = sum(1 for pp, tt in zip(preds, labels) if tt == t and pp == p)
                assert cm.counts[t, p] == want

    def test_length_mismatch(self):
        with pytest.raises(MetricError, match="length"):
            confusion([0], [0, 1])

    def test_out_of_range(self):
        with pytest.raises(MetricError, match="range"):
            confusion([3], [0])


class TestAccuracy:
    def test_binary_formula_case(self):
        # TP=2, TN=1, FP=1, FN=1 embedded as a 3-class matrix
        cm = ConfusionMatrix([[2, 1, 0], [1, 1, 0], [0, 0, 0]])
        assert accuracy(cm) == 3 / 5

    def test_all_correct(self):
        assert accuracy(ConfusionMatrix(np.diag([4, 4, 4]))) == 1.0

    def test_all_wrong(self):
        assert accuracy(ConfusionMatrix([[0, 5, 0], [0, 0, 5], [5, 0, 0]])) == 0.0

    def test_empty_is_undefined(self):
        with pytest.raises(MetricError):
            accuracy(ConfusionMatrix(np.zeros((3, 3))))


class TestPerClass:
    def test_perfect_class(self):
        cm = ConfusionMatrix(np.diag([3, 2, 5]))
        assert per_class_prf(cm, 1) == (1.0, 1.0, 1.0)

    def test_absent_class_convention(self):
        cm = ConfusionMatrix([[4, 0, 0], [0, 3, 0], [0, 0, 0]])
        assert per_class_prf(cm, 2) == (0.0, 0.0, 0.0)

    def test_random_vs_formula_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            cm = _random_cm(rng)
            for c in range(3):
                tp = cm.counts[c, c]
                fp = cm.counts[:, c].sum() - tp
                fn = cm.counts[c, :].sum() - tp
                p_want = tp / (tp + fp) if tp + fp else 0.0
                r_want = tp / (tp + fn) if tp + fn else 0.0
                f_want = 2 * p_want * r_want / (p_want + r_want) if p_want + r_want else 0.0
                assert per_class_prf(cm, c) == (p_want, r_want, f_want)

    def test_f1_properties(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            cm = _random_cm(rng)
            for c in range(3):
                p, r, f1 = per_class_prf(cm, c)
                assert 0.0 <= f1 <= 1.0
                if p + r > 0:
                    assert f1 == 2 * p * r / (p + r)
                assert (f1 == 0.0) == (p == 0.0 or r == 0.0)


class TestWeighted:
    def test_weighted_recall_equals_accuracy_exactly(self):
        rng = np.random.default_rng(3)
        checked = 0
        while checked < 1000:
            cm = _random_cm(rng)
            if cm.total == 0:
                continue
            _, wr, _ = weighted_prf(cm)
            assert wr == accuracy(cm)  # exact identity, not approximate
            checked += 1

    def test_uniform_diagonal_all_ones(self):
        cm = ConfusionMatrix(np.diag([7, 7, 7]))
        assert weighted_prf(cm) == (1.0, 1.0, 1.0)

    def test_report_column_order(self):
        cm = ConfusionMatrix([[8, 1, 0], [1, 9, 1], [0, 1, 9]])
        report = build_report(cm, average_loss_value=0.5)
        acc, p, r, f1 = report.summary_row()
        assert acc == report.accuracy and p == report.weighted_precision
        assert r == report.weighted_recall and f1 == report.weighted_f1
        table = format_metrics_table([("demo", report.summary_row())])
        header, row = table.splitlines()
        assert header.split() == ["Model", "Acc", "P", "R", "F1"]
        assert row.split()[1] == f"{report.accuracy:.7f}"

    def test_degenerate_classes_flagged(self):
        cm = ConfusionMatrix([[4, 0, 0], [0, 3, 0], [0, 0, 0]])
        report = build_report(cm, average_loss_value=0.0)
        assert report.zero_division_classes == [2]


class TestInvariances:
    def test_sample_order_invariance(self):
        rng = np.random.default_rng(4)
        preds = list(rng.integers(0, 3, size=60))
        labels = list(rng.integers(0, 3, size=60))
        base = confusion(preds, labels)
        perm = rng.permutation(60)
        shuffled = confusion([preds[i] for i in perm], [labels[i] for i in perm])
        assert np.array_equal(base.counts, shuffled.counts)

    def test_merge_matches_pooled_accuracy(self):
        rng = np.random.default_rng(5)
        a, b = _random_cm(rng), _random_cm(rng)
        merged = a.merge(b)
        assert np.array_equal(merged.counts, a.counts + b.counts)
        assert accuracy(merged) == np.trace(a.counts + b.counts) / (a.total + b.total)


class TestAverageLoss:
    def test_zero_logits_give_ln3(self):
        model = _FixedLogits({f"e{i}": [0.0, 0.0, 0.0] for i in range(4)})
        examples = [_ex(f"e{i}", i % 3) for i in range(4)]
        assert abs(average_loss(model, examples) - math.log(3)) < 1e-12

    def test_confident_correct_model_tends_to_zero(self):
        model = _FixedLogits({"a": [50.0, 0.0, 0.0]})
        assert average_loss(model, [_ex("a", 0)]) < 1e-12

    def test_ten_samples_vs_summation_oracle(self):
        rng = np.random.default_rng(6)
        table = {f"e{i}": rng.normal(size=3) for i in range(10)}
        examples = [_ex(f"e{i}", int(rng.integers(0, 3))) for i in range(10)]
        model = _FixedLogits(table)
        got = average_loss(model, examples)
        want = 0.0
        for ex in examples:
            z = table[ex.id]
            want += -math.log(math.exp(z[ex.label]) / sum(math.exp(v) for v in z))
        want /= len(examples)
        assert abs(got - want) < 1e-7

    def test_empty_dataset_rejected(self):
        with pytest.raises(MetricError):
            average_loss(_FixedLogits({}), [])


class TestEvaluateModel:
    def test_report_consistency(self):
        rng = np.random.default_rng(7)
        table = {f"e{i}": rng.normal(size=3) for i in range(30)}
        examples = [_ex(f"e{i}", int(rng.integers(0, 3))) for i in range(30)]
        report = evaluate_model(_FixedLogits(table), examples)
        assert report.weighted_recall == report.accuracy
        assert report.confusion_matrix.total == 30
        assert sum(report.support) == 30

    def test_softmax_probs_sum_to_one(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            probs = softmax_probs(rng.normal(size=3) * 5)
            assert abs(probs.sum() - 1.0) < 1e-6

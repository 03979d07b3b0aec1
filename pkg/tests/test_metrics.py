import json

import numpy as np
import pytest

from mg2vec.errors import ValidationError
from mg2vec.metrics import evaluate, precision_recall_curve, save_pr_csv


class TestEvaluate:
    def test_definition_arithmetic(self):
        # class "a": TP=8, FP=2, FN=2 -> P=R=F1=0.8
        truth = np.array([0] * 10 + [1] * 10)
        predictions = np.concatenate([
            np.array([0] * 8 + [1] * 2),   # truth a: 8 right
            np.array([0] * 2 + [1] * 8),   # truth b: 2 stolen by a
        ])
        report = evaluate(predictions, truth, classes=["a", "b"])
        m = report.per_class["a"]
        assert (m.precision, m.recall, m.f1) == (0.8, 0.8, pytest.approx(0.8))
        assert m.support == 10

    def test_zero_denominators_give_zero(self):
        truth = np.array([0, 0, 1])
        predictions = np.array([0, 0, 0])  # class b never predicted
        report = evaluate(predictions, truth, classes=["a", "b"])
        m = report.per_class["b"]
        assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)

    def test_confusion_rows_are_truth_support(self):
        rng = np.random.default_rng(0)
        truth = rng.integers(0, 3, size=200)
        predictions = rng.integers(0, 3, size=200)
        report = evaluate(predictions, truth, classes=["a", "b", "c"])
        for idx, name in enumerate(report.classes):
            assert report.confusion[idx].sum() == report.per_class[name].support

    def test_micro_recall_equals_accuracy(self):
        rng = np.random.default_rng(1)
        truth = rng.integers(0, 4, size=500)
        predictions = rng.integers(0, 4, size=500)
        report = evaluate(predictions, truth, classes=list("abcd"))
        confusion = report.confusion
        micro_recall = np.trace(confusion) / confusion.sum()
        assert micro_recall == pytest.approx((predictions == truth).mean())

    def test_f1_between_min_and_max_of_p_and_r(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            truth = rng.integers(0, 3, size=60)
            predictions = rng.integers(0, 3, size=60)
            report = evaluate(predictions, truth, classes=list("abc"))
            for m in report.per_class.values():
                assert min(m.precision, m.recall) - 1e-12 <= m.f1
                assert m.f1 <= max(m.precision, m.recall) + 1e-12

    def test_macro_is_mean_of_per_class(self):
        truth = np.array([0, 0, 1, 1, 2])
        predictions = np.array([0, 1, 1, 1, 0])
        report = evaluate(predictions, truth, classes=list("abc"))
        expected = np.mean([report.per_class[c].f1 for c in report.classes])
        assert report.macro_f1 == pytest.approx(expected)

    def test_unassigned_predictions_counted_as_errors(self):
        truth = np.array([0, 1, 1])
        predictions = np.array([0, -1, 1])
        report = evaluate(predictions, truth, classes=["a", "b"])
        assert report.per_class["b"].recall == pytest.approx(0.5)
        assert report.confusion.shape == (2, 3)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            evaluate(np.array([0]), np.array([0, 1]), classes=["a", "b"])

    def test_json_deterministic_and_structured(self):
        truth = np.array([0, 1, 0, 1])
        predictions = np.array([0, 1, 1, 1])
        scores = np.array([[0.9, 0.1], [0.2, 0.8], [0.4, 0.6], [0.1, 0.9]])
        r1 = evaluate(predictions, truth, classes=["a", "b"], scores=scores)
        r2 = evaluate(predictions, truth, classes=["a", "b"], scores=scores)
        assert r1.to_json() == r2.to_json()
        payload = json.loads(r1.to_json())
        assert set(payload) >= {"classes", "per_class", "macro", "confusion", "pr_auc"}

    def test_table_render(self):
        report = evaluate(np.array([0, 1]), np.array([0, 1]), classes=["a", "b"])
        table = report.to_table()
        assert "precision" in table and "macro" in table


class TestPrCurve:
    def test_perfect_separation_auc_one(self):
        truth = np.array([1, 1, 1, 0, 0, 0], dtype=bool)
        scores = np.array([0.9, 0.8, 0.7, 0.3, 0.2, 0.1])
        _, _, _, auc = precision_recall_curve(truth, scores)
        assert auc == pytest.approx(1.0)

    def test_random_scores_auc_near_prevalence(self):
        rng = np.random.default_rng(3)
        n = 100000
        for prevalence in (0.1, 0.35):
            truth = rng.random(n) < prevalence
            scores = rng.random(n)
            _, _, _, auc = precision_recall_curve(truth, scores)
            assert abs(auc - prevalence) < 0.02

    def test_tie_grouping(self):
        truth = np.array([1, 0, 1, 0], dtype=bool)
        scores = np.array([0.5, 0.5, 0.5, 0.5])
        thresholds, precision, recall, auc = precision_recall_curve(truth, scores)
        # one bucket: everything predicted at once
        assert len(thresholds) == 1
        assert precision[0] == 0.5 and recall[0] == 1.0
        assert auc == pytest.approx(0.5)

    def test_no_positives_gives_zero_auc(self):
        _, _, _, auc = precision_recall_curve(np.zeros(5, dtype=bool), np.arange(5.0))
        assert auc == 0.0

    def test_recall_monotone_and_endpoint(self):
        rng = np.random.default_rng(4)
        truth = rng.random(500) < 0.3
        scores = rng.normal(size=500)
        _, _, recall, _ = precision_recall_curve(truth, scores)
        assert (np.diff(recall) >= 0).all()
        assert recall[-1] == pytest.approx(1.0)

    def test_csv_export(self, tmp_path):
        truth = np.array([1, 0, 1], dtype=bool)
        scores = np.array([0.8, 0.5, 0.3])
        thresholds, precision, recall, _ = precision_recall_curve(truth, scores)
        path = tmp_path / "pr.csv"
        save_pr_csv(path, thresholds, precision, recall)
        lines = path.read_text().splitlines()
        assert lines[0] == "threshold,precision,recall"
        assert len(lines) == 1 + len(thresholds)

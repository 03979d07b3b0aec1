"""Per-class precision/recall/F1, confusion matrices, and PR curves.

Zero-denominator conventions: precision and recall are 0 when their
denominator is 0, and F1 is 0 when precision + recall is 0 (so classes the
classifier never predicts score 0.00 rather than NaN). PR-AUC is average
precision with deterministic tie handling: equal scores collapse into one
threshold bucket before the step-wise sum.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from mg2vec.errors import ValidationError


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalReport:
    classes: list[str]
    per_class: dict                      # class name -> ClassMetrics
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: np.ndarray                # rows = truth, cols = prediction
    pr_curves: dict = field(default_factory=dict)   # name -> dict of arrays + auc
    cluster_mapping: dict | None = None  # cluster id -> class name (or None)

    def to_json(self):
        payload = {
            "classes": self.classes,
            "per_class": {
                name: {
                    "precision": m.precision, "recall": m.recall,
                    "f1": m.f1, "support": m.support,
                }
                for name, m in self.per_class.items()
            },
            "macro": {
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
            },
            "confusion": self.confusion.tolist(),
            "pr_auc": {name: curve["auc"] for name, curve in self.pr_curves.items()},
        }
        if self.cluster_mapping is not None:
            payload["cluster_mapping"] = {
                str(k): v for k, v in sorted(self.cluster_mapping.items())
            }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def to_table(self):
        width = max(len(c) for c in self.classes + ["class"])
        lines = [f"{'class':<{width}}  precision  recall  f1      support"]
        for name in self.classes:
            m = self.per_class[name]
            lines.append(
                f"{name:<{width}}  {m.precision:9.4f}  {m.recall:6.4f}  "
                f"{m.f1:6.4f}  {m.support:7d}"
            )
        lines.append(
            f"{'macro':<{width}}  {self.macro_precision:9.4f}  "
            f"{self.macro_recall:6.4f}  {self.macro_f1:6.4f}"
        )
        return "\n".join(lines) + "\n"


def precision_recall_curve(truth, scores):
    """Stepwise PR points over descending score thresholds (ties grouped).

    truth is a boolean vector; returns (thresholds, precision, recall, auc)
    where auc is the average-precision sum over recall increments.
    """
    truth = np.asarray(truth, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    if truth.shape != scores.shape:
        raise ValidationError("truth and scores must align")
    n_positive = int(truth.sum())
    if n_positive == 0:
        return np.array([]), np.array([]), np.array([]), 0.0
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_truth = truth[order]
    # last index of each tied-score group
    boundary = np.flatnonzero(
        np.concatenate([sorted_scores[1:] != sorted_scores[:-1], [True]])
    )
    tp = np.cumsum(sorted_truth)[boundary]
    predicted = boundary + 1
    precision = tp / predicted
    recall = tp / n_positive
    delta_recall = np.diff(np.concatenate([[0.0], recall]))
    auc = float((precision * delta_recall).sum())
    return sorted_scores[boundary], precision, recall, auc


def save_pr_csv(path, thresholds, precision, recall):
    with open(path, "w") as fh:
        fh.write("threshold,precision,recall\n")
        for t, p, r in zip(thresholds, precision, recall):
            fh.write(f"{t!r},{p!r},{r!r}\n")


def evaluate(predictions, truth, classes, scores=None, cluster_mapping=None,
             unassigned_label="unassigned"):
    """EvalReport from aligned prediction/truth index vectors.

    predictions may contain -1 ("unassigned" clusters); those rows count as
    errors for every real class. scores, when given, is an (n, n_classes)
    matrix used for one-vs-rest PR curves with average-precision AUC.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if predictions.shape != truth.shape:
        raise ValidationError("prediction and truth vectors must align")
    n_classes = len(classes)
    has_unassigned = bool((predictions < 0).any())
    size = n_classes + (1 if has_unassigned else 0)
    confusion = np.zeros((n_classes, size), dtype=np.int64)
    cols = np.where(predictions < 0, n_classes, predictions)
    np.add.at(confusion, (truth, cols), 1)

    per_class = {}
    for idx, name in enumerate(classes):
        tp = int(confusion[idx, idx])
        fp = int(confusion[:, idx].sum()) - tp
        fn = int(confusion[idx].sum()) - tp
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[name] = ClassMetrics(
            precision=precision, recall=recall, f1=f1, support=tp + fn,
        )

    pr_curves = {}
    if scores is not None:
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (len(truth), n_classes):
            raise ValidationError("scores must be (n, n_classes)")
        for idx, name in enumerate(classes):
            thresholds, precision, recall, auc = precision_recall_curve(
                truth == idx, scores[:, idx]
            )
            pr_curves[name] = {
                "thresholds": thresholds, "precision": precision,
                "recall": recall, "auc": auc,
            }

    mapping_by_name = None
    if cluster_mapping is not None:
        mapping_by_name = {
            k: (classes[v] if v is not None else unassigned_label)
            for k, v in cluster_mapping.items()
        }
    return EvalReport(
        classes=list(classes),
        per_class=per_class,
        macro_precision=float(np.mean([m.precision for m in per_class.values()])),
        macro_recall=float(np.mean([m.recall for m in per_class.values()])),
        macro_f1=float(np.mean([m.f1 for m in per_class.values()])),
        confusion=confusion,
        pr_curves=pr_curves,
        cluster_mapping=mapping_by_name,
    )

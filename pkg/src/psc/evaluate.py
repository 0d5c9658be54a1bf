"""Posterior-predictive classification, error/ROC/AUC metrics and k selection."""
import csv
from dataclasses import dataclass

import numpy as np

from .model import LabeledDataset, conditional_class_prob


@dataclass(frozen=True)
class PredictiveResult:
    """Posterior-predictive class probabilities, one row per observation.

    ``labels`` is the 1-based argmax; ties go to the smallest label.
    """

    probs: np.ndarray
    labels: np.ndarray
    n_draws: int

    @property
    def c(self):
        return self.probs.shape[1]


@dataclass(frozen=True)
class EvalReport:
    error_rate: float
    confusion: np.ndarray
    roc_points: np.ndarray = None
    auc: float = None
    k: int = None

    @property
    def auc_minus_error(self):
        return None if self.auc is None else self.auc - self.error_rate


def predictive_from_probs(probs, n_draws=1):
    probs = np.asarray(probs, dtype=float)
    # argmax returns the first maximum, i.e. the smallest label on ties
    return PredictiveResult(probs, probs.argmax(axis=1) + 1, n_draws)


def posterior_predict(chain, X_new, check_standardization=True):
    """Average ``P(Y | X = x)`` over the stored draws.

    ``X_new`` may be an array already on the training scale or a
    :class:`LabeledDataset`.  For a dataset, its recorded transform must
    match the chain's training transform; a raw dataset (no transform) is
    standardized with the chain's transform.  Mismatches raise ``ValueError``.
    """
    draws = getattr(chain, "draws", chain)
    if len(draws) == 0:
        raise ValueError("empty chain")
    train_std = getattr(chain, "standardization", None)
    if isinstance(X_new, LabeledDataset):
        data_std = X_new.standardization
        if data_std is None and train_std is not None:
            X = train_std.apply(X_new.X)
        elif check_standardization and data_std != train_std:
            raise ValueError("prediction data were standardized differently from the training data")
        else:
            X = X_new.X
    else:
        X = np.atleast_2d(np.asarray(X_new, dtype=float))
    m = draws[0].m
    if X.shape[1] != m:
        raise ValueError(f"feature dimension mismatch: chain has m={m}, data has {X.shape[1]}")
    total = np.zeros((X.shape[0], draws[0].c))
    for state in draws:
        total += conditional_class_prob(state, X)
    return predictive_from_probs(total / len(draws), len(draws))


def roc_curve(scores, positive):
    """ROC points (fpr, tpr) from (0, 0) to (1, 1), one per distinct threshold.

    Thresholds sweep the sorted unique scores downward; an observation is
    called positive when its score is >= the threshold.
    """
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    n_pos, n_neg = positive.sum(), (~positive).sum()
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both positive and negative observations")
    order = np.argsort(-scores, kind="stable")
    s, p = scores[order], positive[order]
    tp, fp = np.cumsum(p), np.cumsum(~p)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    fpr = np.r_[0.0, fp[last] / n_neg]
    tpr = np.r_[0.0, tp[last] / n_pos]
    return np.column_stack([fpr, tpr])


def trapezoid_auc(points):
    x, y = points[:, 0], points[:, 1]
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def mann_whitney_auc(scores, positive):
    """P(score_pos > score_neg) + P(tie) / 2 by enumerating all pairs."""
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    d = scores[positive][:, None] - scores[~positive][None, :]
    return float(np.mean((d > 0) + 0.5 * (d == 0)))


def confusion_matrix(y_true, y_pred, c):
    cm = np.zeros((c, c), dtype=int)
    np.add.at(cm, (np.asarray(y_true) - 1, np.asarray(y_pred) - 1), 1)
    return cm


def evaluate(pred, y_true, positive_class=2, with_auc=None, k=None):
    """Error rate, confusion matrix and, for two classes, ROC and AUC.

    ``with_auc=None`` computes the AUC whenever c == 2; asking for it with
    more classes raises ``ValueError("binary only")``.
    """
    y_true = np.asarray(y_true, dtype=int)
    if y_true.shape != pred.labels.shape:
        raise ValueError("one true label per prediction required")
    c = pred.c
    if y_true.size and (y_true.min() < 1 or y_true.max() > c):
        raise ValueError(f"true labels must lie in 1..{c}")
    error = float(np.mean(pred.labels != y_true))
    cm = confusion_matrix(y_true, pred.labels, c)
    if with_auc is None:
        with_auc = c == 2
    if not with_auc:
        return EvalReport(error, cm, k=k)
    if c != 2:
        raise ValueError("binary only")
    pos = y_true == positive_class
    if pos.all() or not pos.any():
        return EvalReport(error, cm, k=k)
    roc = roc_curve(pred.probs[:, positive_class - 1], pos)
    return EvalReport(error, cm, roc, trapezoid_auc(roc), k)


def select_k(reports, k_max=25):
    """k maximizing AUC minus error rate among reports with k <= k_max.

    Ties go to the smallest k.  If any report lacks an AUC (non-binary
    task) the rule falls back to the smallest error rate.
    """
    pool = sorted((r for r in reports if r.k is not None and r.k <= k_max), key=lambda r: r.k)
    if not pool:
        raise ValueError(f"no candidate with k <= {k_max}")
    if all(r.auc is not None for r in pool):
        values = np.array([r.auc_minus_error for r in pool])
        return pool[int(np.argmax(values))].k
    values = np.array([r.error_rate for r in pool])
    return pool[int(np.argmin(values))].k


METRIC_FIELDS = ("k", "error_rate", "auc", "auc_minus_error")


def write_metrics_csv(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for r in sorted(reports, key=lambda r: r.k):
            w.writerow([r.k, repr(r.error_rate), "" if r.auc is None else repr(r.auc),
                        "" if r.auc is None else repr(r.auc_minus_error)])


def read_metrics_csv(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            auc = float(row["auc"]) if row["auc"] else None
            out.append(EvalReport(float(row["error_rate"]), None, None, auc, int(row["k"])))
    return out


def write_roc_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr"])
        for fpr, tpr in report.roc_points:
            w.writerow([repr(float(fpr)), repr(float(tpr))])


def write_predictions_csv(pred, path, y_true=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"p_{j + 1}" for j in range(pred.c)] + ["predicted"]
                   + ([] if y_true is None else ["true"]))
        for i, row in enumerate(pred.probs):
            w.writerow([repr(float(v)) for v in row] + [int(pred.labels[i])]
                       + ([] if y_true is None else [int(y_true[i])]))


def format_report(report):
    lines = [f"error rate: {report.error_rate:.4f}"]
    if report.auc is not None:
        lines.append(f"AUC: {report.auc:.4f}")
    if report.confusion is not None:
        lines.append("confusion (rows true, columns predicted):")
        lines += ["  " + " ".join(f"{v:5d}" for v in row) for row in report.confusion]
    return "\n".join(lines) + "\n"

"""Loss-threshold membership attack.

A sample is scored by its normalised loss ``n = l(y, y_hat) / B`` and
predicted to be a training member iff ``n <= t``.  Sweeping ``t`` gives the
ROC curve; fixing ``t`` at the mean normalised training loss gives the F1
and accuracy operating point.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import InputError
from .net_core import LossBound, ModelParams, forward, nll_loss
from .posterior import EnsemblePredictor, ensemble_predict


def predict_proba(model, X) -> np.ndarray:
    """Class probabilities from a ModelParams, an EnsemblePredictor or a callable."""
    if isinstance(model, ModelParams):
        return forward(model, X)
    if isinstance(model, EnsemblePredictor):
        return ensemble_predict(model, X)
    if callable(model):
        return model(X)
    raise TypeError(f"cannot predict with {type(model).__name__}")


def normalized_losses(model, X, y, bound: LossBound = LossBound()) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return nll_loss(predict_proba(model, X), np.atleast_1d(y), bound) / bound.B


@dataclass
class AttackScoreSet:
    ids: list
    scores: np.ndarray
    membership: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.membership = np.asarray(self.membership, dtype=np.int64)
        if not (len(self.ids) == self.scores.shape[0] == self.membership.shape[0]):
            raise InputError("ids, scores and membership must have equal length")

    @property
    def member_scores(self) -> np.ndarray:
        return self.scores[self.membership == 1]

    @property
    def nonmember_scores(self) -> np.ndarray:
        return self.scores[self.membership == 0]

    def require_both_classes(self) -> None:
        if self.member_scores.size == 0 or self.nonmember_scores.size == 0:
            raise InputError("need both members and nonmembers")


def score_samples(model, members, nonmembers, bound: LossBound = LossBound()) -> AttackScoreSet:
    """Normalised losses for ``members`` and ``nonmembers``, each an ``(X, y)`` pair."""
    (Xm, ym), (Xn, yn) = members, nonmembers
    if len(ym) == 0 or len(yn) == 0:
        raise InputError("both members and nonmembers must be nonempty")
    scores = np.concatenate([normalized_losses(model, Xm, ym, bound),
                             normalized_losses(model, Xn, yn, bound)])
    ids = [f"m{i}" for i in range(len(ym))] + [f"n{i}" for i in range(len(yn))]
    return AttackScoreSet(ids, scores, np.r_[np.ones(len(ym), int), np.zeros(len(yn), int)])


def roc_auc(scores: AttackScoreSet) -> float:
    """Probability that a member scores below a nonmember, ties counting 1/2.

    Computed from mid-ranks of the pooled scores (Mann-Whitney U).
    """
    scores.require_both_classes()
    m = scores.membership == 1
    n_pos, n_neg = int(m.sum()), int((~m).sum())
    ranks = rankdata(scores.scores)
    u_neg = ranks[~m].sum() - n_neg * (n_neg + 1) / 2.0
    return float(u_neg / (n_pos * n_neg))


def roc_curve(scores: AttackScoreSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds) for "member iff score <= t", starting at (0, 0)."""
    scores.require_both_classes()
    thresholds = np.unique(scores.scores)
    pos = np.sort(scores.member_scores)
    neg = np.sort(scores.nonmember_scores)
    tpr = np.searchsorted(pos, thresholds, side="right") / pos.size
    fpr = np.searchsorted(neg, thresholds, side="right") / neg.size
    return (np.r_[0.0, fpr], np.r_[0.0, tpr], np.r_[-np.inf, thresholds])


@dataclass
class AttackReport:
    auc: float
    f1: float
    accuracy: float
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int


def fixed_threshold_attack(scores: AttackScoreSet, threshold: float, auc: float = float("nan")) -> AttackReport:
    pred = scores.scores <= threshold
    truth = scores.membership == 1
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    tn = int(np.sum(~pred & ~truth))
    fn = int(np.sum(~pred & truth))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return AttackReport(auc, f1, (tp + tn) / len(pred), float(threshold), tp, fp, tn, fn)


def mean_train_loss_threshold(model, X, y, bound: LossBound = LossBound()) -> float:
    if len(y) == 0:
        raise InputError("empty training set")
    return float(normalized_losses(model, X, y, bound).mean())


def threshold_attack(model, train, test, bound: LossBound = LossBound()) -> AttackReport:
    """Full attack: AUC over the sweep plus the mean-training-loss operating point."""
    scores = score_samples(model, train, test, bound)
    t = mean_train_loss_threshold(model, *train, bound)
    return fixed_threshold_attack(scores, t, auc=roc_auc(scores))


def write_scores(scores: AttackScoreSet, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", "normalized_loss", "member"])
    for i, s, m in zip(scores.ids, scores.scores, scores.membership):
        w.writerow([i, repr(float(s)), int(m)])
    Path(path).write_text(buf.getvalue())


def read_scores(path) -> AttackScoreSet:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return AttackScoreSet([r["sample_id"] for r in rows],
                          [float(r["normalized_loss"]) for r in rows],
                          [int(r["member"]) for r in rows])


def write_roc(scores: AttackScoreSet, path) -> None:
    fpr, tpr, _ = roc_curve(scores)
    lines = ["fpr,tpr"] + [f"{a!r},{b!r}" for a, b in zip(fpr.tolist(), tpr.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def write_report(report: AttackReport, path) -> None:
    d = asdict(report)
    Path(path).write_text(",".join(d) + "\n" + ",".join(repr(v) for v in d.values()) + "\n")

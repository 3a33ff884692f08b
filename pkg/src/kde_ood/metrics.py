"""Detection metrics with in-distribution as the positive class.

Thresholding convention, fixed once here: a sample is predicted positive
(in-distribution) when its score is >= the threshold. All headline metrics
are percentages in [0, 100].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


def _as_scores(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError(f"{name} must not be empty")
    if not np.isfinite(arr).all():
        raise ValueError(f"non-finite value in {name}")
    return arr


@dataclass
class EvalReport:
    """Bundle of detection metrics for one positive/negative score split."""

    fpr_at_95_tpr: float  # percent
    detection_error: float  # percent, at the nominal 95% TPR operating point
    auroc: float  # percent
    aupr: float  # percent
    roc_points: list  # (threshold, tpr, fpr); thresholds descending, first is +inf
    n_pos: int
    n_neg: int

    def __post_init__(self):
        for name in ("fpr_at_95_tpr", "detection_error", "auroc", "aupr"):
            val = getattr(self, name)
            if not (0.0 <= val <= 100.0):
                raise ValueError(f"{name} must be a percentage in [0, 100], got {val}")
        self.roc_points = [(float(t), float(tpr), float(fpr))
                           for t, tpr, fpr in self.roc_points]
        prev_tpr, prev_fpr = -1.0, -1.0
        for _, tpr, fpr in self.roc_points:  # thresholds descend, rates climb
            if tpr < prev_tpr or fpr < prev_fpr:
                raise ValueError("roc_points must be non-decreasing in TPR and FPR")
            prev_tpr, prev_fpr = tpr, fpr
        if self.n_pos < 1 or self.n_neg < 1:
            raise ValueError("counts must be positive")

    def to_json(self) -> str:
        # +inf thresholds are not representable in strict JSON; the synthetic
        # all-negative endpoint serializes as null
        points = [[None if math.isinf(t) else t, tpr, fpr]
                  for t, tpr, fpr in self.roc_points]
        return json.dumps({
            "fpr_at_95_tpr": self.fpr_at_95_tpr,
            "detection_error": self.detection_error,
            "auroc": self.auroc,
            "aupr": self.aupr,
            "counts": {"n_pos": self.n_pos, "n_neg": self.n_neg},
            "roc_points": points,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        obj = json.loads(text)
        points = [(math.inf if t is None else float(t), tpr, fpr)
                  for t, tpr, fpr in obj["roc_points"]]
        return cls(
            fpr_at_95_tpr=obj["fpr_at_95_tpr"],
            detection_error=obj["detection_error"],
            auroc=obj["auroc"],
            aupr=obj["aupr"],
            roc_points=points,
            n_pos=obj["counts"]["n_pos"],
            n_neg=obj["counts"]["n_neg"],
        )

    def roc_csv(self) -> str:
        lines = ["threshold,tpr,fpr"]
        for t, tpr, fpr in self.roc_points:
            tstr = "inf" if math.isinf(t) else repr(t)
            lines.append(f"{tstr},{tpr!r},{fpr!r}")
        return "\n".join(lines) + "\n"

    def summary_line(self) -> str:
        return (f"FPR@95%TPR {self.fpr_at_95_tpr:.2f}%  "
                f"detection error {self.detection_error:.2f}%  "
                f"AUROC {self.auroc:.2f}%  AUPR {self.aupr:.2f}%")


def _sweep(pos: np.ndarray, neg: np.ndarray):
    """TP/FP counts at every distinct score value, thresholds descending.

    Counts stay integral here; callers divide by the relevant totals. Deriving
    a count back from a rate (``tpr * n``) can be off by one ulp, which would
    leak into precision values.
    """
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    # count of scores >= t, via position of t in the ascending sort
    tp = pos.size - np.searchsorted(pos_sorted, thresholds, side="left")
    fp = neg.size - np.searchsorted(neg_sorted, thresholds, side="left")
    return thresholds, tp, fp


def roc_curve(pos_scores, neg_scores) -> list:
    """ROC points (threshold, TPR, FPR), one per distinct score plus endpoints.

    The first point is a synthetic +inf threshold where nothing is accepted,
    giving (0, 0); the lowest score's point is always (1, 1).
    """
    pos = _as_scores(pos_scores, "pos_scores")
    neg = _as_scores(neg_scores, "neg_scores")
    thresholds, tp, fp = _sweep(pos, neg)
    points = [(math.inf, 0.0, 0.0)]
    points.extend(
        (float(t), float(a), float(b))
        for t, a, b in zip(thresholds, tp / pos.size, fp / neg.size)
    )
    return points


def fpr_at_tpr(pos_scores, neg_scores, target_tpr: float = 0.95) -> float:
    """FPR (percent) at the largest threshold reaching the target TPR.

    Rates only change at distinct score values, and FPR never decreases as
    the threshold drops, so the first sweep point with TPR >= target carries
    the minimal achievable FPR. No interpolation between thresholds.
    """
    pos = _as_scores(pos_scores, "pos_scores")
    neg = _as_scores(neg_scores, "neg_scores")
    if not 0.0 < target_tpr <= 1.0:
        raise ValueError(f"target_tpr must be in (0, 1], got {target_tpr}")
    _, tp, fp = _sweep(pos, neg)
    hit = np.nonzero(tp / pos.size >= target_tpr)[0]
    # the final threshold accepts everything (TPR = 1), so a hit always exists
    return float(fp[hit[0]] / neg.size) * 100.0


def detection_error(tpr: float, fpr: float) -> float:
    """Misclassification rate (percent) of the implied detector.

    Assumes positives and negatives are equally likely at test time:
    0.5·(1 − TPR) + 0.5·FPR, expressed in percent.
    """
    if not (0.0 <= tpr <= 1.0 and 0.0 <= fpr <= 1.0):
        raise ValueError(f"tpr and fpr must be fractions in [0, 1], got {tpr}, {fpr}")
    # distributed form: 50*0.95 rounds to exactly 47.5, so the canonical
    # operating point (0.95, 0) yields exactly 2.5 rather than 2.5 + 2e-16
    return 50.0 - 50.0 * tpr + 50.0 * fpr


def auroc(pos_scores, neg_scores) -> float:
    """Area under the ROC curve, percent.

    Computed rank-based (Mann-Whitney, ties get 0.5 credit), which equals
    the trapezoidal area under roc_curve().
    """
    pos = _as_scores(pos_scores, "pos_scores")
    neg = _as_scores(neg_scores, "neg_scores")
    ranks = rankdata(np.concatenate([pos, neg]))
    pos_rank_sum = float(np.sum(ranks[: pos.size]))
    pairs_won = pos_rank_sum - pos.size * (pos.size + 1) / 2.0
    return 100.0 * pairs_won / (pos.size * neg.size)


def aupr(pos_scores, neg_scores) -> float:
    """Area under the precision-recall curve (recall on positives), percent.

    Step-wise interpolation: each distinct threshold contributes its
    precision times the recall gained there.
    """
    pos = _as_scores(pos_scores, "pos_scores")
    neg = _as_scores(neg_scores, "neg_scores")
    _, tp, fp = _sweep(pos, neg)
    precision = tp / (tp + fp)  # some score >= t at every real threshold
    recall = tp / pos.size
    area = 0.0
    prev_recall = 0.0
    for p, r in zip(precision.tolist(), recall.tolist()):
        area += (r - prev_recall) * p
        prev_recall = r
    return 100.0 * area


def evaluate(pos_scores, neg_scores) -> EvalReport:
    """All metrics at once for one positive/negative split.

    The detection error is reported at the standard operating point: nominal
    95% TPR with the FPR actually achieved there, so a perfect detector
    scores 50·(1 − 0.95 + 0) = 2.50.
    """
    pos = _as_scores(pos_scores, "pos_scores")
    neg = _as_scores(neg_scores, "neg_scores")
    fpr95 = fpr_at_tpr(pos, neg, 0.95)
    return EvalReport(
        fpr_at_95_tpr=fpr95,
        detection_error=detection_error(0.95, fpr95 / 100.0),
        auroc=auroc(pos, neg),
        aupr=aupr(pos, neg),
        roc_points=roc_curve(pos, neg),
        n_pos=pos.size,
        n_neg=neg.size,
    )

# metrics.py
# Confusion-matrix metrics and the pairwise AUC

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from sklearn.metrics import auc, roc_curve

from errors import DataError

logger = logging.getLogger(__name__)

METRIC_NAMES = ("acc", "sen", "spe", "auc")


@dataclass(frozen=True)
class Metrics:
    """Undefined sen / spe / auc (single-class set) are None"""
    acc: float
    sen: Optional[float]
    spe: Optional[float]
    auc: Optional[float]
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> Dict:
        return asdict(self)


def mann_whitney_auc(scores: Sequence[float], labels: Sequence[int]) -> Optional[float]:
    """P(score_pos > score_neg) + 0.5 P(tie) over all positive/negative pairs"""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos, neg = scores[labels == 1], scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        return None
    diff = pos[:, None] - neg[None, :]
    wins = np.count_nonzero(diff > 0) + 0.5 * np.count_nonzero(diff == 0)
    return float(wins / (pos.size * neg.size))


def trapezoid_auc(scores: Sequence[float], labels: Sequence[int]) -> Optional[float]:
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        return None
    fpr, tpr, _ = roc_curve(labels, scores)
    return float(auc(fpr, tpr))


def evaluate_scores(probs: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> Metrics:
    """probs: patient-class probability; labels: 1 patient, 0 control"""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.shape != labels.shape or probs.size == 0:
        raise DataError(f"evaluate: {probs.shape} scores for {labels.shape} labels")
    pred = probs >= threshold
    truth = labels == 1
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    tn = int(np.sum(~pred & ~truth))
    fn = int(np.sum(~pred & truth))
    sen = tp / (tp + fn) if tp + fn else None
    spe = tn / (tn + fp) if tn + fp else None
    area = mann_whitney_auc(probs, labels)
    if sen is None or spe is None:
        logger.warning(f"Single-class evaluation set ({labels.size} subjects): sen/spe/auc undefined")
    return Metrics(acc=(tp + tn) / labels.size, sen=sen, spe=spe, auc=area, tp=tp, fp=fp, tn=tn, fn=fn)


def summarize(per_fold: List[Metrics]) -> Dict[str, Dict[str, Optional[float]]]:
    """mean and population std of each metric over the folds where it is defined"""
    out = {}
    for name in METRIC_NAMES:
        values = [getattr(m, name) for m in per_fold if getattr(m, name) is not None]
        out[name] = {
            "mean": float(np.mean(values)) if values else None,
            "std": float(np.std(values)) if values else None,
            "n": len(values),
        }
    return out

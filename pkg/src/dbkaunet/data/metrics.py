"""FOV-masked segmentation metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

CSV_FIELDS = ("auc", "f1", "se", "sp", "acc", "tp", "fp", "tn", "fn")


def _ratio(num: float, den: float) -> float:
    # undefined ratios (empty class) are reported as 0
    return num / den if den else 0.0


@dataclass
class MetricsReport:
    auc: float
    f1: float
    se: float
    sp: float
    acc: float
    tp: int
    fp: int
    tn: int
    fn: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int, auc: float) -> "MetricsReport":
        tp, fp, tn, fn = int(tp), int(fp), int(tn), int(fn)
        return cls(
            auc=float(auc),
            f1=_ratio(2 * tp, 2 * tp + fp + fn),
            se=_ratio(tp, tp + fn),
            sp=_ratio(tn, tn + fp),
            acc=_ratio(tp + tn, tp + fp + tn + fn),
            tp=tp, fp=fp, tn=tn, fn=fn,
        )

    def to_json(self, **extra) -> str:
        return json.dumps({**extra, **asdict(self)})

    def csv_row(self) -> list:
        return [getattr(self, f) for f in CSV_FIELDS]


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Trapezoidal area under the ROC traced over every distinct score threshold.

    Tied scores contribute a diagonal segment, i.e. half credit.  A single-
    class label set has no ROC and yields 0.5.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    # cut after the last entry of each distinct score
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tps = np.cumsum(y)[last].astype(np.float64)
    fps = (last + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def compute_metrics(prob_map, vessel_mask, fov_mask=None, threshold: float = 0.5) -> MetricsReport:
    """Confusion counts at ``prob >= threshold`` and ROC AUC over FOV pixels."""
    prob = np.asarray(prob_map, dtype=np.float64)
    truth = np.asarray(vessel_mask)
    fov = np.ones(prob.shape, dtype=bool) if fov_mask is None else np.asarray(fov_mask).astype(bool)
    if not prob.shape == truth.shape == fov.shape:
        raise ValueError(f"shape mismatch: prob {prob.shape}, mask {truth.shape}, fov {fov.shape}")
    if not fov.any():
        raise ValueError("empty FOV: no pixels to evaluate")
    p = prob[fov]
    t = truth[fov].astype(bool)
    pred = p >= threshold
    tp = int(np.sum(pred & t))
    fp = int(np.sum(pred & ~t))
    fn = int(np.sum(~pred & t))
    tn = int(np.sum(~pred & ~t))
    return MetricsReport.from_counts(tp, fp, tn, fn, roc_auc(p, t))


def mean_report(reports: list[MetricsReport]) -> dict:
    """Per-field mean over images (counts summed)."""
    if not reports:
        raise ValueError("no reports to aggregate")
    out = {f: float(np.mean([getattr(r, f) for r in reports])) for f in ("auc", "f1", "se", "sp", "acc")}
    out.update({f: int(sum(getattr(r, f) for r in reports)) for f in ("tp", "fp", "tn", "fn")})
    return out

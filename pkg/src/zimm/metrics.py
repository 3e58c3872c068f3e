"""Ranking metrics and statistical machinery, hand-rolled on numpy.

AUC-ROC is computed as the Mann-Whitney U statistic normalized by
n_pos * n_neg (midranks for ties, so tied pairs count one half). Average
precision sums (R_k - R_{k-1}) * P_k over descending-score thresholds with
tied scores collapsed into a single threshold. mean-AP averages per-bucket
AP, skipping buckets that have no positive example (with a warning).

The bootstrap resamples patients with replacement using one named RNG
substream per resample, so results are independent of evaluation order;
degenerate resamples (a single class, or no positives) are redrawn and
counted. The Mann-Whitney test uses exact enumeration when both samples
have at most 8 elements and otherwise a normal approximation with
tie-corrected variance and continuity correction.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .rng import RngStream

__all__ = [
    "ScoredLabels",
    "MetricsReport",
    "SingleClassError",
    "ZeroPositivesError",
    "auc_roc",
    "average_precision",
    "auc_pr",
    "mean_ap",
    "mean_ap_detail",
    "bootstrap",
    "bootstrap_metric",
    "BootstrapSummary",
    "mann_whitney_u",
]


class SingleClassError(ValueError):
    pass


class ZeroPositivesError(ValueError):
    pass


class ScoredLabels:
    """Parallel score/label arrays for one binary ranking task."""

    __slots__ = ("score", "label")

    def __init__(self, score, label):
        score = np.asarray(score, dtype=np.float64)
        label = np.asarray(label)
        if score.ndim != 1 or score.shape != label.shape or score.size < 1:
            raise ValueError("ScoredLabels: need equal-length 1-D arrays, length >= 1")
        if not np.isin(label, (0, 1)).all():
            raise ValueError("ScoredLabels: labels must be 0/1")
        self.score = score
        self.label = label.astype(np.int64)

    def __len__(self):
        return self.score.size

    def take(self, idx) -> "ScoredLabels":
        return ScoredLabels(self.score[idx], self.label[idx])


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size, dtype=np.float64)
    sv = values[order]
    i = 0
    while i < sv.size:
        j = i
        while j + 1 < sv.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i: j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc_roc(sl: ScoredLabels) -> float:
    """P(random positive outranks random negative), ties counting one half."""
    n_pos = int(sl.label.sum())
    n_neg = sl.label.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("auc_roc: need at least one positive and one negative")
    ranks = _midranks(sl.score)
    u = ranks[sl.label == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(sl: ScoredLabels) -> float:
    """Step-sum AP over descending thresholds; tied scores form one step."""
    n_pos = int(sl.label.sum())
    if n_pos == 0:
        raise ZeroPositivesError("average_precision: no positive examples")
    order = np.argsort(-sl.score, kind="mergesort")
    scores = sl.score[order]
    labels = sl.label[order]
    ap = 0.0
    tp = 0
    seen = 0
    prev_recall = 0.0
    i = 0
    n = scores.size
    while i < n:
        j = i
        while j + 1 < n and scores[j + 1] == scores[i]:
            j += 1
        tp += int(labels[i: j + 1].sum())
        seen = j + 1
        recall = tp / n_pos
        precision = tp / seen
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return float(ap)


def auc_pr(sl: ScoredLabels) -> float:
    """Area under the precision-recall curve; the step-sum AP estimator."""
    return average_precision(sl)


def mean_ap_detail(buckets):
    """(mean, per-bucket AP list with None for skips, skipped 1-based ids)."""
    values = []
    per_bucket = []
    skipped = []
    for b, sl in enumerate(buckets, start=1):
        if int(sl.label.sum()) == 0:
            warnings.warn(f"mean_ap: bucket {b} has no positives; skipped")
            per_bucket.append(None)
            skipped.append(b)
            continue
        v = average_precision(sl)
        per_bucket.append(v)
        values.append(v)
    if not values:
        raise ZeroPositivesError("mean_ap: no bucket has a positive example")
    return float(np.mean(values)), per_bucket, skipped


def mean_ap(buckets) -> float:
    """Mean over buckets of per-bucket AP (zero-positive buckets skipped)."""
    return mean_ap_detail(buckets)[0]


@dataclass
class BootstrapSummary:
    values: np.ndarray
    mean: float
    lo: float
    hi: float
    retries: int

    def boxplot(self) -> dict:
        """Quartiles and 1.5-IQR whiskers (clamped to observed values)."""
        q1, med, q3 = (float(v) for v in np.percentile(self.values, [25, 50, 75]))
        iqr = q3 - q1
        inside = self.values[(self.values >= q1 - 1.5 * iqr) & (self.values <= q3 + 1.5 * iqr)]
        return {
            "q1": q1,
            "median": med,
            "q3": q3,
            "whisker_lo": float(inside.min()),
            "whisker_hi": float(inside.max()),
            "mean": float(self.mean),
        }

    def to_dict(self) -> dict:
        return {
            "mean": float(self.mean),
            "ci_lo": float(self.lo),
            "ci_hi": float(self.hi),
            "retries": self.retries,
            "boxplot": self.boxplot(),
        }


def bootstrap_metric(fn, n_items: int, n_resamples: int = 1000, seed: int = 0) -> BootstrapSummary:
    """Resample indices with replacement; fn(idx) -> float or None (redraw)."""
    if n_resamples < 1:
        raise ValueError("bootstrap: n_resamples must be >= 1")
    root = RngStream(seed).split("bootstrap")
    values = np.empty(n_resamples)
    retries = 0
    for i in range(n_resamples):
        stream = root.split(f"resample{i}")
        while True:
            idx = stream.integers(0, n_items, n_items)
            v = fn(idx)
            if v is not None:
                values[i] = v
                break
            retries += 1
    lo, hi = np.percentile(values, [2.5, 97.5])
    return BootstrapSummary(values, float(values.mean()), float(lo), float(hi), retries)


def bootstrap(sl: ScoredLabels, metric_fn, n_resamples: int = 1000, seed: int = 0) -> BootstrapSummary:
    """Patient-level bootstrap of one metric on one score set."""

    def fn(idx):
        try:
            return metric_fn(sl.take(idx))
        except (SingleClassError, ZeroPositivesError):
            return None

    return bootstrap_metric(fn, len(sl), n_resamples, seed)


def mann_whitney_u(sample_a, sample_b) -> tuple:
    """(U of sample_a, two-sided p).

    Exact permutation enumeration when both samples have <= 8 elements;
    otherwise normal approximation with tie correction and continuity
    correction.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("mann_whitney_u: empty sample")
    na, nb = a.size, b.size
    combined = np.concatenate([a, b])
    ranks = _midranks(combined)
    u = float(ranks[:na].sum() - na * (na + 1) / 2.0)
    mu = na * nb / 2.0

    if na <= 8 and nb <= 8:
        total = 0
        extreme = 0
        dev = abs(u - mu)
        for pick in itertools.combinations(range(na + nb), na):
            u_perm = ranks[list(pick)].sum() - na * (na + 1) / 2.0
            total += 1
            if abs(u_perm - mu) >= dev - 1e-12:
                extreme += 1
        return u, extreme / total

    n = na + nb
    _, counts = np.unique(combined, return_counts=True)
    tie_term = float(((counts ** 3 - counts).sum()) / (n * (n - 1)))
    var = na * nb / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return u, 1.0
    dev = abs(u - mu)
    z = max(dev - 0.5, 0.0) / math.sqrt(var)
    return u, float(math.erfc(z / math.sqrt(2.0)))


@dataclass
class MetricsReport:
    mean_ap: float
    auc_roc: float
    auc_pr: float
    per_bucket_ap: list
    skipped_buckets: list
    n: int
    param_count: int | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mean_ap": self.mean_ap,
            "auc_roc": self.auc_roc,
            "auc_pr": self.auc_pr,
            "per_bucket_ap": self.per_bucket_ap,
            "skipped_buckets": self.skipped_buckets,
            "n": self.n,
            "param_count": self.param_count,
            **self.extra,
        }

    def to_json(self) -> str:
        import json

        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

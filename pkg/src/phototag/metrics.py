"""Average precision and mAP, the evaluation metrics for tag prediction.

AP here is the non-interpolated variant: the mean over relevant items of the
precision at each relevant item's rank, after sorting by score descending
with ties kept in original order (a stable sort, so permuting tied items
never changes the result).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NoRelevantItemsError(ValueError):
    """AP is undefined when nothing is relevant; such tags are excluded from mAP."""


def average_precision(scores, relevance) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    relevance = np.asarray(relevance, dtype=bool)
    if scores.shape != relevance.shape or scores.ndim != 1:
        raise ValueError("scores and relevance must be equal-length 1-d sequences")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if not relevance.any():
        raise NoRelevantItemsError("no relevant items")
    order = np.argsort(-scores, kind="stable")
    rel = relevance[order]
    hits = np.cumsum(rel)
    ranks = np.arange(1, len(rel) + 1)
    precisions = hits[rel] / ranks[rel]
    # Sequential accumulation in rank order keeps the result bit-identical to
    # a definitional implementation summing precision-at-rank terms in order.
    return sum(precisions.tolist()) / precisions.size


def precision_at_k(scores, relevance, k: int) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    relevance = np.asarray(relevance, dtype=bool)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > scores.size:
        raise ValueError("k exceeds item count")
    order = np.argsort(-scores, kind="stable")
    return float(relevance[order][:k].mean())


@dataclass
class RankedPredictions:
    """Per-tag scored items plus the ground-truth positive sets."""

    scores: dict[str, list[tuple[str, float]]] = field(default_factory=dict)
    truth: dict[str, set[str]] = field(default_factory=dict)

    def add_score(self, tag: str, item: str, score: float):
        self.scores.setdefault(tag, []).append((item, float(score)))

    def add_truth(self, tag: str, item: str):
        self.truth.setdefault(tag, set()).add(item)

    def tag_ap(self, tag: str) -> float:
        rows = self.scores.get(tag, [])
        positives = self.truth.get(tag, set())
        s = [score for _, score in rows]
        r = [item in positives for item, _ in rows]
        return average_precision(s, r)


def mean_ap(preds: RankedPredictions, tag_subset=None) -> float:
    """Unweighted mean of per-tag AP over tags with at least one positive.

    Tags without ground-truth positives are excluded rather than scored 0.
    """
    tags = sorted(preds.scores)
    if tag_subset is not None:
        subset = set(tag_subset)
        missing = subset - set(tags)
        if missing:
            raise KeyError(f"subset tags missing from predictions: {sorted(missing)[:5]}")
        tags = [t for t in tags if t in subset]
    aps = []
    for tag in tags:
        try:
            aps.append(preds.tag_ap(tag))
        except NoRelevantItemsError:
            continue
    if not aps:
        raise NoRelevantItemsError("no tag has ground-truth positives")
    return float(sum(aps) / len(aps))


# ---------------------------------------------------------------------------
# File formats: predictions are "item<TAB>tag<TAB>score" lines, ground truth
# is "item<TAB>tag" lines.

def load_predictions(pred_lines, truth_lines) -> RankedPredictions:
    preds = RankedPredictions()
    for line in pred_lines:
        line = line.rstrip("\n")
        if not line:
            continue
        item, tag, score = line.split("\t")
        preds.add_score(tag, item, float(score))
    for line in truth_lines:
        line = line.rstrip("\n")
        if not line:
            continue
        item, tag = line.split("\t")
        preds.add_truth(tag, item)
    return preds

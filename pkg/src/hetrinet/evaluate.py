"""Ranking and classification metrics plus the 100-negative test protocol."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.stats import rankdata

from .graph import Triplet

__all__ = [
    "MetricError",
    "ScoredTriplet",
    "RankedResult",
    "MetricsReport",
    "rank_from_scores",
    "rank_positive",
    "hit_at_n",
    "ndcg_at_n",
    "roc_auc",
    "aupr",
    "classification_metrics",
    "evaluate_model",
    "summarize_reports",
]

log = logging.getLogger(__name__)

DEFAULT_CUTOFFS = (1, 3, 5, 10, 15, 20)


class MetricError(ValueError):
    pass


class ScoredTriplet(NamedTuple):
    triplet: Triplet
    score: float
    truth: int


@dataclass(frozen=True)
class RankedResult:
    positive_score: float
    negative_scores: tuple
    rank: int


def rank_from_scores(positive_score: float, negative_scores) -> RankedResult:
    """1-based rank of the positive; ties with negatives count against it."""
    neg = np.asarray(negative_scores, dtype=np.float64).reshape(-1)
    if neg.size == 0:
        raise MetricError("ranking needs at least one negative")
    rank = 1 + int(np.count_nonzero(neg >= positive_score))
    return RankedResult(float(positive_score), tuple(neg.tolist()), rank)


def rank_positive(scorer: Callable, positive, negatives: Sequence) -> RankedResult:
    """Rank ``positive`` among ``negatives`` using ``scorer(list_of_triplets) -> scores``."""
    scores = np.asarray(scorer([positive, *negatives]), dtype=np.float64).reshape(-1)
    return rank_from_scores(scores[0], scores[1:])


def _ranks(results) -> np.ndarray:
    return np.asarray([r.rank if isinstance(r, RankedResult) else int(r) for r in results], dtype=np.int64)


def hit_at_n(results, n: int) -> float:
    """Fraction of results ranked within the top ``n``. Accepts results or bare ranks."""
    if n < 1:
        raise MetricError("n must be at least 1")
    ranks = _ranks(results)
    if ranks.size == 0:
        return 0.0
    return float(np.mean(ranks <= n))


def ndcg_at_n(results, n: int) -> float:
    """Mean of 1/log2(rank+1) over results, counting zero beyond the cutoff.

    One relevant item per list, so the ideal DCG is 1.
    """
    if n < 1:
        raise MetricError("n must be at least 1")
    ranks = _ranks(results)
    if ranks.size == 0:
        return 0.0
    gains = np.where(ranks <= n, 1.0 / np.log2(ranks + 1.0), 0.0)
    return float(np.mean(gains))


def _labels_scores(labels, scores):
    y = np.asarray(labels).reshape(-1).astype(np.int64)
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if y.shape != s.shape:
        raise MetricError(f"{y.size} labels but {s.size} scores")
    if not np.all(np.isin(y, (0, 1))):
        raise MetricError("labels must be 0 or 1")
    if not np.all(np.isfinite(s)):
        raise MetricError("scores must be finite")
    return y, s


def _unpack(scored, scores):
    if scores is None:
        scored = list(scored)
        return [t.truth for t in scored], [t.score for t in scored]
    return scored, scores


def roc_auc(labels, scores=None) -> float:
    """Mann-Whitney estimate of ROC-AUC; tied pairs count one half.

    Call as ``roc_auc(labels, scores)`` or ``roc_auc(list_of_ScoredTriplet)``.
    """
    y, s = _labels_scores(*_unpack(labels, scores))
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC-AUC needs both classes")
    r = rankdata(s)
    u = r[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def aupr(labels, scores=None) -> float:
    """Area under the precision-recall curve by step interpolation.

    Sum over distinct thresholds (descending) of the recall gained times the
    precision at that threshold.
    """
    y, s = _labels_scores(*_unpack(labels, scores))
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise MetricError("AUPR needs both classes")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    gained = np.diff(np.r_[0.0, recall])
    return float(np.sum(gained * precision))


def classification_metrics(labels, scores=None, threshold: float = 0.5) -> tuple[float, float, float]:
    """(f1, precision, recall) predicting positive when ``score >= threshold``.

    A zero denominator yields 0 and logs a warning.
    """
    y, s = _labels_scores(*_unpack(labels, scores))
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    if tp + fp == 0:
        log.warning("no predicted positives at threshold %g; precision set to 0", threshold)
        precision = 0.0
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        log.warning("no actual positives; recall set to 0")
        recall = 0.0
    else:
        recall = tp / (tp + fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return f1, precision, recall


@dataclass
class MetricsReport:
    f1: float
    precision: float
    recall: float
    roc_auc: float
    aupr: float
    hit_at: dict = field(default_factory=dict)
    ndcg_at: dict = field(default_factory=dict)
    threshold: float = 0.5
    n_test: int = 0
    n_negatives: int = 100

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hit_at"] = {str(k): v for k, v in self.hit_at.items()}
        d["ndcg_at"] = {str(k): v for k, v in self.ndcg_at.items()}
        return d

    def to_json(self) -> str:
        return json.dumps({"schema": "hetrinet-metrics/1", **self.to_dict()}, indent=2, sort_keys=True)

    def rows(self) -> list[tuple[str, float]]:
        out = [
            ("F1", self.f1),
            ("Precision", self.precision),
            ("Recall", self.recall),
            ("ROC-AUC", self.roc_auc),
            ("AUPR", self.aupr),
        ]
        out += [(f"hit@{n}", v) for n, v in self.hit_at.items()]
        out += [(f"NDCG@{n}", v) for n, v in self.ndcg_at.items()]
        return out

    def to_table(self) -> str:
        rows = self.rows()
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value:.4f}" for name, value in rows) + "\n"


def evaluate_model(
    scorer: Callable[[np.ndarray], np.ndarray],
    test: Sequence,
    counts: tuple[int, int, int],
    known_positives: Sequence,
    n_negatives: int = 100,
    cutoffs: Sequence[int] = DEFAULT_CUTOFFS,
    threshold: float = 0.5,
    seed: int = 0,
) -> MetricsReport:
    """Score held-out positives against sampled negatives.

    Ranking metrics put each test positive against ``n_negatives`` one-slot
    corruptions; classification metrics use the positives plus one corruption
    each. ``scorer`` maps an ``(n, 3)`` local-index array to decoder logits.
    Ranks, ROC-AUC and AUPR are computed on the logits, which order triplets
    exactly as the sigmoid scores do but do not round to 1.0 for confident
    predictions; precision/recall/F1 threshold ``sigmoid(logit)``.
    """
    from .train import positive_codes, sample_negatives

    test_arr = np.asarray([tuple(t)[:3] for t in test], dtype=np.int64).reshape(-1, 3)
    if len(test_arr) == 0:
        raise MetricError("empty test set")
    known = positive_codes(list(known_positives) + [tuple(t) for t in test_arr], counts)
    rng = np.random.default_rng([seed, 101])
    negs = np.stack([sample_negatives(test_arr, counts, known, rng) for _ in range(n_negatives)], axis=1)
    cls_neg = sample_negatives(test_arr, counts, known, rng)

    all_idx = np.concatenate([test_arr, negs.reshape(-1, 3), cls_neg])
    scores = np.asarray(scorer(all_idx), dtype=np.float64).reshape(-1)
    n = len(test_arr)
    pos_s = scores[:n]
    neg_s = scores[n : n + n * n_negatives].reshape(n, n_negatives)
    cls_s = scores[n + n * n_negatives :]

    ranks = [rank_from_scores(p, ns) for p, ns in zip(pos_s, neg_s)]
    labels = np.r_[np.ones(n, dtype=np.int64), np.zeros(n, dtype=np.int64)]
    both = np.r_[pos_s, cls_s]
    probs = 1.0 / (1.0 + np.exp(-np.clip(both, -500, 500)))
    f1, precision, recall = classification_metrics(labels, probs, threshold)
    cutoffs = sorted(set(int(c) for c in cutoffs))
    return MetricsReport(
        f1=f1,
        precision=precision,
        recall=recall,
        roc_auc=roc_auc(labels, both),
        aupr=aupr(labels, both),
        hit_at={c: hit_at_n(ranks, c) for c in cutoffs},
        ndcg_at={c: ndcg_at_n(ranks, c) for c in cutoffs},
        threshold=threshold,
        n_test=n,
        n_negatives=n_negatives,
    )


def summarize_reports(reports: Sequence[MetricsReport]) -> dict:
    """Mean and population standard deviation of every metric across repeats."""
    rows = [dict(r.rows()) for r in reports]
    out = {}
    for name in rows[0]:
        vals = np.array([r[name] for r in rows])
        out[name] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out


def summary_table(summary: Mapping) -> str:
    width = max(len(k) for k in summary)
    return "\n".join(
        f"{k:<{width}}  {v['mean']:.4f} +- {v['std']:.4f}" for k, v in summary.items()
    ) + "\n"

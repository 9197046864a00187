"""Exact-match triplet scoring with micro-averaged P/R/F1."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import SENTIMENTS, Triplet

BUCKETS = ("1", "2", "3", "4+")


@dataclass
class ScoreReport:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    per_sentiment: dict[str, "ScoreReport"] = field(default_factory=dict)
    buckets: dict[str, "ScoreReport"] = field(default_factory=dict)
    bucket_sizes: dict[str, int] = field(default_factory=dict)
    multi_triplet_ratio: float | None = None

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def add(self, pred: frozenset, gold: frozenset) -> None:
        hit = len(pred & gold)
        self.tp += hit
        self.fp += len(pred) - hit
        self.fn += len(gold) - hit

    def key_values(self, prefix: str = "") -> list[str]:
        lines = [f"{prefix}{k}={v}" for k, v in (
            ("tp", self.tp), ("fp", self.fp), ("fn", self.fn),
            ("precision", f"{self.precision:.6f}"), ("recall", f"{self.recall:.6f}"),
            ("f1", f"{self.f1:.6f}"))]
        for name, sub in self.per_sentiment.items():
            lines += sub.key_values(f"{prefix}sentiment.{name}.")
        for name, sub in self.buckets.items():
            lines.append(f"{prefix}bucket.{name}.sentences={self.bucket_sizes[name]}")
            lines += sub.key_values(f"{prefix}bucket.{name}.")
        if self.multi_triplet_ratio is not None:
            lines.append(f"{prefix}multi_triplet_ratio={self.multi_triplet_ratio:.6f}")
        return lines

    def text(self) -> str:
        out = [f"P={100 * self.precision:.2f} R={100 * self.recall:.2f} F1={100 * self.f1:.2f} "
               f"(tp={self.tp} fp={self.fp} fn={self.fn})"]
        for name, sub in self.per_sentiment.items():
            out.append(f"  {name:<4} P={100 * sub.precision:.2f} R={100 * sub.recall:.2f} "
                       f"F1={100 * sub.f1:.2f}")
        for name, sub in self.buckets.items():
            out.append(f"  {name:>2} triplets ({self.bucket_sizes[name]} sentences): "
                       f"F1={100 * sub.f1:.2f}")
        if self.multi_triplet_ratio is not None:
            out.append(f"  sentences with >1 triplet: {100 * self.multi_triplet_ratio:.2f}%")
        return "\n".join(out)


def _as_sets(items: Iterable[Iterable[Triplet]]) -> list[frozenset]:
    return [frozenset(x) for x in items]


def score(predictions: Sequence[Iterable[Triplet]], gold: Sequence[Iterable[Triplet]]) -> ScoreReport:
    """Micro P/R/F1 plus a per-sentiment breakdown."""
    if len(predictions) != len(gold):
        raise ValueError(f"{len(predictions)} predictions for {len(gold)} gold sentences")
    preds, golds = _as_sets(predictions), _as_sets(gold)
    report = ScoreReport()
    for s in SENTIMENTS:
        report.per_sentiment[s] = ScoreReport()
    for p, g in zip(preds, golds):
        report.add(p, g)
        for s in SENTIMENTS:
            report.per_sentiment[s].add(frozenset(t for t in p if t.sentiment == s),
                                        frozenset(t for t in g if t.sentiment == s))
    return report


def bucket_name(n_gold: int) -> str:
    return str(n_gold) if n_gold < 4 else "4+"


def bucket_by_triplet_count(predictions: Sequence[Iterable[Triplet]],
                            gold: Sequence[Iterable[Triplet]]) -> ScoreReport:
    """Global report with per-bucket sub-reports keyed by gold triplet count.

    Sentences without gold triplets go to a ``"0"`` bucket, which only
    appears when such sentences exist.
    """
    report = score(predictions, gold)
    preds, golds = _as_sets(predictions), _as_sets(gold)
    names = (["0"] if any(not g for g in golds) else []) + list(BUCKETS)
    report.buckets = {n: ScoreReport() for n in names}
    report.bucket_sizes = {n: 0 for n in names}
    for p, g in zip(preds, golds):
        name = bucket_name(len(g))
        report.buckets[name].add(p, g)
        report.bucket_sizes[name] += 1
    report.multi_triplet_ratio = (sum(len(g) > 1 for g in golds) / len(golds)) if golds else 0.0
    return report

"""From logits to triplets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import BIO_TAGS, TABLE_LABELS, Span, Triplet, cset_cells


@dataclass
class Prediction:
    tags: list[str] = field(default_factory=list)
    targets: list[Span] = field(default_factory=list)
    opinions: list[Span] = field(default_factory=list)
    triplets: list[Triplet] = field(default_factory=list)


def extract_spans(tags: Sequence[str]) -> tuple[list[Span], list[Span]]:
    """Decode BIO tags; a stray ``I-X`` starts a new span of type X."""
    spans = {"Target": [], "Opinion": []}
    kind, start = None, 0
    for i, tag in enumerate(list(tags) + ["O"]):
        prefix, _, tkind = tag.partition("-")
        continues = prefix == "I" and tkind == kind
        if kind is not None and not continues:
            spans[kind].append(Span(start, i - 1))
            kind = None
        if prefix == "B" or (prefix == "I" and not continues):
            kind, start = tkind, i
    return spans["Target"], spans["Opinion"]


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def aggregate_sentiment(table_probs: np.ndarray, target: Span, opinion: Span) -> str:
    """Label with the largest probability mass over the pair's cells (ties: lowest index)."""
    if target.overlaps(opinion):
        raise ValueError(f"target {target} and opinion {opinion} overlap")
    rows, cols = zip(*cset_cells(target, opinion))
    mass = table_probs[list(rows), list(cols)].sum(axis=0)
    return TABLE_LABELS[int(np.argmax(mass))]


def decode_triplets(seq_logits: np.ndarray, table_logits: np.ndarray) -> Prediction:
    """Decode one sentence's (N, 5) and (N, N, 4) logits."""
    tags = [BIO_TAGS[i] for i in np.argmax(seq_logits, axis=-1)]
    targets, opinions = extract_spans(tags)
    pred = Prediction(tags=tags, targets=targets, opinions=opinions)
    if not targets or not opinions:
        return pred
    probs = softmax_np(np.asarray(table_logits, dtype=np.float64))
    for t in targets:
        for o in opinions:
            label = aggregate_sentiment(probs, t, o)
            if label != "N/A":
                pred.triplets.append(Triplet(t, label, o))
    return pred


def label_grid(table_logits: np.ndarray) -> list[list[str]]:
    """Per-cell argmax labels."""
    return [[TABLE_LABELS[i] for i in row] for row in np.argmax(table_logits, axis=-1)]


def oracle_logits(gold_tags: Sequence[str], gold_table: np.ndarray,
                  scale: float = 20.0) -> tuple[np.ndarray, np.ndarray]:
    """One-hot (times ``scale``) logits that reproduce the gold labels."""
    n = len(gold_tags)
    seq = np.zeros((n, len(BIO_TAGS)))
    seq[np.arange(n), [BIO_TAGS.index(t) for t in gold_tags]] = scale
    table = np.zeros((n, n, len(TABLE_LABELS)))
    m_idx, n_idx = np.indices((n, n))
    table[m_idx, n_idx, gold_table] = scale
    return seq, table

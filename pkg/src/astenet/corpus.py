"""Benchmark data: parsing, gold labels, vocabularies, embeddings, batches.

Dataset lines look like::

    low price and performance####[([1], [0], 'POS'), ([3], [0], 'NEG')]

Each tuple is (target token indices, opinion token indices, sentiment) with
0-based, contiguous, ascending indices.
"""

from __future__ import annotations

import ast
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)

SEPARATOR = "####"
MAX_LEN = 120

BIO_TAGS = ("O", "B-Target", "B-Opinion", "I-Target", "I-Opinion")
TABLE_LABELS = ("N/A", "POS", "NEG", "NEU")
SENTIMENTS = ("POS", "NEG", "NEU")
TAG_INDEX = {t: i for i, t in enumerate(BIO_TAGS)}
LABEL_INDEX = {t: i for i, t in enumerate(TABLE_LABELS)}

PAD, UNK = 0, 1


class DataError(ValueError):
    pass


class ParseError(DataError):
    pass


class Span(NamedTuple):
    start: int
    end: int  # inclusive

    def __len__(self) -> int:
        return self.end - self.start + 1

    def indices(self) -> list[int]:
        return list(range(self.start, self.end + 1))

    def overlaps(self, other: "Span") -> bool:
        return self.start <= other.end and other.start <= self.end


class Triplet(NamedTuple):
    target: Span
    sentiment: str
    opinion: Span


@dataclass
class Sentence:
    tokens: list[str]
    triplets: list[Triplet]
    gold_tags: list[str] | None = None
    gold_table: np.ndarray | None = None  # (N, N) ints into TABLE_LABELS
    sid: str = ""

    def __len__(self) -> int:
        return len(self.tokens)

    def triplet_set(self) -> frozenset[Triplet]:
        return frozenset(self.triplets)


# ------------------------------------------------------------------ parsing

def _to_span(idx, n_tokens: int, where: str) -> Span:
    if not isinstance(idx, (list, tuple)) or not idx or not all(isinstance(i, int) for i in idx):
        raise DataError(f"{where}: index list must be a non-empty list of ints, got {idx!r}")
    if list(idx) != list(range(idx[0], idx[0] + len(idx))):
        raise DataError(f"{where}: non-contiguous index list {list(idx)}")
    if idx[0] < 0 or idx[-1] >= n_tokens:
        raise DataError(f"{where}: index {list(idx)} out of range for {n_tokens} tokens")
    return Span(idx[0], idx[-1])


def parse_line(line: str, where: str = "line") -> Sentence:
    line = line.rstrip("\r\n")
    if SEPARATOR not in line:
        raise ParseError(f"{where}: missing '{SEPARATOR}' separator")
    text, _, payload = line.partition(SEPARATOR)
    tokens = text.strip().split(" ")
    if tokens == [""]:
        raise ParseError(f"{where}: empty sentence")
    try:
        raw = ast.literal_eval(payload.strip())
    except (ValueError, SyntaxError) as exc:
        raise ParseError(f"{where}: malformed triplet list ({exc})") from None
    if not isinstance(raw, list):
        raise ParseError(f"{where}: triplet payload is not a list")
    triplets = []
    for item in raw:
        if not (isinstance(item, tuple) and len(item) == 3):
            raise ParseError(f"{where}: malformed triplet {item!r}")
        t_idx, o_idx, senti = item
        if senti not in SENTIMENTS:
            raise ParseError(f"{where}: unknown sentiment {senti!r}")
        triplets.append(Triplet(_to_span(t_idx, len(tokens), where), senti,
                                _to_span(o_idx, len(tokens), where)))
    return Sentence(tokens=tokens, triplets=triplets, sid=where)


def parse_dataset(path) -> list[Sentence]:
    """Parse every line of ``path``; any bad line raises with its line number."""
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            out.append(parse_line(line, f"{path}:{no}"))
    return out


def load_split(path, strict_format: bool = False) -> tuple[list[Sentence], list[tuple[str, str]]]:
    """Parse and fully prepare a split, collecting rejected lines instead of raising.

    Returns ``(valid_sentences, [(location, reason), ...])``.  A sentence is
    valid when it parses, its spans are contiguous and non-overlapping, it
    fits ``MAX_LEN`` and its table has no conflicting cells.  With
    ``strict_format`` a line that does not parse at all still raises.
    """
    path = Path(path)
    good, bad = [], []
    with path.open(encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{no}"
            try:
                sent = parse_line(line, where)
                prepare(sent, on_conflict="raise")
            except ParseError as exc:
                if strict_format:
                    raise
                bad.append((where, str(exc)))
                continue
            except DataError as exc:
                bad.append((where, str(exc)))
                continue
            good.append(sent)
    return good, bad


def format_triplets(triplets: Iterable[Triplet]) -> str:
    parts = []
    for t in sorted(triplets, key=lambda t: (t.target, t.opinion, t.sentiment)):
        parts.append(f"({t.target.indices()}, {t.opinion.indices()}, '{t.sentiment}')")
    return "[" + ", ".join(parts) + "]"


def format_line(tokens: Sequence[str], triplets: Iterable[Triplet]) -> str:
    return " ".join(tokens) + SEPARATOR + format_triplets(triplets)


# ------------------------------------------------------------- gold labels

def _check_spans(sentence: Sentence) -> None:
    n = len(sentence)
    spans: dict[Span, tuple[str, Triplet]] = {}
    for trip in sentence.triplets:
        for kind, span in (("Target", trip.target), ("Opinion", trip.opinion)):
            if not 0 <= span.start <= span.end < n:
                raise DataError(f"{sentence.sid}: span {span} out of range for {n} tokens")
            if span in spans and spans[span][0] == kind:
                continue
            for other, (okind, otrip) in spans.items():
                if other.overlaps(span):
                    raise DataError(
                        f"{sentence.sid}: overlapping spans {okind} {other} in {otrip} "
                        f"and {kind} {span} in {trip}")
            spans[span] = (kind, trip)


def make_bio_tags(sentence: Sentence) -> list[str]:
    _check_spans(sentence)
    tags = ["O"] * len(sentence)
    for trip in sentence.triplets:
        for kind, span in (("Target", trip.target), ("Opinion", trip.opinion)):
            tags[span.start] = f"B-{kind}"
            for i in range(span.start + 1, span.end + 1):
                tags[i] = f"I-{kind}"
    return tags


def cset_cells(target: Span, opinion: Span) -> list[tuple[int, int]]:
    """Cells covered by a target/opinion pair, in both orientations."""
    cells = []
    for m in range(target.start, target.end + 1):
        for n in range(opinion.start, opinion.end + 1):
            cells.append((m, n))
            cells.append((n, m))
    return cells


def make_sentiment_table(sentence: Sentence, on_conflict: str = "warn") -> np.ndarray:
    """N x N label-index table; later triplets win conflicting cells.

    ``on_conflict`` is ``"warn"`` (log and overwrite) or ``"raise"``.
    """
    n = len(sentence)
    table = np.zeros((n, n), dtype=np.int64)
    for trip in sentence.triplets:
        label = LABEL_INDEX[trip.sentiment]
        for m, k in cset_cells(trip.target, trip.opinion):
            old = table[m, k]
            if old != 0 and old != label:
                msg = (f"{sentence.sid}: cell ({m},{k}) relabelled "
                       f"{TABLE_LABELS[old]} -> {trip.sentiment}")
                if on_conflict == "raise":
                    raise DataError(msg)
                log.warning(msg)
            table[m, k] = label
    return table


def prepare(sentence: Sentence, on_conflict: str = "warn") -> Sentence:
    """Fill ``gold_tags`` and ``gold_table`` in place."""
    if len(sentence) > MAX_LEN:
        raise DataError(f"{sentence.sid}: {len(sentence)} tokens exceeds the maximum of {MAX_LEN}")
    sentence.gold_tags = make_bio_tags(sentence)
    sentence.gold_table = make_sentiment_table(sentence, on_conflict)
    return sentence


# -------------------------------------------------------------- vocabulary

@dataclass
class Vocabulary:
    index: dict[str, int] = field(default_factory=dict)
    tokens: list[str] = field(default_factory=lambda: ["<pad>", "<unk>"])

    def __len__(self) -> int:
        return len(self.tokens)

    def add(self, token: str) -> int:
        if token not in self.index:
            self.index[token] = len(self.tokens)
            self.tokens.append(token)
        return self.index[token]

    def lookup(self, token: str) -> int:
        return self.index.get(token, UNK)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.lookup(t) for t in tokens]


def build_vocab(sentences: Iterable[Sentence]) -> Vocabulary:
    vocab = Vocabulary()
    for s in sentences:
        for tok in s.tokens:
            vocab.add(tok)
    return vocab


def load_embeddings(path, vocab: Vocabulary, d_w: int) -> np.ndarray:
    """|V| x d_w matrix of pretrained vectors; rows without a vector stay zero.

    A token missing from the file falls back to its lowercase form.
    """
    matrix = np.zeros((len(vocab), d_w), dtype=np.float64)
    wanted = {}
    for tok, idx in vocab.index.items():
        wanted.setdefault(tok, []).append(idx)
    lowered: dict[str, list[int]] = {}
    for tok, idx in vocab.index.items():
        lowered.setdefault(tok.lower(), []).append(idx)
    exact_done = set()
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            tok, _, rest = line.partition(" ")
            fields = rest.split(" ")
            if len(fields) != d_w:
                raise ParseError(f"{path}:{no}: expected {d_w} values, found {len(fields)}")
            hit_exact = tok in wanted
            hit_lower = tok in lowered
            if not (hit_exact or hit_lower):
                continue
            try:
                vec = np.array([float(x) for x in fields])
            except ValueError:
                raise ParseError(f"{path}:{no}: non-numeric embedding value") from None
            if hit_exact:
                for idx in wanted[tok]:
                    matrix[idx] = vec
                    exact_done.add(idx)
            if hit_lower:
                for idx in lowered[tok]:
                    if idx not in exact_done:
                        matrix[idx] = vec
    matrix[PAD] = 0.0
    matrix[UNK] = 0.0
    return matrix


# ------------------------------------------------------------------ batches

@dataclass
class Batch:
    sentences: list[Sentence]
    token_ids: np.ndarray    # (B, N) int
    mask: np.ndarray         # (B, N) bool, real tokens
    table_mask: np.ndarray   # (B, N, N) bool, real (m, n) pairs
    gold_tags: np.ndarray    # (B, N) int, 0 at padding
    gold_table: np.ndarray   # (B, N, N) int, 0 at padding

    @property
    def lengths(self) -> list[int]:
        return [len(s) for s in self.sentences]


def make_batch(sentences: Sequence[Sentence], vocab: Vocabulary) -> Batch:
    size = len(sentences)
    n = max(len(s) for s in sentences)
    ids = np.zeros((size, n), dtype=np.int64)
    mask = np.zeros((size, n), dtype=bool)
    tags = np.zeros((size, n), dtype=np.int64)
    table = np.zeros((size, n, n), dtype=np.int64)
    for b, s in enumerate(sentences):
        k = len(s)
        ids[b, :k] = vocab.encode(s.tokens)
        mask[b, :k] = True
        if s.gold_tags is not None:
            tags[b, :k] = [TAG_INDEX[t] for t in s.gold_tags]
        if s.gold_table is not None:
            table[b, :k, :k] = s.gold_table
    table_mask = mask[:, :, None] & mask[:, None, :]
    return Batch(list(sentences), ids, mask, table_mask, tags, table)


def batchify(sentences: Sequence[Sentence], batch_size: int, vocab: Vocabulary,
             rng: np.random.Generator | None = None) -> list[Batch]:
    """Split into padded batches, shuffled by ``rng`` when one is given."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(sentences))
    if rng is not None:
        order = rng.permutation(len(sentences))
    return [make_batch([sentences[i] for i in order[lo:lo + batch_size]], vocab)
            for lo in range(0, len(order), batch_size)]


def batches_per_epoch(n_sentences: int, batch_size: int) -> int:
    return max(1, math.ceil(n_sentences / batch_size))

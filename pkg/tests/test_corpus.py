import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from astenet import corpus
from astenet.corpus import (DataError, ParseError, Sentence, Span, Triplet, batchify,
                            build_vocab, load_embeddings, make_bio_tags, make_sentiment_table,
                            parse_dataset, parse_line, prepare)

FIG1_S2 = "low price and performance####[([1], [0], 'POS'), ([3], [0], 'NEG')]"


def brute_force_table(n, triplets):
    """Label every cell by testing membership in each triplet's cell set."""
    table = [[0] * n for _ in range(n)]
    for t in triplets:
        a, b = t.target
        c, d = t.opinion
        for m in range(n):
            for k in range(n):
                if (a <= m <= b and c <= k <= d) or (c <= m <= d and a <= k <= b):
                    table[m][k] = corpus.LABEL_INDEX[t.sentiment]
    return np.array(table)


def random_sentence(rng, max_len=12, max_triplets=4):
    """Random sentence with disjoint spans (targets may be shared)."""
    n = int(rng.integers(2, max_len + 1))
    free = list(range(n))
    spans = []
    for _ in range(int(rng.integers(0, 2 * max_triplets + 1))):
        start = int(rng.integers(0, n))
        length = int(rng.integers(1, 4))
        sp = Span(start, min(n - 1, start + length - 1))
        if all(i in free for i in sp.indices()):
            spans.append(sp)
            free = [i for i in free if i not in sp.indices()]
    triplets = []
    if len(spans) >= 2:
        targets = spans[: len(spans) // 2]
        opinions = spans[len(spans) // 2:]
        seen = set()
        for _ in range(int(rng.integers(1, max_triplets + 1))):
            t = targets[int(rng.integers(0, len(targets)))]
            o = opinions[int(rng.integers(0, len(opinions)))]
            if (t, o) in seen:
                continue
            seen.add((t, o))
            triplets.append(Triplet(t, corpus.SENTIMENTS[int(rng.integers(0, 3))], o))
    return Sentence([f"w{i}" for i in range(n)], triplets)


def test_parse_fig1_sentence():
    s = parse_line(FIG1_S2)
    assert s.tokens == ["low", "price", "and", "performance"]
    assert s.triplets == [Triplet(Span(1, 1), "POS", Span(0, 0)),
                          Triplet(Span(3, 3), "NEG", Span(0, 0))]


def test_parse_multi_token_span():
    tokens = " ".join(f"t{i}" for i in range(20))
    s = parse_line(tokens + "####[([16, 17], [15], 'POS')]")
    assert s.triplets[0].target == Span(16, 17)


def test_parse_errors(tmp_path):
    with pytest.raises(ParseError):
        parse_line("no separator here")
    with pytest.raises(DataError, match="non-contiguous"):
        parse_line("a b c d####[([0, 2], [3], 'POS')]")
    with pytest.raises(DataError, match="out of range"):
        parse_line("a b####[([5], [0], 'POS')]")
    with pytest.raises(ParseError):
        parse_line("a b####[([1], [0], 'GOOD')]")
    path = tmp_path / "bad.txt"
    path.write_text(FIG1_S2 + "\n" + "broken line\n")
    with pytest.raises(ParseError, match=r"bad.txt:2"):
        parse_dataset(path)


def test_format_line_round_trip():
    s = parse_line(FIG1_S2)
    assert corpus.format_line(s.tokens, s.triplets) == FIG1_S2
    again = parse_line(corpus.format_line(s.tokens, []))
    assert again.triplets == []


def test_bio_tags_examples():
    assert make_bio_tags(parse_line(FIG1_S2)) == ["B-Opinion", "B-Target", "O", "B-Target"]
    assert make_bio_tags(Sentence(["a", "b"], [])) == ["O", "O"]
    tokens = [f"t{i}" for i in range(20)]
    tags = make_bio_tags(Sentence(tokens, [Triplet(Span(16, 17), "POS", Span(15, 15))]))
    assert tags[16] == "B-Target" and tags[17] == "I-Target" and tags[15] == "B-Opinion"


def test_bio_tags_reject_overlaps():
    bad = Sentence(list("abcd"), [Triplet(Span(0, 1), "POS", Span(1, 2))])
    with pytest.raises(DataError, match="overlapping"):
        make_bio_tags(bad)
    # the same span used as target and as opinion
    bad2 = Sentence(list("abcd"), [Triplet(Span(0, 0), "POS", Span(2, 2)),
                                   Triplet(Span(2, 2), "NEG", Span(3, 3))])
    with pytest.raises(DataError):
        make_bio_tags(bad2)


def test_sentiment_table_fig1():
    table = make_sentiment_table(parse_line(FIG1_S2))
    expected = brute_force_table(4, parse_line(FIG1_S2).triplets)
    assert np.array_equal(table, expected)
    labelled = {(m, n): corpus.TABLE_LABELS[table[m, n]] for m in range(4) for n in range(4)
                if table[m, n]}
    assert labelled == {(1, 0): "POS", (0, 1): "POS", (3, 0): "NEG", (0, 3): "NEG"}


def test_sentiment_table_empty_and_cell_count():
    assert not make_sentiment_table(Sentence(list("abc"), [])).any()
    s = Sentence(list("abcde"), [Triplet(Span(0, 1), "NEU", Span(3, 3))])
    assert (make_sentiment_table(s) != 0).sum() == 4 == (brute_force_table(5, s.triplets) != 0).sum()


def test_conflicting_cells_later_triplet_wins(caplog):
    s = Sentence(list("abc"), [Triplet(Span(0, 0), "POS", Span(2, 2)),
                               Triplet(Span(0, 0), "NEG", Span(2, 2))], sid="s7")
    with caplog.at_level(logging.WARNING):
        table = make_sentiment_table(s)
    assert table[0, 2] == corpus.LABEL_INDEX["NEG"]
    assert "s7" in caplog.text
    with pytest.raises(DataError):
        make_sentiment_table(s, on_conflict="raise")


def test_max_length_rejected():
    s = Sentence(["w"] * (corpus.MAX_LEN + 1), [])
    with pytest.raises(DataError, match="exceeds"):
        prepare(s)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_table_properties(seed):
    s = random_sentence(np.random.default_rng(seed))
    table = make_sentiment_table(s)
    assert np.array_equal(table, table.T)
    assert np.array_equal(table, brute_force_table(len(s), s.triplets))
    for m, k in zip(*np.nonzero(table)):
        assert any((t.target.start <= m <= t.target.end and t.opinion.start <= k <= t.opinion.end)
                   or (t.opinion.start <= m <= t.opinion.end and t.target.start <= k <= t.target.end)
                   for t in s.triplets)


def test_vocab_and_embeddings(tmp_path):
    sents = [parse_line(FIG1_S2), parse_line("Nice price####[([1], [0], 'POS')]")]
    vocab = build_vocab(sents)
    assert vocab.tokens[:2] == ["<pad>", "<unk>"]
    assert vocab.lookup("low") == 2 and vocab.lookup("unseen") == corpus.UNK
    assert build_vocab(sents).index == vocab.index
    emb = tmp_path / "emb.txt"
    emb.write_text("low 0.5 -1.25 2\nprice 1 2 3\nnice 9 8 7\nzzz 0 0 0\n")
    m = load_embeddings(emb, vocab, 3)
    assert m.shape == (len(vocab), 3)
    assert np.array_equal(m[vocab.lookup("low")], [0.5, -1.25, 2.0])
    assert np.array_equal(m[vocab.lookup("Nice")], [9.0, 8.0, 7.0])  # lowercase fallback
    assert not m[vocab.lookup("performance")].any()
    assert not m[corpus.PAD].any() and not m[corpus.UNK].any()
    emb.write_text("low 0.5 -1.25 2\nprice 1 2\n")
    with pytest.raises(ParseError, match=r"emb.txt:2"):
        load_embeddings(emb, vocab, 3)


def test_batchify_sizes_and_masks(rng):
    sents = [prepare(Sentence(["w"] * k, [])) for k in (3, 5, 2, 4, 1, 6, 2)]
    vocab = build_vocab(sents)
    batches = batchify(sents, 6, vocab, rng)
    assert [len(b.sentences) for b in batches] == [6, 1]
    pair = batchify(sents[:2], 6, vocab)[0]
    assert pair.token_ids.shape == (2, 5)
    assert pair.mask.sum(axis=1).tolist() == [3, 5]
    assert pair.table_mask.sum(axis=(1, 2)).tolist() == [9, 25]
    with pytest.raises(ValueError):
        batchify(sents, 0, vocab)


def test_batchify_shuffle_is_seeded():
    sents = [prepare(Sentence([f"w{k}"], [])) for k in range(20)]
    vocab = build_vocab(sents)
    order = lambda seed: [s.tokens[0] for b in batchify(sents, 6, vocab, np.random.default_rng(seed))
                          for s in b.sentences]
    assert order(3) == order(3)
    assert sorted(order(3)) == sorted(s.tokens[0] for s in sents)


def test_load_split_collects_rejections(tmp_path):
    path = tmp_path / "split.txt"
    path.write_text(FIG1_S2 + "\n" + "a b c d####[([0, 2], [3], 'POS')]\n"
                    + "a b c####[([0], [2], 'POS'), ([0], [2], 'NEG')]\n")
    good, bad = corpus.load_split(path)
    assert len(good) == 1 and good[0].gold_tags is not None
    assert [where.rsplit(":", 1)[1] for where, _ in bad] == ["2", "3"]

import pytest
from hypothesis import given, settings, strategies as st

from astenet.corpus import SENTIMENTS, Span, Triplet
from astenet.evaluate import ScoreReport, bucket_by_triplet_count, bucket_name, score


def trip(t, o, s="POS"):
    return Triplet(Span(t, t), s, Span(o, o))


triplets = st.builds(trip, st.integers(0, 5), st.integers(0, 5), st.sampled_from(SENTIMENTS))
corpora = st.lists(st.tuples(st.frozensets(triplets, max_size=5), st.frozensets(triplets, max_size=5)),
                   min_size=1, max_size=12)


def test_perfect_and_empty():
    gold = [[trip(0, 1)], [trip(2, 3, "NEG"), trip(4, 3, "NEG")]]
    r = score(gold, gold)
    assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)
    r = score([[], []], gold)
    assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)
    assert ScoreReport().f1 == 0.0


def test_hand_counted_half():
    gold = [[trip(0, 1), trip(2, 3)]]
    pred = [[trip(0, 1), trip(2, 3, "NEG")]]
    r = score(pred, gold)
    assert (r.tp, r.fp, r.fn) == (1, 1, 1)
    assert (r.precision, r.recall, r.f1) == (0.5, 0.5, 0.5)
    assert r.per_sentiment["POS"].tp == 1 and r.per_sentiment["NEG"].fp == 1


def test_exact_match_requires_whole_spans():
    gold = [[Triplet(Span(0, 1), "POS", Span(3, 3))]]
    assert score([[Triplet(Span(0, 0), "POS", Span(3, 3))]], gold).tp == 0
    assert score([[Triplet(Span(0, 1), "POS", Span(3, 4))]], gold).tp == 0


def test_length_mismatch():
    with pytest.raises(ValueError):
        score([[]], [[], []])


def test_buckets_examples():
    r = bucket_by_triplet_count([[trip(0, 1)]] * 3, [[trip(0, 1)]] * 3)
    assert r.multi_triplet_ratio == 0.0
    gold = [[trip(0, 1)], [trip(0, 1), trip(2, 3), trip(4, 5)]]
    r = bucket_by_triplet_count(gold, gold)
    assert r.bucket_sizes == {"1": 1, "2": 0, "3": 1, "4+": 0}
    assert r.multi_triplet_ratio == 0.5
    assert [bucket_name(k) for k in (1, 2, 3, 4, 9)] == ["1", "2", "3", "4+", "4+"]
    r = bucket_by_triplet_count([[], [trip(0, 1)]], [[], [trip(0, 1)]])
    assert r.bucket_sizes["0"] == 1


def test_key_values_and_text():
    gold = [[trip(0, 1)], [trip(0, 1), trip(2, 3)]]
    r = bucket_by_triplet_count(gold, gold)
    kv = dict(line.split("=", 1) for line in r.key_values())
    assert kv["f1"] == "1.000000" and kv["bucket.2.sentences"] == "1"
    assert kv["multi_triplet_ratio"] == "0.500000"
    assert "F1=100.00" in r.text()


@settings(max_examples=200, deadline=None)
@given(corpora, st.randoms(use_true_random=False))
def test_micro_pooling_and_permutation_invariance(pairs, rnd):
    preds = [p for p, _ in pairs]
    gold = [g for _, g in pairs]
    r = bucket_by_triplet_count(preds, gold)
    for attr in ("tp", "fp", "fn"):
        assert sum(getattr(b, attr) for b in r.buckets.values()) == getattr(r, attr)
        assert sum(getattr(s, attr) for s in r.per_sentiment.values()) == getattr(r, attr)
    order = list(range(len(pairs)))
    rnd.shuffle(order)
    shuffled = score([list(preds[i])[::-1] for i in order], [list(gold[i]) for i in order])
    assert (shuffled.tp, shuffled.fp, shuffled.fn) == (r.tp, r.fp, r.fn)
    for value in (r.precision, r.recall, r.f1):
        assert 0.0 <= value <= 1.0
    self_score = score(gold, gold)
    assert self_score.fp == self_score.fn == 0

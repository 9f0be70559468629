"""Log parsing, serialization round trips and the synthetic generator."""

import numpy as np
import pytest

from privrec.dataset import (
    Impression,
    ParseError,
    SyntheticSpec,
    generate_synthetic,
    parse_behaviors,
    parse_news,
    sample_negatives,
    serialize_behaviors,
    split_by_time,
    write_synthetic,
)
from privrec.pipeline import corpus_from_synthetic, corpus_from_tsv

GOOD_LINE = "I1\tU1\t100\tN1 N2\tN3-1 N4-0"


def test_parse_behaviors_basic():
    imps, histories, skipped = parse_behaviors([GOOD_LINE])
    assert skipped == 0
    assert len(imps) == 1
    imp = imps[0]
    assert imp.impression_id == "I1"
    assert imp.user_id == "U1"
    assert imp.timestamp == 100
    assert imp.displayed == [("N3", 1), ("N4", 0)]
    assert histories["U1"] == ["N1", "N2"]


def test_parse_behaviors_history_cap():
    hist = " ".join(f"N{i}" for i in range(60))
    line = f"I1\tU1\t0\t{hist}\tN99-1"
    _, histories, _ = parse_behaviors([line])
    assert len(histories["U1"]) == 50
    assert histories["U1"][-1] == "N59"


@pytest.mark.parametrize(
    "bad",
    [
        "I1\tU1\t100\tN1",                      # too few fields
        "I1\tU1\t100\tN1\tN3-2",                # bad label
        "I1\tU1\t100\tN1\tN3",                  # missing label
        "I1\tU1\t100\tN1\t",                    # no displayed news
    ],
)
def test_parse_behaviors_malformed(bad):
    with pytest.raises(ParseError):
        parse_behaviors([bad])
    imps, _, skipped = parse_behaviors([bad, GOOD_LINE], continue_on_error=True)
    assert skipped == 1
    assert len(imps) == 1


def test_parse_behaviors_skips_blank_lines():
    imps, _, _ = parse_behaviors(["", GOOD_LINE, "\n"])
    assert len(imps) == 1


def test_serialize_round_trip():
    imps, histories, _ = parse_behaviors([GOOD_LINE])
    lines = serialize_behaviors(imps, histories)
    imps2, histories2, _ = parse_behaviors(lines)
    assert histories2 == histories
    assert [i.displayed for i in imps2] == [i.displayed for i in imps]


def test_parse_news():
    lines = [
        "N1\tsports\tsoccer\tBig Match Tonight!",
        "N2\ttech\tai\tnew chips ship",
    ]
    articles, vocab = parse_news(lines)
    assert set(articles) == {"N1", "N2"}
    assert articles["N1"].title == "Big Match Tonight!"
    assert len(articles["N1"].tokens) == 3
    with pytest.raises(ParseError):
        parse_news(lines + ["N1\tx\ty\tduplicate"])
    with pytest.raises(ParseError):
        parse_news(["N3\tonly three\tfields"])


def test_parse_news_unknown_tokens_map_to_unk():
    lines = ["N1\tc\ts\thello world"]
    _, vocab = parse_news(lines)
    articles2, _ = parse_news(["N2\tc\ts\thello mars"], vocab=vocab)
    toks = articles2["N2"].tokens
    assert toks[0] == vocab.lookup("hello")
    assert toks[1] == 1  # UNK


def test_split_by_time():
    imps = [Impression(f"I{t}", "U1", t, [("N1", 1)]) for t in range(5)]
    train, evals = split_by_time(imps, 3)
    assert [i.timestamp for i in train] == [0, 1, 2]
    assert [i.timestamp for i in evals] == [3, 4]


def test_sample_negatives():
    displayed = [("N1", 1), ("N2", 0), ("N3", 0), ("N4", 0)]
    rng = np.random.default_rng(0)
    negs = sample_negatives(displayed, 2, rng)
    assert len(negs) == len(set(negs)) == 2
    assert set(negs) <= {"N2", "N3", "N4"}
    with pytest.raises(ValueError):
        sample_negatives(displayed, 4, rng)


def test_synthetic_determinism(small_data):
    again = generate_synthetic(small_data.spec)
    assert again.user_topics == small_data.user_topics
    assert again.histories == small_data.histories
    assert [i.displayed for i in again.impressions] == [
        i.displayed for i in small_data.impressions
    ]
    other = generate_synthetic(SyntheticSpec(
        **{**small_data.spec.__dict__, "seed": small_data.spec.seed + 1}
    ))
    assert other.histories != small_data.histories


def test_synthetic_planted_structure(small_data):
    # every click stays inside the user's planted topics
    for uid, clicked in small_data.histories.items():
        topics = set(small_data.user_topics[uid])
        assert all(small_data.news_topics[nid] in topics for nid in clicked)
    # train timestamps all precede eval timestamps
    last_train = max(i.timestamp for i in small_data.train_impressions)
    first_eval = min(i.timestamp for i in small_data.eval_impressions)
    assert last_train < first_eval


def test_synthetic_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(n_topics=2, topics_per_user=3)
    with pytest.raises(ValueError):
        SyntheticSpec(clicks_per_user=10, history_clicks=10)


def test_write_synthetic_round_trip(tmp_path, small_data, small_corpus):
    write_synthetic(small_data, tmp_path)
    boundary = min(i.timestamp for i in small_data.eval_impressions)
    corpus = corpus_from_tsv(
        tmp_path / "news.tsv", tmp_path / "behaviors.tsv", boundary
    )
    assert corpus.news_ids == small_corpus.news_ids
    assert corpus.histories == small_corpus.histories
    assert set(corpus.train_by_user) == set(small_corpus.train_by_user)
    for uid in corpus.train_by_user:
        got = [i.displayed for i in corpus.train_by_user[uid]]
        want = [i.displayed for i in small_corpus.train_by_user[uid]]
        assert got == want
    # token ids agree because both vocabularies grow in corpus order
    assert corpus.titles == small_corpus.titles

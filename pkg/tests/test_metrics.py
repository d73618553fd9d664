import math
from itertools import combinations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from adaptroute.metrics import MetricKind, bleu, exact_match, lcs_length, rouge_l, rouge_n, score, tokenize

tokens = st.lists(st.sampled_from("a b c d e".split()), max_size=12)


def test_exact_match_examples():
    assert exact_match("yes", "yes") == 1.0
    assert exact_match("Yes ", "yes") == 1.0
    assert exact_match("yes", "no") == 0.0


def test_rouge_n_examples():
    assert rouge_n(["a", "b", "c"], ["a", "b", "c"], 1) == 1.0
    assert rouge_n(["a", "b", "c"], ["a", "b", "d"], 2) == 0.5
    assert rouge_n([], ["a"], 1) == 0.0
    with pytest.raises(ValueError):
        rouge_n(["a"], ["a"], 3)


def test_rouge_l_examples():
    assert rouge_l(["a", "b"], ["a", "b"]) == 1.0
    assert rouge_l(["a", "c"], ["a", "b", "c"]) == pytest.approx(0.8, abs=1e-15)
    assert rouge_l(["x", "y"], ["a", "b"]) == 0.0


def test_bleu_examples():
    seq = "the quick brown fox jumps".split()
    assert bleu(seq, seq) == 1.0
    assert bleu([], seq) == 0.0
    # every clipped precision is 1 (add-one on the empty 4-gram set gives 1/1); only brevity bites
    assert bleu("the cat sat".split(), "the cat sat down".split()) == pytest.approx(math.exp(-1 / 3), abs=1e-15)


def test_bleu_no_unigram_overlap_is_zero():
    assert bleu(["x", "y"], ["a", "b"]) == 0.0


def test_score_dispatch():
    assert score(MetricKind.EXACT_MATCH, "x", "x") == 1.0
    assert score("rouge_avg", "a b c", "a b c") == 1.0
    assert score("rouge_avg", "a b c", "a b d") == pytest.approx((2 / 3 + 1 / 2 + 2 / 3) / 3, abs=1e-15)
    assert score("rouge1", "A B", "a b") == 1.0
    assert score("bleu", "", "a") == 0.0
    with pytest.raises(ValueError):
        score("meteor", "a", "a")


def test_tokenize_casefolds_and_splits():
    assert tokenize("  The  CAT\tsat\n") == ["the", "cat", "sat"]


def _lcs_brute(a, b):
    # longest common subsequence by enumerating subsequences of the shorter side
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for size in range(len(short), 0, -1):
        for idx in combinations(range(len(short)), size):
            sub = [short[i] for i in idx]
            it = iter(long_)
            if all(tok in it for tok in sub):
                return size
    return 0


@given(st.lists(st.sampled_from("ab"), max_size=8), st.lists(st.sampled_from("ab"), max_size=8))
def test_lcs_matches_subsequence_enumeration(a, b):
    assert lcs_length(a, b) == _lcs_brute(a, b)


@given(tokens, tokens)
def test_metric_ranges_and_symmetry(p, r):
    for n in (1, 2):
        v = rouge_n(p, r, n)
        assert 0.0 <= v <= 1.0
        assert v == rouge_n(r, p, n)
    assert 0.0 <= rouge_l(p, r) <= 1.0
    assert rouge_l(p, r) == rouge_l(r, p)
    assert 0.0 <= bleu(p, r) <= 1.0 + 1e-15


@given(st.lists(st.sampled_from("abcde"), min_size=2, max_size=12))
def test_identity_scores_one(seq):
    assert rouge_n(seq, seq, 1) == 1.0
    assert rouge_n(seq, seq, 2) == 1.0
    assert rouge_l(seq, seq) == 1.0
    assert bleu(seq, seq) == pytest.approx(1.0, abs=1e-15)


def test_rouge2_of_single_token_is_zero():
    # no bigrams on either side: the degenerate rule wins over identity
    assert rouge_n(["a"], ["a"], 2) == 0.0

import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtalang.errors import InvalidInputError
from dtalang.smiles_lang import (BpeVocabulary, kept_characters, read_corpus, tokenize_bpe,
                                 tokenize_kmer, train_bpe)

from oracles import brute_bpe_merges

REFERENCE_SMILES = "COc1cc2CCN=C(c3ccc(Cl)c(Cl)c3)c2cc1Cl"
SMILES_ALPHABET = "CNOcn()=123[]@H+"


def test_kmer_table_molecule():
    words = tokenize_kmer(REFERENCE_SMILES, 8)
    assert len(words) == 30
    assert words[:3] == ["COc1cc2C", "Oc1cc2CC", "c1cc2CCN"]
    assert words[-2:] == ["3)c2cc1C", ")c2cc1Cl"]


def test_kmer_exact_length_and_short():
    assert tokenize_kmer("CCCCCCCC", 8) == ["CCCCCCCC"]
    assert tokenize_kmer("CCO", 8) == ["CCO"]
    assert tokenize_kmer("CCO", 1) == ["C", "C", "O"]


@pytest.mark.parametrize("bad", ["", "CC O", "C\tC"])
def test_kmer_rejects_bad_input(bad):
    with pytest.raises(InvalidInputError):
        tokenize_kmer(bad)


def test_kmer_rejects_bad_k():
    with pytest.raises(InvalidInputError):
        tokenize_kmer("CCO", 0)


@given(st.text(alphabet=SMILES_ALPHABET, min_size=1, max_size=40), st.integers(1, 10))
def test_kmer_reconstructs_string(s, k):
    words = tokenize_kmer(s, k)
    if len(s) < k:
        assert words == [s]
        return
    assert len(words) == len(s) - k + 1
    assert all(len(w) == k for w in words)
    assert words[0] + "".join(w[-1] for w in words[1:]) == s


def test_bpe_first_merge_is_most_frequent_pair():
    vocab = train_bpe(["CCO", "CCN", "CCO"], target_size=5, character_coverage=1.0)
    assert vocab.merges[0] == ("C", "C")
    assert "CC" in vocab.tokens


def test_bpe_two_character_corpus():
    vocab = train_bpe(["AB"], target_size=3, character_coverage=1.0)
    assert vocab.merges == [("A", "B")]
    assert vocab.tokens == {"A", "B", "AB"}


def test_tokenize_with_hand_built_vocabulary():
    vocab = BpeVocabulary(merges=[("A", "B")], tokens={"A", "B", "AB"}, target_size=3)
    assert tokenize_bpe("AB", vocab) == ["AB"]
    assert tokenize_bpe("ABC", vocab) == ["AB", "C"]


def test_bpe_tie_goes_to_smallest_pair():
    vocab = train_bpe(["ab", "cd"], target_size=6, character_coverage=1.0)
    assert vocab.merges == [("a", "b"), ("c", "d")]


def test_bpe_stops_when_pairs_run_out():
    vocab = train_bpe(["CC"], target_size=50, character_coverage=1.0)
    assert vocab.merges == [("C", "C")]


def test_bpe_target_must_exceed_alphabet():
    with pytest.raises(InvalidInputError):
        train_bpe(["CNO"], target_size=3, character_coverage=1.0)


def test_bpe_empty_corpus():
    with pytest.raises(InvalidInputError):
        train_bpe([], target_size=10)


def test_coverage_drops_rare_characters():
    kept = kept_characters(Counter("CCCCCCCCCN"), 0.9)
    assert kept == {"C"}
    vocab = train_bpe(["CCCCCCCCCN"], target_size=4, character_coverage=0.9)
    assert tokenize_bpe("CCN", vocab)[-1] == vocab.unk_token


def test_bpe_max_word_len_blocks_long_merges():
    vocab = train_bpe(["CCCCCCCC"] * 3, target_size=100, character_coverage=1.0,
                      max_word_len=2)
    assert all(len(a + b) <= 2 for a, b in vocab.merges)


def _random_corpus(rng, n, alphabet=SMILES_ALPHABET):
    return ["".join(rng.choice(alphabet) for _ in range(rng.randint(1, 30))) for _ in range(n)]


@pytest.mark.parametrize("seed", range(10))
def test_bpe_matches_recount_oracle(seed):
    rng = random.Random(seed)
    corpus = _random_corpus(rng, rng.randint(5, 60), SMILES_ALPHABET[: rng.randint(3, 16)])
    n_chars = len(set("".join(corpus)))
    target = n_chars + rng.randint(1, 60)
    vocab = train_bpe(corpus, target_size=target, character_coverage=1.0, max_word_len=6)
    assert vocab.merges == brute_bpe_merges(corpus, target, 1.0, 6)


def test_bpe_round_trip_segmentation():
    rng = random.Random(7)
    corpus = _random_corpus(rng, 40)
    vocab = train_bpe(corpus, target_size=60, character_coverage=1.0)
    for s in corpus:
        pieces = tokenize_bpe(s, vocab)
        assert "".join(pieces) == s
        assert all(p in vocab.tokens for p in pieces)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.text(alphabet="CNOc()1", min_size=1, max_size=15), min_size=1, max_size=20),
       st.integers(1, 30))
def test_bpe_vocabulary_size_bounded(corpus, extra):
    n_chars = len(set("".join(corpus)))
    vocab = train_bpe(corpus, target_size=n_chars + extra, character_coverage=1.0)
    assert len(vocab.tokens) <= n_chars + extra
    for s in corpus:
        assert "".join(tokenize_bpe(s, vocab)) == s


def test_bpe_save_load(tmp_path):
    rng = random.Random(3)
    corpus = _random_corpus(rng, 30)
    vocab = train_bpe(corpus, target_size=50, character_coverage=0.95)
    vocab.save(tmp_path / "vocab.txt")
    again = BpeVocabulary.load(tmp_path / "vocab.txt")
    assert again.merges == vocab.merges
    assert again.tokens == vocab.tokens
    for s in corpus:
        assert tokenize_bpe(s, again) == tokenize_bpe(s, vocab)


def test_read_corpus_skips_blank_lines(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("CCO\n\n  CCN  \n")
    assert list(read_corpus(p)) == ["CCO", "CCN"]

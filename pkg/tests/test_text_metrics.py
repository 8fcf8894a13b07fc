import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mtbias.schema import SchemaError
from mtbias.text_metrics import (
    Bucket,
    TranslationRecord,
    bleu,
    char_tokenize,
    chrf,
    classify_delta,
    delta_partition,
    read_records,
    write_records,
)

from oracles import chrf_oracle

# values frozen from the brute-force n-gram enumeration in oracles.chrf_oracle
CHRF_CASES = [
    ("abc", "abd", 2, 58.333333333333336),
    ("abc", "abd", 6, 38.888888888888886),
    ("the cat", "the hat", 6, 36.23015873015873),
    ("aaaa", "aa", 3, 29.49852507374631),
    ("hello world", "world hello", 4, 74.16666666666667),
    ("abcdef", "abc", 6, 20.426287744227352),
    ("ab", "ba", 2, 50.0),
    ("kitten", "sitting", 3, 43.06289795822467),
]

# frozen from an independent corpus-BLEU recomputation
BLEU_CASES = [
    ([list("abcd")], [list("abc")], 71.65313105737893),
    (["the cat sat on the mat".split()], ["the cat sat on a mat".split()], 53.7284965911771),
    (["a b c d e f".split(), "x y z w".split()], ["a b c q e f".split(), "x y z".split()],
     44.91846617388952),
    (["a b c d".split()], ["a x b y".split()], 37.99178428257963),
]


def rec(ref, base, comp, pid="p"):
    return TranslationRecord("en", "fr", "src", ref, base, comp, pid)


@pytest.mark.parametrize("ref, hyp, max_n, expected", CHRF_CASES)
def test_chrf_hand_cases(ref, hyp, max_n, expected):
    assert chrf(ref, hyp, max_n=max_n) == pytest.approx(expected, abs=1e-6)


def test_chrf_identity_and_empty():
    assert chrf("a sentence", "a sentence") == 100.0
    assert chrf("a sentence", "") == 0.0
    assert chrf("  padded ", "padded") == 100.0


def test_chrf_empty_reference_is_error():
    with pytest.raises(ValueError):
        chrf("   ", "x")


@given(st.text(min_size=1, max_size=12).filter(lambda s: s.strip()), st.text(max_size=12),
       st.integers(1, 6))
def test_chrf_matches_oracle_and_bounds(ref, hyp, n):
    v = chrf(ref, hyp, max_n=n)
    assert 0.0 <= v <= 100.0 + 1e-9
    assert v == pytest.approx(chrf_oracle(ref, hyp, n), abs=1e-9)
    assert chrf(ref, ref, max_n=n) == pytest.approx(100.0)


@pytest.mark.parametrize("refs, hyps, expected", BLEU_CASES)
def test_bleu_hand_cases(refs, hyps, expected):
    assert bleu(refs, hyps) == pytest.approx(expected, abs=1e-6)


def test_bleu_identity_and_zero_overlap():
    refs = [["a", "b", "c", "d", "e"], ["f", "g"]]
    assert bleu(refs, refs) == pytest.approx(100.0)
    assert bleu(refs, [["x", "y"], ["z"]]) == 0.0
    assert bleu(refs, [[], []]) == 0.0


@pytest.mark.parametrize("refs, hyps", [([["a"]], []), ([], []), ([[]], [["a"]])])
def test_bleu_errors(refs, hyps):
    with pytest.raises(ValueError):
        bleu(refs, hyps)


@given(st.lists(st.tuples(st.lists(st.sampled_from("abcd"), min_size=1, max_size=8),
                          st.lists(st.sampled_from("abcd"), max_size=8)), min_size=1, max_size=6),
       st.randoms())
def test_bleu_permutation_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a = bleu([r for r, _ in pairs], [h for _, h in pairs])
    b = bleu([r for r, _ in shuffled], [h for _, h in shuffled])
    assert a == pytest.approx(b, abs=1e-12)
    assert 0.0 <= a <= 100.0 + 1e-9


def test_delta_identical_hypotheses_neutral():
    (o,) = delta_partition([rec("le chat", "le chien", "le chien")])
    assert o.delta == 0.0 and o.bucket is Bucket.NEUTRAL


@pytest.mark.parametrize("delta, bucket", [
    (-0.6, Bucket.LOSING), (0.7, Bucket.WINNING), (-0.5, Bucket.NEUTRAL), (0.5, Bucket.NEUTRAL),
    (0.0, Bucket.NEUTRAL),
])
def test_thresholds_are_strict(delta, bucket):
    assert classify_delta(delta, 0.5) is bucket


def test_delta_is_on_unit_scale():
    (o,) = delta_partition([rec("abcdef", "abcdef", "zzzzzz")])
    assert o.delta == pytest.approx(-1.0)
    assert o.bucket is Bucket.LOSING


@given(st.floats(-1, 1), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_raising_threshold_never_leaves_neutral(d, t1, t2):
    lo, hi = sorted((t1, t2))
    if classify_delta(d, lo) is Bucket.NEUTRAL:
        assert classify_delta(d, hi) is Bucket.NEUTRAL


def test_nonpositive_threshold_rejected():
    with pytest.raises(ValueError):
        delta_partition([rec("a", "a", "a")], threshold=0.0)


def test_record_jsonl_roundtrip(tmp_path):
    recs = [rec("ref one", "h1", "h2", "a"), rec("ref two", "x", "y", "b")]
    write_records(tmp_path / "c.jsonl", recs)
    assert read_records(tmp_path / "c.jsonl") == recs


def test_record_schema_error_names_line(tmp_path):
    good = rec("r", "a", "b").to_dict()
    bad = dict(good, reference="")
    f = tmp_path / "c.jsonl"
    f.write_text(json.dumps(good) + "\n" + json.dumps(bad) + "\n")
    with pytest.raises(SchemaError, match=r"c\.jsonl:2"):
        read_records(f)


def test_char_tokenizer_drops_spaces():
    assert char_tokenize("ab c") == ["a", "b", "c"]

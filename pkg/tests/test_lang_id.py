from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mtbias.lang_id import (
    identify,
    load_profiles,
    off_target_rate,
    save_profiles,
    train_profiles,
)
from mtbias.synth import DEMO_LANGUAGES, SyllableLanguage
from mtbias.text_metrics import TranslationRecord

ENGLISH = ["the quick brown fox jumps over the lazy dog",
           "she sells sea shells by the sea shore",
           "there is nothing either good or bad but thinking makes it so"]
GERMAN = ["der schnelle braune fuchs springt über den faulen hund",
          "ich bin ein berliner und wohne in der stadt",
          "zwischen den bergen liegt ein kleines dorf mit einer kirche"]


@pytest.fixture(scope="module")
def two_langs():
    a, b = DEMO_LANGUAGES[0], DEMO_LANGUAGES[1]
    profiles = train_profiles({a.code: a.corpus(200, 1), b.code: b.corpus(200, 2)})
    return a, b, profiles


def padded_unigram_counts(texts):
    c = Counter()
    for t in texts:
        for w in t.lower().split():
            for ch in "_" + w + "_":
                c[ch] += 1
    return c


def test_repeated_letter_corpus():
    (p, _) = train_profiles({"x": ["aaaa"], "y": ["bbb"]})
    assert p.ngrams[0] == "a"


def test_identical_corpora_identical_profiles():
    p, q = train_profiles({"aa": ENGLISH, "bb": ENGLISH})
    assert p.ngrams == q.ngrams and p.lang != q.lang


@pytest.mark.parametrize("texts", [ENGLISH, GERMAN])
def test_top_unigrams_match_brute_force_count(texts):
    prof = {p.lang: p for p in train_profiles({"en": ENGLISH, "de": GERMAN})}
    lang = "en" if texts is ENGLISH else "de"
    counts = padded_unigram_counts(texts)
    expected = sorted(counts, key=lambda g: (-counts[g], g))[:5]
    unigrams = [g for g in prof[lang].ngrams if len(g) == 1][:5]
    assert unigrams == expected


def test_training_text_identified(two_langs):
    a, b, profiles = two_langs
    assert identify(profiles, " ".join(a.corpus(5, 1)))[0] == a.code
    assert identify(profiles, " ".join(b.corpus(5, 2)))[0] == b.code


def test_single_profile_always_wins():
    (p,) = train_profiles({"x": ["abc"], "y": ["def"]})[:1]
    assert identify([p], "zzz qqq")[0] == "x"


def test_heldout_accuracy(two_langs):
    a, b, profiles = two_langs
    hits = sum(identify(profiles, s)[0] == a.code for s in a.corpus(50, 99))
    hits += sum(identify(profiles, s)[0] == b.code for s in b.corpus(50, 98))
    assert hits / 100 >= 0.95


@given(st.text(alphabet="ptkaimnlou ", min_size=1).filter(str.strip), st.randoms())
def test_identify_independent_of_profile_order(two_langs, text, rnd):
    _, _, profiles = two_langs
    shuffled = list(profiles)
    rnd.shuffle(shuffled)
    assert identify(profiles, text) == identify(shuffled, text)


def test_tie_goes_to_smaller_code():
    p = train_profiles({"zz": ["abc"], "aa": ["abc"]})
    assert identify(p, "xyz")[0] == "aa"


def test_errors():
    with pytest.raises(ValueError):
        train_profiles({"x": ["a"]})
    with pytest.raises(ValueError):
        train_profiles({"x": ["a"], "y": ["b"]}, k=0)
    with pytest.raises(ValueError):
        train_profiles({"x": [""], "y": ["b"]})
    with pytest.raises(ValueError):
        identify(train_profiles({"x": ["a"], "y": ["b"]}), "   ")


def _corpus(lang_a, lang_b, n, seed, inject=()):
    refs = lang_b.corpus(n, seed)
    wrong = lang_a.corpus(n, seed + 1)
    return [TranslationRecord(lang_a.code, lang_b.code, "s", r,
                              wrong[i] if i in inject else r, r, str(i))
            for i, r in enumerate(refs)]


def test_off_target_extremes(two_langs):
    a, b, profiles = two_langs
    clean = _corpus(a, b, 40, 5)
    assert off_target_rate(clean, profiles, "base") == (0.0, 40)
    swapped = _corpus(a, b, 40, 5, inject=range(40))
    assert off_target_rate(swapped, profiles, "base")[0] == 1.0


def test_injected_rate_recovered(two_langs):
    a, b, profiles = two_langs
    recs = _corpus(a, b, 100, 7, inject={i for i in range(100) if i % 10 < 3})
    rate, n = off_target_rate(recs, profiles, "base")
    assert n == 100 and abs(rate - 0.30) <= 0.05


def test_misidentified_references_excluded(two_langs):
    a, b, profiles = two_langs
    recs = _corpus(a, b, 10, 3)
    bogus = TranslationRecord(a.code, b.code, "s", a.corpus(1, 50)[0], "x", "x", "bad")
    rate, n = off_target_rate(recs + [bogus], profiles, "base")
    assert (rate, n) == (0.0, 10)


def test_missing_target_profile(two_langs):
    _, _, profiles = two_langs
    r = TranslationRecord("aaa", "qqq", "s", "ref", "h", "h")
    with pytest.raises(ValueError, match="qqq"):
        off_target_rate([r], profiles)


def test_more_injection_never_lowers_rate(two_langs):
    a, b, profiles = two_langs
    few = off_target_rate(_corpus(a, b, 30, 9, inject={1, 2}), profiles, "base")[0]
    more = off_target_rate(_corpus(a, b, 30, 9, inject={1, 2, 3, 4, 5}), profiles, "base")[0]
    assert few <= more


def test_profiles_json_roundtrip(tmp_path, two_langs):
    _, _, profiles = two_langs
    save_profiles(profiles, tmp_path / "p.json")
    assert load_profiles(tmp_path / "p.json") == profiles


def test_digits_and_case_normalized():
    p = train_profiles({"x": ["Room 42"], "y": ["zzz"]})
    assert "0" in p[0].ngrams and "r" in p[0].ngrams and "R" not in p[0].ngrams

"""Rank-order character n-gram language identification and off-target rates.

profiles.json schema::

    {"k": 300, "profiles": [{"lang": "xx", "ngrams": ["_", "a", ...]}, ...]}

``ngrams`` is listed in rank order (index = rank).
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .schema import SchemaError, read_json
from .text_metrics import TranslationRecord

_DIGIT = re.compile(r"\d")


def normalize(text: str) -> str:
    return _DIGIT.sub("0", text.lower())


def ngram_counts(texts: Sequence[str] | str, max_n: int = 5) -> Counter:
    if isinstance(texts, str):
        texts = [texts]
    counts: Counter = Counter()
    for text in texts:
        for word in normalize(text).split():
            w = f"_{word}_"
            for n in range(1, max_n + 1):
                counts.update(w[i:i + n] for i in range(len(w) - n + 1))
    return counts


def top_ranked(counts: Counter, k: int) -> list[str]:
    return [g for g, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]]


@dataclass(frozen=True)
class LanguageProfile:
    lang: str
    ngrams: tuple[str, ...]      # rank order
    k: int = 300

    def __post_init__(self):
        if not self.lang:
            raise ValueError("profile language code is empty")
        if len(set(self.ngrams)) != len(self.ngrams):
            raise ValueError(f"profile {self.lang!r} has duplicate n-grams")
        if len(self.ngrams) > self.k:
            raise ValueError(f"profile {self.lang!r} holds more than k={self.k} n-grams")
        object.__setattr__(self, "ngrams", tuple(self.ngrams))

    @property
    def ranked_ngrams(self) -> list[tuple[str, int]]:
        return [(g, r) for r, g in enumerate(self.ngrams)]

    def rank_of(self) -> dict[str, int]:
        return {g: r for r, g in enumerate(self.ngrams)}


def train_profiles(corpora: Mapping[str, Sequence[str]], k: int = 300) -> list[LanguageProfile]:
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(corpora) < 2:
        raise ValueError("need at least two languages")
    out = []
    for lang in sorted(corpora):
        counts = ngram_counts(corpora[lang])
        if not counts:
            raise ValueError(f"corpus for {lang!r} is empty")
        out.append(LanguageProfile(lang, tuple(top_ranked(counts, k)), k))
    return out


def out_of_place(text_ranks: Sequence[str], profile: LanguageProfile,
                 rank_of: Mapping[str, int] | None = None) -> int:
    rank_of = rank_of if rank_of is not None else profile.rank_of()
    return sum(abs(i - rank_of[g]) if g in rank_of else profile.k
               for i, g in enumerate(text_ranks))


def identify(profiles: Sequence[LanguageProfile], text: str) -> tuple[str, int]:
    """(language, distance) of the closest profile; ties go to the smaller code."""
    if not profiles:
        raise ValueError("no language profiles")
    counts = ngram_counts(text)
    if not counts:
        raise ValueError("cannot identify empty text")
    k = max(p.k for p in profiles)
    ranks = top_ranked(counts, k)
    scored = [(out_of_place(ranks[:p.k], p), p.lang) for p in profiles]
    dist, lang = min(scored)
    return lang, dist


class LanguageIdentifier:
    """Profiles with precomputed rank lookups, for scoring many texts."""

    def __init__(self, profiles: Sequence[LanguageProfile]):
        if not profiles:
            raise ValueError("no language profiles")
        self.profiles = sorted(profiles, key=lambda p: p.lang)
        self.langs = {p.lang for p in profiles}
        self._ranks = [p.rank_of() for p in self.profiles]
        self._k = max(p.k for p in profiles)

    def __call__(self, text: str) -> str:
        counts = ngram_counts(text)
        if not counts:
            raise ValueError("cannot identify empty text")
        ranks = top_ranked(counts, self._k)
        return min((out_of_place(ranks[:p.k], p, r), p.lang)
                   for p, r in zip(self.profiles, self._ranks))[1]


def off_target_flags(records: Sequence[TranslationRecord], profiles: Sequence[LanguageProfile],
                     which: str = "comp") -> list[bool | None]:
    """Per record: None if the reference itself is misidentified, else hypothesis off-target.

    An empty hypothesis counts as off-target.
    """
    if which not in ("base", "comp"):
        raise ValueError("which must be 'base' or 'comp'")
    lid = LanguageIdentifier(profiles)
    missing = sorted({r.tgt_lang for r in records} - lid.langs)
    if missing:
        raise ValueError(f"no language profile for target language(s) {missing}")
    flags: list[bool | None] = []
    for r in records:
        if lid(r.reference) != r.tgt_lang:
            flags.append(None)
            continue
        hyp = getattr(r, "hyp_" + which)
        flags.append(not hyp.strip() or lid(hyp) != r.tgt_lang)
    return flags


def off_target_rate(records: Sequence[TranslationRecord], profiles: Sequence[LanguageProfile],
                    which: str = "comp") -> tuple[float, int]:
    """(fraction off-target, number of records evaluated); 0.0 when none evaluated."""
    flags = [f for f in off_target_flags(records, profiles, which) if f is not None]
    if not flags:
        return 0.0, 0
    return sum(flags) / len(flags), len(flags)


def save_profiles(profiles: Sequence[LanguageProfile], path) -> None:
    ks = {p.k for p in profiles}
    doc = {"k": max(ks) if ks else 0,
           "profiles": [{"lang": p.lang, "k": p.k, "ngrams": list(p.ngrams)} for p in profiles]}
    Path(path).write_text(json.dumps(doc, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")


def load_profiles(path) -> list[LanguageProfile]:
    doc = read_json(path)
    try:
        default_k = int(doc.get("k", 300))
        return [LanguageProfile(p["lang"], tuple(p["ngrams"]), int(p.get("k", default_k)))
                for p in doc["profiles"]]
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise SchemaError(f"{path}: malformed profiles file ({exc})") from exc


def read_corpora_dir(path) -> dict[str, list[str]]:
    """``<lang>.txt`` files, one sentence per line."""
    files = sorted(Path(path).glob("*.txt"))
    if not files:
        raise SchemaError(f"{path}: no <lang>.txt corpora found")
    return {f.stem: [ln for ln in f.read_text(encoding="utf-8").splitlines() if ln.strip()]
            for f in files}

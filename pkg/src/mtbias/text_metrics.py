"""ChrF, corpus BLEU, and the per-sentence ChrF difference used to split a
corpus into Losing / Winning / Neutral sentences.
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

from .schema import read_jsonl, write_jsonl


@dataclass(frozen=True)
class TranslationRecord:
    src_lang: str
    tgt_lang: str
    source: str
    reference: str
    hyp_base: str
    hyp_comp: str
    pair_id: str = ""
    attn_base: str | None = None     # key into an attention file; pair_id when absent
    attn_comp: str | None = None

    def __post_init__(self):
        for k in ("src_lang", "tgt_lang", "source", "reference", "hyp_base", "hyp_comp", "pair_id"):
            if not isinstance(getattr(self, k), str):
                raise TypeError(f"field {k!r} must be a string")
        if not self.src_lang or not self.tgt_lang:
            raise ValueError("language codes must be non-empty")
        if not self.reference.strip():
            raise ValueError("reference must be non-empty")

    @property
    def pair(self) -> tuple[str, str]:
        return (self.src_lang, self.tgt_lang)

    @classmethod
    def from_dict(cls, doc: dict) -> "TranslationRecord":
        known = {k: doc[k] for k in cls.__dataclass_fields__ if k in doc}
        return cls(**known)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def read_records(path) -> list[TranslationRecord]:
    return read_jsonl(path, TranslationRecord.from_dict)


def write_records(path, records: Sequence[TranslationRecord]) -> None:
    write_jsonl(path, (r.to_dict() for r in records))


# --- tokenizers ----------------------------------------------------------------

def whitespace_tokenize(text: str) -> list[str]:
    return text.split()


def char_tokenize(text: str) -> list[str]:
    return [c for c in text if not c.isspace()]


TOKENIZERS: dict[str, Callable[[str], list[str]]] = {
    "whitespace": whitespace_tokenize,
    "char": char_tokenize,
}


# --- ChrF ----------------------------------------------------------------------

def char_ngrams(text: str, n: int) -> Counter:
    return Counter(text[i:i + n] for i in range(len(text) - n + 1))


def chrf(reference: str, hypothesis: str, max_n: int = 6, beta: float = 3.0) -> float:
    """Sentence ChrF in [0, 100].

    Text is stripped at both ends; internal whitespace is kept as ordinary
    characters. Precision and recall are averaged over the n-gram orders the
    reference actually has.
    """
    ref, hyp = reference.strip(), hypothesis.strip()
    if not ref:
        raise ValueError("chrf: reference is empty")
    if max_n < 1:
        raise ValueError("chrf: max_n must be at least 1")
    precisions, recalls = [], []
    for n in range(1, max_n + 1):
        r = char_ngrams(ref, n)
        if not r:
            break
        h = char_ngrams(hyp, n)
        match = sum((r & h).values())
        h_total = sum(h.values())
        precisions.append(match / h_total if h_total else 0.0)
        recalls.append(match / sum(r.values()))
    p = sum(precisions) / len(precisions)
    r = sum(recalls) / len(recalls)
    if p + r == 0:
        return 0.0
    b2 = beta * beta
    return 100.0 * (1 + b2) * p * r / (b2 * p + r)


# --- BLEU ----------------------------------------------------------------------

def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(references: Sequence[Sequence[str]], hypotheses: Sequence[Sequence[str]],
         max_n: int = 4) -> float:
    """Corpus BLEU in [0, 100] with add-one smoothing for empty higher orders."""
    if len(references) != len(hypotheses):
        raise ValueError(f"bleu: {len(references)} references vs {len(hypotheses)} hypotheses")
    if not references:
        raise ValueError("bleu: empty corpus")
    if any(len(r) == 0 for r in references):
        raise ValueError("bleu: empty reference")
    matches = [0] * max_n
    totals = [0] * max_n
    ref_len = hyp_len = 0
    for ref, hyp in zip(references, hypotheses):
        ref_len += len(ref)
        hyp_len += len(hyp)
        for n in range(1, max_n + 1):
            h = _ngrams(hyp, n)
            matches[n - 1] += sum((h & _ngrams(ref, n)).values())
            totals[n - 1] += sum(h.values())
    if hyp_len == 0 or matches[0] == 0:
        return 0.0
    log_p = 0.0
    for n in range(max_n):
        m, t = matches[n], totals[n]
        if n > 0 and m == 0:
            m, t = 1, t + 1
        log_p += math.log(m / t)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p / max_n)


def corpus_bleu(records: Sequence[TranslationRecord], which: str = "base",
                tokenize: Callable[[str], list[str]] = whitespace_tokenize,
                max_n: int = 4) -> float:
    hyps = [getattr(r, "hyp_" + which) for r in records]
    return bleu([tokenize(r.reference) for r in records], [tokenize(h) for h in hyps], max_n)


# --- delta partition -----------------------------------------------------------

class Bucket(enum.Enum):
    LOSING = "losing"
    WINNING = "winning"
    NEUTRAL = "neutral"


@dataclass(frozen=True)
class DeltaOutcome:
    delta: float
    bucket: Bucket


def classify_delta(delta: float, threshold: float = 0.5) -> Bucket:
    if threshold <= 0:
        raise ValueError("delta threshold must be positive")
    if delta < -threshold:
        return Bucket.LOSING
    if delta > threshold:
        return Bucket.WINNING
    return Bucket.NEUTRAL


def delta_partition(records: Sequence[TranslationRecord], threshold: float = 0.5,
                    max_n: int = 6, beta: float = 3.0) -> list[DeltaOutcome]:
    """ChrF difference on the [0, 1] scale, compressed minus baseline, per record."""
    if threshold <= 0:
        raise ValueError("delta threshold must be positive")
    out = []
    for r in records:
        d = (chrf(r.reference, r.hyp_comp, max_n, beta) / 100.0
             - chrf(r.reference, r.hyp_base, max_n, beta) / 100.0)
        out.append(DeltaOutcome(d, classify_delta(d, threshold)))
    return out

"""Gender F1 and the fairness ratios over pre-labelled gender outcomes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .schema import read_jsonl

GOLD = ("male", "female")
PREDICTED = ("male", "female", "unknown")
STEREOTYPES = ("pro", "anti", "neutral")


@dataclass(frozen=True)
class GenderRecord:
    gold_gender: str
    predicted_gender: str
    stereotype: str = "neutral"
    lang: str = ""

    def __post_init__(self):
        if self.gold_gender not in GOLD:
            raise ValueError(f"gold_gender must be one of {GOLD}, got {self.gold_gender!r}")
        if self.predicted_gender not in PREDICTED:
            raise ValueError(
                f"predicted_gender must be one of {PREDICTED}, got {self.predicted_gender!r}")
        if self.stereotype not in STEREOTYPES:
            raise ValueError(f"stereotype must be one of {STEREOTYPES}, got {self.stereotype!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "GenderRecord":
        return cls(doc["gold_gender"], doc["predicted_gender"],
                   doc.get("stereotype", "neutral"), doc.get("lang", ""))


def read_gender(path) -> list[GenderRecord]:
    return read_jsonl(path, GenderRecord.from_dict)


def _f1(tp: int, fp: int, fn: int) -> float:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return 2 * p * r / (p + r) if p + r else 0.0


def gender_f1(records: Sequence[GenderRecord]) -> tuple[float, float]:
    """Per-class F1 for (male, female). An 'unknown' prediction is a miss, never a false alarm."""
    if not records:
        raise ValueError("no gender records")
    scores = []
    for g in GOLD:
        tp = sum(r.gold_gender == g and r.predicted_gender == g for r in records)
        fp = sum(r.gold_gender != g and r.predicted_gender == g for r in records)
        fn = sum(r.gold_gender == g and r.predicted_gender != g for r in records)
        scores.append(_f1(tp, fp, fn))
    return scores[0], scores[1]


def skew_from_f1(f_male: float, f_female: float) -> float:
    if f_male + f_female <= 0:
        raise ValueError("gender skew undefined: both F1 scores are zero")
    return (f_male - f_female) / (f_male + f_female)


def gender_skew(records: Sequence[GenderRecord]) -> float:
    return skew_from_f1(*gender_f1(records))


def stereotype_gap(records: Sequence[GenderRecord]) -> float:
    """|gender_skew(anti) - gender_skew(pro)|; neutral records are ignored."""
    pro = [r for r in records if r.stereotype == "pro"]
    anti = [r for r in records if r.stereotype == "anti"]
    if not pro or not anti:
        raise ValueError("stereotype gap needs both pro- and anti-stereotypical records")
    return abs(gender_skew(anti) - gender_skew(pro))


def _safe(fn, recs):
    try:
        return fn(recs)
    except ValueError:
        return None


def gender_report(records: Sequence[GenderRecord]) -> dict:
    """Per-language skew and stereotype gap, averaged over languages where defined."""
    langs = sorted({r.lang for r in records})
    rows = []
    for lang in langs:
        sub = [r for r in records if r.lang == lang]
        f_m, f_f = gender_f1(sub)
        rows.append({"lang": lang, "n": len(sub), "f_male": f_m, "f_female": f_f,
                     "skew": _safe(gender_skew, sub), "stereotype_gap": _safe(stereotype_gap, sub)})

    def avg(key):
        vals = [r[key] for r in rows if r[key] is not None]
        return sum(vals) / len(vals) if vals else None

    return {"languages": rows,
            "average": {"skew": avg("skew"), "stereotype_gap": avg("stereotype_gap")}}

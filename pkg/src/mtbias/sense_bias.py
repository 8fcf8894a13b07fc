"""Word-sense bias rates: frequency-index and polysemy bucketed error, and the
share of errors that fall back to more frequent senses.

All results are percentages.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Sequence

from .schema import read_jsonl


@dataclass(frozen=True)
class SenseRecord:
    lemma_pos: str
    gold_index: int              # 1-based rank of the gold sense by frequency
    correct: bool
    polysemy: int
    predicted_index: int | None = None

    def __post_init__(self):
        if self.polysemy < 1:
            raise ValueError("polysemy must be at least 1")
        if not 1 <= self.gold_index <= self.polysemy:
            raise ValueError(f"gold_index {self.gold_index} outside 1..{self.polysemy}")
        if self.predicted_index is not None:
            if not 1 <= self.predicted_index <= self.polysemy:
                raise ValueError(
                    f"predicted_index {self.predicted_index} outside 1..{self.polysemy}")
            if self.correct and self.predicted_index != self.gold_index:
                raise ValueError("record marked correct but predicted_index != gold_index")

    @classmethod
    def from_dict(cls, doc: dict) -> "SenseRecord":
        pred = doc.get("predicted_index")
        return cls(str(doc["lemma_pos"]), int(doc["gold_index"]), bool(doc["correct"]),
                   int(doc["polysemy"]), None if pred is None else int(pred))


def read_senses(path) -> list[SenseRecord]:
    return read_jsonl(path, SenseRecord.from_dict)


def bucketed_error(records: Sequence[SenseRecord], key: Callable[[SenseRecord], int]) -> float:
    if not records:
        raise ValueError("no sense records")
    wrong: dict[int, int] = defaultdict(int)
    total: dict[int, int] = defaultdict(int)
    for r in records:
        total[key(r)] += 1
        wrong[key(r)] += not r.correct
    rates = [wrong[b] / total[b] for b in sorted(total)]
    return 100.0 * sum(rates) / len(rates)


def sfii(records: Sequence[SenseRecord]) -> float:
    return bucketed_error(records, lambda r: r.gold_index)


def spdi(records: Sequence[SenseRecord]) -> float:
    return bucketed_error(records, lambda r: r.polysemy)


def _mappable_errors(records):
    errs = [r for r in records if not r.correct and r.predicted_index is not None]
    if not errs:
        raise ValueError("no erroneous records with a mappable prediction")
    return errs


def mfs(records: Sequence[SenseRecord]) -> float:
    errs = _mappable_errors(records)
    return 100.0 * sum(r.predicted_index < r.gold_index for r in errs) / len(errs)


def mfs_plus(records: Sequence[SenseRecord]) -> float:
    errs = _mappable_errors(records)
    return 100.0 * sum(r.predicted_index == 1 and r.gold_index > 1 for r in errs) / len(errs)


def bias_average(records: Sequence[SenseRecord]) -> float:
    return sense_report(records)["AVG"]


def sense_report(records: Sequence[SenseRecord]) -> dict[str, float]:
    row = {"SFII": sfii(records), "SPDI": spdi(records),
           "MFS": mfs(records), "MFS+": mfs_plus(records)}
    row["AVG"] = sum(row.values()) / 4
    return row

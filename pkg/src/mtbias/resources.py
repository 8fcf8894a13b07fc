"""Resource typing of languages and pairs by bitext volume with English."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping

from .schema import SchemaError, read_json


class Resource(enum.IntEnum):
    VERY_LOW = 0
    LOW = 1
    MEDIUM = 2
    HIGH = 3

    @property
    def label(self) -> str:
        return {0: "VeryLow", 1: "Low", 2: "Medium", 3: "High"}[int(self)]


# inclusive upper bounds
_BOUNDS = ((100_000, Resource.VERY_LOW), (1_000_000, Resource.LOW),
           (100_000_000, Resource.MEDIUM))


def bucket(count: int) -> Resource:
    if count < 0:
        raise ValueError("bitext count must be non-negative")
    for limit, res in _BOUNDS:
        if count <= limit:
            return res
    return Resource.HIGH


@dataclass(frozen=True)
class ResourceTable:
    bitext: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for lang, n in self.bitext.items():
            if not isinstance(n, int) or isinstance(n, bool) or n < 0:
                raise ValueError(f"bitext count for {lang!r} must be a non-negative integer")

    def count(self, lang: str) -> int:
        try:
            return self.bitext[lang]
        except KeyError:
            raise KeyError(f"language {lang!r} not in resource table") from None

    def bucket_of(self, lang: str) -> Resource:
        return bucket(self.count(lang))

    @classmethod
    def from_json(cls, path) -> "ResourceTable":
        doc = read_json(path)
        if not isinstance(doc, dict):
            raise SchemaError(f"{path}: expected an object mapping language -> count")
        try:
            return cls(dict(doc))
        except ValueError as exc:
            raise SchemaError(f"{path}: {exc}") from exc


def pair_resource(table: ResourceTable, x: str, y: str) -> tuple[int, Resource]:
    rho = min(table.count(x), table.count(y))
    return rho, bucket(rho)


def filter_pairs(baseline_scores: Mapping[tuple[str, str], float],
                 threshold: float = 12.0) -> set[tuple[str, str]]:
    """Pairs whose baseline score is strictly above ``threshold``."""
    return {pair for pair, s in baseline_scores.items() if s > threshold}

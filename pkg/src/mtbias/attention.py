"""Cross-attention variance and the relative alignment ratio between two models."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .schema import SchemaError, iter_jsonl

ROW_TOL = 1e-4


class DegenerateSubsetError(ValueError):
    """The subset is empty or its baseline variance is zero, so the ratio is undefined."""


def validate(alpha) -> np.ndarray:
    """Check an attention matrix and return it with rows renormalized exactly."""
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"attention matrix must be 2-D and non-empty, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("attention matrix has non-finite entries")
    if np.any(a < 0):
        raise ValueError("attention matrix has negative entries")
    sums = a.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > ROW_TOL):
        bad = int(np.argmax(np.abs(sums - 1.0)))
        raise ValueError(f"attention row {bad} sums to {sums[bad]!r}, not 1")
    return a / sums[:, None]


def attention_variance(alpha) -> float:
    a = validate(alpha)
    n_rows, n_cols = a.shape
    j = np.arange(n_cols, dtype=np.float64)
    mu = a @ j
    return float(np.sum(a * (mu[:, None] - j[None, :]) ** 2) / (n_rows * n_cols))


def relative_alignment(pairs: Iterable[tuple[np.ndarray, np.ndarray]]) -> float:
    """Mean compressed-model variance over mean baseline variance."""
    base, comp = [], []
    for b, c in pairs:
        base.append(attention_variance(b))
        comp.append(attention_variance(c))
    if not base:
        raise DegenerateSubsetError("no sentences in subset")
    mean_base = float(np.mean(base))
    if mean_base == 0.0:
        raise DegenerateSubsetError("baseline attention variance is zero on this subset")
    return float(np.mean(comp)) / mean_base


def read_attention(path) -> dict[str, np.ndarray]:
    """Attention JSONL: ``{"pair_id": ..., "attention": [[...], ...]}`` per line."""
    out = {}
    for lineno, doc in iter_jsonl(path):
        try:
            key = str(doc["pair_id"])
            out[key] = validate(doc["attention"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return out


def attention_doc(pair_id: str, alpha: np.ndarray) -> dict:
    return {"pair_id": pair_id, "attention": [[float(v) for v in row] for row in alpha]}


def alignment_summary(pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> dict:
    """Sentence count and lambda, or a degenerate marker."""
    try:
        return {"n": len(pairs), "ratio": relative_alignment(pairs), "degenerate": False}
    except DegenerateSubsetError as exc:
        return {"n": len(pairs), "ratio": None, "degenerate": True, "reason": str(exc)}

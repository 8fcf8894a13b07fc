"""End-to-end audit: per-pair summaries, resource-grouped means, delta
histograms, off-target and alignment tables, and the memory/quality line.

Everything is written under ``out_dir``::

    pairs.csv  pairs.json  grouped.csv  delta_hist.csv  offtarget.csv
    alignment.csv  memory.csv  report.json  [grouped.svg  delta_hist.svg]
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .attention import alignment_summary, read_attention
from .compression import PruneStrategy, magnitude_prune, memory_factor
from .lang_id import LanguageProfile, load_profiles, off_target_flags, read_corpora_dir, train_profiles
from .resources import Resource, ResourceTable, filter_pairs, pair_resource
from .schema import SchemaError, read_json
from .tensor_store import WeightSet
from .text_metrics import (
    TOKENIZERS,
    Bucket,
    DeltaOutcome,
    TranslationRecord,
    bleu,
    delta_partition,
    read_records,
)
from .toy_transformer import DecodeResult, ModelConfig, forward_decode

HIST_EDGES = np.linspace(-1.0, 1.0, 21)


def thread_count(requested: int | None = None) -> int:
    if requested:
        return max(1, int(requested))
    env = os.environ.get("MTBIAS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"MTBIAS_THREADS must be an integer, got {env!r}") from None
    return 1


def parallel_map(fn: Callable, items: Sequence, threads: int | None = None) -> list:
    """Order-preserving map; results are identical for any thread count."""
    n = thread_count(threads)
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class AuditConfig:
    corpus: str
    resources: str
    out_dir: str
    profiles: str | None = None
    lid_corpora: str | None = None
    lid_k: int = 300
    attn_base: str | None = None
    attn_comp: str | None = None
    method: str = "pruned(0.3)"
    tokenizer: str = "whitespace"
    delta_threshold: float = 0.5
    bleu_filter: float = 12.0
    chrf_beta: float = 3.0
    chrf_max_n: int = 6
    bleu_max_n: int = 4
    svg: bool = False
    threads: int | None = None

    def __post_init__(self):
        if self.tokenizer not in TOKENIZERS:
            raise ValueError(f"tokenizer must be one of {sorted(TOKENIZERS)}")
        if self.delta_threshold <= 0:
            raise ValueError("delta_threshold must be positive")
        if (self.attn_base is None) != (self.attn_comp is None):
            raise ValueError("attn_base and attn_comp must be given together")
        memory_factor(self.method)

    @classmethod
    def from_json(cls, path) -> "AuditConfig":
        """Load a config; relative paths resolve against the config file's directory."""
        doc = read_json(path)
        if not isinstance(doc, dict):
            raise SchemaError(f"{path}: audit config must be a JSON object")
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - names)
        if unknown:
            raise SchemaError(f"{path}: unknown config key(s) {unknown}")
        base = Path(path).resolve().parent
        for key in ("corpus", "resources", "out_dir", "profiles", "lid_corpora",
                    "attn_base", "attn_comp"):
            if doc.get(key) is not None:
                doc[key] = str(base / doc[key])
        try:
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{path}: {exc}") from exc


@dataclass
class PairSummary:
    src: str
    tgt: str
    n: int
    bleu_base: float
    bleu_comp: float
    rel_diff_pct: float | None
    included: bool
    rho: int
    resource_bucket: str
    src_bucket: str
    tgt_bucket: str
    n_losing: int
    n_winning: int
    n_neutral: int
    off_target_base_pct: float | None = None
    off_target_comp_pct: float | None = None
    ratio_losing: float | None = None
    ratio_winning: float | None = None


def rel_diff_pct(base: float, comp: float) -> float | None:
    return 100.0 * (comp - base) / base if base > 0 else None


def _pct(flags: Iterable[bool | None]) -> tuple[float | None, int]:
    vals = [f for f in flags if f is not None]
    return (100.0 * sum(vals) / len(vals) if vals else None), len(vals)


def delta_histogram(deltas: Sequence[float]) -> tuple[list[int], list[float]]:
    counts = np.histogram(np.clip(deltas, -1.0, 1.0), bins=HIST_EDGES)[0] if len(deltas) else \
        np.zeros(len(HIST_EDGES) - 1, dtype=int)
    total = int(counts.sum())
    return [int(c) for c in counts], [c / total if total else 0.0 for c in counts]


def grouped_means(rows: Sequence[PairSummary]) -> dict[str, dict[str, float]]:
    """Mean rel_diff_pct of included pairs by pair, source and target resource bucket."""
    out = {}
    for level, attr in (("pair", "resource_bucket"), ("source", "src_bucket"),
                        ("target", "tgt_bucket")):
        acc: dict[str, list[float]] = {}
        for r in rows:
            if r.included and r.rel_diff_pct is not None:
                acc.setdefault(getattr(r, attr), []).append(r.rel_diff_pct)
        order = [b.label for b in Resource if b.label in acc]
        out[level] = {b: sum(acc[b]) / len(acc[b]) for b in order}
    return out


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _load_profiles(cfg: AuditConfig) -> list[LanguageProfile] | None:
    if cfg.profiles:
        return load_profiles(cfg.profiles)
    if cfg.lid_corpora:
        return train_profiles(read_corpora_dir(cfg.lid_corpora), cfg.lid_k)
    return None


def _attention_pairs(records, idx, attn_base, attn_comp):
    out = []
    for i in idx:
        r = records[i]
        kb, kc = r.attn_base or r.pair_id, r.attn_comp or r.pair_id
        if kb not in attn_base:
            raise SchemaError(f"no baseline attention for pair_id {kb!r}")
        if kc not in attn_comp:
            raise SchemaError(f"no compressed attention for pair_id {kc!r}")
        out.append((attn_base[kb], attn_comp[kc]))
    return out


def run_audit(cfg: AuditConfig) -> dict:
    """Run the audit and write all report files. Returns the report.json content."""
    records = read_records(cfg.corpus)
    if not records:
        raise SchemaError(f"{cfg.corpus}: corpus is empty")
    table = ResourceTable.from_json(cfg.resources)
    for r in records:
        for lang in (r.src_lang, r.tgt_lang):
            if lang not in table.bitext:
                raise SchemaError(f"{cfg.resources}: no bitext count for language {lang!r}")
    profiles = _load_profiles(cfg)
    attn_base = read_attention(cfg.attn_base) if cfg.attn_base else None
    attn_comp = read_attention(cfg.attn_comp) if cfg.attn_comp else None
    tok = TOKENIZERS[cfg.tokenizer]
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    by_pair: dict[tuple[str, str], list[int]] = {}
    for i, r in enumerate(records):
        by_pair.setdefault(r.pair, []).append(i)
    pairs = sorted(by_pair)

    def score(pair):
        recs = [records[i] for i in by_pair[pair]]
        refs = [tok(r.reference) for r in recs]
        return (bleu(refs, [tok(r.hyp_base) for r in recs], cfg.bleu_max_n),
                bleu(refs, [tok(r.hyp_comp) for r in recs], cfg.bleu_max_n),
                delta_partition(recs, cfg.delta_threshold, cfg.chrf_max_n, cfg.chrf_beta))

    scored = dict(zip(pairs, parallel_map(score, pairs, cfg.threads)))
    outcomes: list[DeltaOutcome | None] = [None] * len(records)
    for pair in pairs:
        for i, o in zip(by_pair[pair], scored[pair][2]):
            outcomes[i] = o

    flags_base = flags_comp = [None] * len(records)
    if profiles is not None:
        flags_base = off_target_flags(records, profiles, "base")
        flags_comp = off_target_flags(records, profiles, "comp")

    included = filter_pairs({p: scored[p][0] for p in pairs}, cfg.bleu_filter)
    rows = []
    for pair in pairs:
        idx = by_pair[pair]
        b_base, b_comp, outs = scored[pair]
        rho, res = pair_resource(table, *pair)
        buckets = [o.bucket for o in outs]
        row = PairSummary(
            src=pair[0], tgt=pair[1], n=len(idx), bleu_base=b_base, bleu_comp=b_comp,
            rel_diff_pct=rel_diff_pct(b_base, b_comp), included=pair in included, rho=rho,
            resource_bucket=res.label, src_bucket=table.bucket_of(pair[0]).label,
            tgt_bucket=table.bucket_of(pair[1]).label,
            n_losing=buckets.count(Bucket.LOSING), n_winning=buckets.count(Bucket.WINNING),
            n_neutral=buckets.count(Bucket.NEUTRAL))
        if profiles is not None:
            row.off_target_base_pct = _pct(flags_base[i] for i in idx)[0]
            row.off_target_comp_pct = _pct(flags_comp[i] for i in idx)[0]
        if attn_base is not None:
            for name in ("losing", "winning"):
                sel = [i for i in idx if outcomes[i].bucket is Bucket(name)]
                summ = alignment_summary(_attention_pairs(records, sel, attn_base, attn_comp))
                setattr(row, f"ratio_{name}", summ["ratio"])
        rows.append(row)

    kept = [i for p in pairs if p in included for i in by_pair[p]]
    res_of = {p: pair_resource(table, *p)[1].label for p in pairs}

    # delta histograms per pair resource bucket
    hist = {}
    for b in Resource:
        ds = [outcomes[i].delta for i in kept if res_of[records[i].pair] == b.label]
        if ds:
            counts, norm = delta_histogram(ds)
            hist[b.label] = {"counts": counts, "normalized": norm}

    losing = [i for i in kept if outcomes[i].bucket is Bucket.LOSING]
    winning = [i for i in kept if outcomes[i].bucket is Bucket.WINNING]
    off_table = None
    if profiles is not None:
        base_pct, n_eval = _pct(flags_base[i] for i in losing)
        comp_pct, _ = _pct(flags_comp[i] for i in losing)
        off_table = {"base_pct": base_pct, "comp_pct": comp_pct, "evaluated": n_eval,
                     "total_losing": len(losing)}

    lam_table = None
    if attn_base is not None:
        # on-target losing: drop sentences whose compressed output is off-target
        on_target = [i for i in losing if flags_comp[i] is not True]
        lam_table = {
            "losing_on_target": alignment_summary(
                _attention_pairs(records, on_target, attn_base, attn_comp)),
            "winning": alignment_summary(_attention_pairs(records, winning, attn_base, attn_comp)),
        }

    inc_rows = [r for r in rows if r.included]
    avg = (lambda xs: sum(xs) / len(xs) if xs else None)
    memory = [
        {"model": "baseline", "memory_factor": 1.0,
         "avg_bleu": avg([r.bleu_base for r in inc_rows])},
        {"model": cfg.method, "memory_factor": memory_factor(cfg.method),
         "avg_bleu": avg([r.bleu_comp for r in inc_rows])},
    ]

    report = {
        "config": asdict(cfg),
        "n_records": len(records),
        "n_pairs": len(pairs),
        "n_pairs_included": len(inc_rows),
        "pairs": [asdict(r) for r in rows],
        "grouped_means": grouped_means(rows),
        "delta_histogram": {"edges": [float(e) for e in HIST_EDGES], "by_bucket": hist},
        "delta_totals": {"losing": len(losing), "winning": len(winning),
                         "neutral": len(kept) - len(losing) - len(winning)},
        "off_target": off_table,
        "alignment": lam_table,
        "memory": memory,
    }
    _write_outputs(out_dir, report, rows, cfg.svg)
    return report


def _write_outputs(out_dir: Path, report: dict, rows: Sequence[PairSummary], svg: bool) -> None:
    cols = [f.name for f in fields(PairSummary)]
    write_csv(out_dir / "pairs.csv", cols, ([getattr(r, c) for c in cols] for r in rows))
    (out_dir / "pairs.json").write_text(json.dumps(report["pairs"], indent=1) + "\n")
    write_csv(out_dir / "grouped.csv", ["grouping", "bucket", "mean_rel_diff_pct"],
              ([lvl, b, v] for lvl, d in report["grouped_means"].items() for b, v in d.items()))
    edges = report["delta_histogram"]["edges"]
    write_csv(out_dir / "delta_hist.csv", ["bucket", "bin_lo", "bin_hi", "count", "normalized"],
              ([b, edges[k], edges[k + 1], h["counts"][k], h["normalized"][k]]
               for b, h in report["delta_histogram"]["by_bucket"].items()
               for k in range(len(edges) - 1)))
    off = report["off_target"]
    if off is not None:
        write_csv(out_dir / "offtarget.csv", ["base_pct", "comp_pct", "evaluated", "total_losing"],
                  [[off["base_pct"], off["comp_pct"], off["evaluated"], off["total_losing"]]])
    lam = report["alignment"]
    if lam is not None:
        write_csv(out_dir / "alignment.csv", ["subset", "n", "ratio", "degenerate"],
                  ([k, v["n"], v["ratio"], v["degenerate"]] for k, v in lam.items()))
    write_csv(out_dir / "memory.csv", ["model", "memory_factor", "avg_bleu"],
              ([m["model"], m["memory_factor"], m["avg_bleu"]] for m in report["memory"]))
    (out_dir / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    if svg:
        write_svgs(out_dir, report)


def write_svgs(out_dir: Path, report: dict) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "mtbias"
    meta = {"Date": None}
    grouped = report["grouped_means"]
    fig, axes = plt.subplots(1, 3, figsize=(10, 3), sharey=True)
    for ax, level in zip(axes, ("pair", "source", "target")):
        d = grouped[level]
        ax.bar(list(d), list(d.values()), color="0.4")
        ax.axhline(0.0, color="k", lw=0.5)
        ax.set_title(level)
    axes[0].set_ylabel("relative BLEU difference (%)")
    fig.tight_layout()
    fig.savefig(out_dir / "grouped.svg", metadata=meta)
    plt.close(fig)

    edges = np.asarray(report["delta_histogram"]["edges"])
    centers = (edges[:-1] + edges[1:]) / 2
    fig, ax = plt.subplots(figsize=(6, 3))
    by_bucket = report["delta_histogram"]["by_bucket"]
    width = 0.1 / max(1, len(by_bucket))
    for k, (b, h) in enumerate(by_bucket.items()):
        ax.bar(centers - 0.05 + width * (k + 0.5), h["counts"], width=width, label=b)
    ax.set_xlabel("delta ChrF")
    ax.set_ylabel("sentences")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(out_dir / "delta_hist.svg", metadata=meta)
    plt.close(fig)


# --- decoding and sweeps -------------------------------------------------------------

def translate(cfg: ModelConfig, ws: WeightSet, sources: Sequence[Sequence[int]],
              act_quant=None, threads: int | None = None) -> list[DecodeResult]:
    return parallel_map(lambda s: forward_decode(cfg, ws, s, act_quant), sources, threads)


def sweep(cfg: ModelConfig, ws: WeightSet, sources: Sequence[Sequence[int]],
          references: Sequence[str], ratios: Sequence[float],
          strategies: Sequence[PruneStrategy] = (PruneStrategy.TRANSFORMER_LAYER,),
          tokenizer: str = "whitespace", threads: int | None = None) -> list[dict]:
    """Corpus BLEU of the pruned model for every (strategy, ratio), ratios ascending."""
    if len(sources) != len(references):
        raise ValueError("sources and references differ in length")
    for p in ratios:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"sparsity ratio {p} outside [0, 1]")
    tok = TOKENIZERS[tokenizer]
    refs = [tok(r) for r in references]
    rows = []
    for strategy in strategies:
        strategy = PruneStrategy(strategy)
        for p in sorted(set(ratios)):
            wp = magnitude_prune(ws, p, strategy)
            hyps = [tok(cfg.detokenize(d.tokens)) for d in translate(cfg, wp, sources, None, threads)]
            rows.append({"strategy": strategy.value, "p": p, "bleu": bleu(refs, hyps)})
    return rows


def baseline_bleu(cfg: ModelConfig, ws: WeightSet, sources, references,
                  tokenizer: str = "whitespace", threads: int | None = None) -> float:
    tok = TOKENIZERS[tokenizer]
    hyps = [tok(cfg.detokenize(d.tokens)) for d in translate(cfg, ws, sources, None, threads)]
    return bleu([tok(r) for r in references], hyps)

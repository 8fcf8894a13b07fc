"""Self-contained demo audit on synthetic languages.

Four syllable languages translate round a cycle (aaa -> bbb -> ccc -> ddd -> aaa)
with a hand-built word-for-word toy model. The compressed system is the same
model magnitude-pruned; everything the audit needs is written to one folder.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attention import attention_doc
from .compression import PruneStrategy, magnitude_prune
from .lang_id import save_profiles, train_profiles
from .report import translate
from .schema import write_jsonl
from .synth import DEMO_LANGUAGES, lexicon_weights
from .tensor_store import WeightSet, save_weights
from .text_metrics import TranslationRecord, write_records
from .toy_transformer import ModelConfig

SPECIALS = ("<pad>", "<s>", "</s>")
DEMO_BITEXT = {"aaa": 50_000, "bbb": 500_000, "ccc": 5_000_000, "ddd": 500_000_000}
WORDS_PER_LANGUAGE = 4


@dataclass(frozen=True)
class DemoModel:
    cfg: ModelConfig
    ws: WeightSet
    words: dict[str, list[str]]          # language -> vocabulary words
    mapping: dict[int, int]              # source token -> target token

    def lang_pairs(self) -> list[tuple[str, str]]:
        codes = [L.code for L in DEMO_LANGUAGES]
        return list(zip(codes, codes[1:] + codes[:1]))


def build_model(seed: int = 3, noise: float = 0.004, idle_scale: float = 0.6,
                max_len: int = 12) -> DemoModel:
    rng = np.random.default_rng(seed)
    words: dict[str, list[str]] = {}
    for lang in DEMO_LANGUAGES:
        ws: list[str] = []
        while len(ws) < WORDS_PER_LANGUAGE:
            w = lang.word(rng)
            if w not in ws:
                ws.append(w)
        words[lang.code] = ws
    vocab = list(SPECIALS) + [w for lang in DEMO_LANGUAGES for w in words[lang.code]]
    cfg = ModelConfig(vocab_size=len(vocab), d_model=32, n_heads=4, n_enc_layers=2,
                      n_dec_layers=2, d_ff=64, max_len=max_len, vocab=tuple(vocab))
    index = {w: i for i, w in enumerate(vocab)}
    mapping = {cfg.eos: cfg.eos}
    codes = [L.code for L in DEMO_LANGUAGES]
    for a, b in zip(codes, codes[1:] + codes[:1]):
        for wa, wb in zip(words[a], words[b]):
            mapping[index[wa]] = index[wb]
    weights = lexicon_weights(cfg, mapping, seed=seed, noise=noise, idle_scale=idle_scale)
    return DemoModel(cfg, weights, words, mapping)


def demo_sources(model: DemoModel, n: int, seed: int = 0) -> list[tuple[str, str, list[int]]]:
    """``n`` (src_lang, tgt_lang, token ids) triples, cycling over the language pairs."""
    rng = np.random.default_rng(seed)
    index = {w: i for i, w in enumerate(model.cfg.vocab)}
    pairs = model.lang_pairs()
    out = []
    for k in range(n):
        src, tgt = pairs[k % len(pairs)]
        length = int(rng.integers(4, 9))
        ids = [index[w] for w in rng.choice(model.words[src], size=length)]
        out.append((src, tgt, ids))
    return out


def build_demo(out_dir, n_sentences: int = 64, p: float = 0.3,
               strategy: PruneStrategy = PruneStrategy.TRANSFORMER_LAYER,
               seed: int = 3, noise: float = 0.004, idle_scale: float = 0.6,
               svg: bool = False, threads: int | None = None) -> Path:
    """Write weights, corpus, resources, profiles, attention files and audit.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(seed, noise, idle_scale)
    cfg = model.cfg
    pruned = magnitude_prune(model.ws, p, strategy)
    cfg.to_json(out / "model.json")
    save_weights(model.ws, out / "base.mtbw")
    save_weights(pruned, out / "comp.mtbw")

    items = demo_sources(model, n_sentences, seed)
    sources = [ids for _, _, ids in items]
    base = translate(cfg, model.ws, sources, threads=threads)
    comp = translate(cfg, pruned, sources, threads=threads)
    records, attn_b, attn_c = [], [], []
    for k, ((s, t, ids), db, dc) in enumerate(zip(items, base, comp)):
        pid = f"{s}-{t}-{k:04d}"
        ref = cfg.detokenize([model.mapping[i] for i in ids])
        records.append(TranslationRecord(s, t, cfg.detokenize(ids), ref, cfg.detokenize(db.tokens),
                                         cfg.detokenize(dc.tokens), pid))
        attn_b.append(attention_doc(pid, db.cross_attention))
        attn_c.append(attention_doc(pid, dc.cross_attention))
    write_records(out / "corpus.jsonl", records)
    write_jsonl(out / "attn_base.jsonl", attn_b)
    write_jsonl(out / "attn_comp.jsonl", attn_c)
    (out / "resources.json").write_text(json.dumps(DEMO_BITEXT, indent=1) + "\n")

    # language profiles come from independent running text, not the audited corpus
    corpora = {L.code: L.corpus(200, seed + 100 + i) for i, L in enumerate(DEMO_LANGUAGES)}
    save_profiles(train_profiles(corpora), out / "profiles.json")

    audit = {"corpus": "corpus.jsonl", "resources": "resources.json",
             "profiles": "profiles.json", "attn_base": "attn_base.jsonl",
             "attn_comp": "attn_comp.jsonl", "out_dir": "report",
             "method": f"pruned({p})", "svg": svg}
    if threads:
        audit["threads"] = threads
    path = out / "audit.json"
    path.write_text(json.dumps(audit, indent=1) + "\n")
    return path

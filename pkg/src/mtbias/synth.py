"""Synthetic languages, corpora and hand-built translation models.

Used by the test suite, the demo audit and the experiment scripts. Nothing
here is needed to audit real data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .tensor_store import WeightSet
from .toy_transformer import (
    ModelConfig,
    param_layout,
    sinusoidal_positions,
    uniform,
)


@dataclass(frozen=True)
class SyllableLanguage:
    """Word/sentence generator over a private consonant and vowel inventory."""

    code: str
    consonants: str
    vowels: str
    syllables: tuple[int, int] = (1, 3)

    def word(self, rng: np.random.Generator) -> str:
        n = int(rng.integers(self.syllables[0], self.syllables[1] + 1))
        return "".join(rng.choice(list(self.consonants)) + rng.choice(list(self.vowels))
                       for _ in range(n))

    def sentence(self, rng: np.random.Generator, n_words: tuple[int, int] = (4, 9)) -> str:
        n = int(rng.integers(n_words[0], n_words[1] + 1))
        return " ".join(self.word(rng) for _ in range(n))

    def corpus(self, n: int, seed: int) -> list[str]:
        rng = np.random.default_rng(seed)
        return [self.sentence(rng) for _ in range(n)]


DEMO_LANGUAGES = (
    SyllableLanguage("aaa", "ptk", "ai"),
    SyllableLanguage("bbb", "mnl", "ou"),
    SyllableLanguage("ccc", "szv", "ey"),
    SyllableLanguage("ddd", "bdg", "ao"),
)


def _positional_subspace(d: int, n_pos: int, k: int) -> np.ndarray:
    """Top-k principal directions (d x k) of the centred sinusoidal encodings."""
    pe = sinusoidal_positions(n_pos, d)
    pe = pe - pe.mean(axis=1, keepdims=True)
    pe /= np.linalg.norm(pe, axis=1, keepdims=True)
    return np.linalg.svd(pe.T, full_matrices=False)[0][:, :k]


def lexicon_weights(cfg: ModelConfig, mapping: Mapping[int, int], seed: int = 0,
                    noise: float = 0.0, emb_norm: float = 1.0, logit_gap: float = 12.0,
                    value_gain: float = 4.0, logit_gain: float = 4.0,
                    idle_scale: float = 0.0, n_pos: int | None = None) -> WeightSet:
    """Weights that translate token-by-token: output i is ``mapping[src[i]]``.

    Cross-attention reads positions through the leading principal subspace of
    the centred sinusoidal encodings, so every head at decoder step i focuses
    on source position i. Token embeddings live in a random orthonormal
    subspace orthogonal to it (and to the all-ones direction that LayerNorm
    removes); the value path applies the lexicon. ``mapping`` must send eos
    to eos.

    With ``idle_scale > 0`` the weights are made dense the way trained ones
    are: sublayers with no job get uniform(-idle_scale, idle_scale) weights
    but an output projection whose rows are all equal, so they only write
    along the all-ones direction and the next LayerNorm cancels them exactly;
    the cross-attention value/output pair is rotated by a random orthogonal
    matrix. Magnitude pruning breaks both cancellations. ``noise`` adds
    uniform(-noise, noise) to every tensor.
    """
    d, dh = cfg.d_model, cfg.d_head
    if mapping.get(cfg.eos) != cfg.eos:
        raise ValueError("mapping must send eos to eos")
    tokens = sorted(set(mapping) | set(mapping.values()))
    m = len(tokens)
    if 1 + dh + m > d:
        raise ValueError(f"{m} token directions do not fit in d_model={d}")
    n_pos = n_pos or cfg.max_len + 1
    pos = _positional_subspace(d, n_pos, dh)                 # d x dh
    fixed = np.hstack([np.ones((d, 1)) / math.sqrt(d), pos])
    raw = uniform(seed, d * (d - fixed.shape[1]), 1.0).reshape(d, -1)
    raw -= fixed @ (fixed.T @ raw)
    tok_basis = np.linalg.qr(raw)[0][:, :m]
    u = {t: tok_basis[:, i] for i, t in enumerate(tokens)}

    # attention sharpness from the worst-case diagonal margin of the position kernel
    pe = sinusoidal_positions(n_pos, d)
    pe -= pe.mean(axis=1, keepdims=True)
    q = (pe / np.linalg.norm(pe, axis=1, keepdims=True)) @ pos * math.sqrt(d)
    keys = pe @ pos / np.sqrt((emb_norm ** 2 + (pe ** 2).sum(axis=1, keepdims=True)) / d)
    kern = q @ keys.T
    margin = np.min(np.diag(kern) - np.max(np.where(np.eye(n_pos, dtype=bool), -np.inf, kern), 1))
    if margin <= 0:
        raise ValueError("positional kernel is not diagonal-dominant; lower max_len")
    qk = np.tile(pos.T, (cfg.n_heads, 1)) * math.sqrt(logit_gap * math.sqrt(dh) / margin)

    wv = value_gain * sum(np.outer(u[mapping[s]], u[s]) for s in mapping)

    params = {name: np.zeros(shape) for name, (shape, _, _) in param_layout(cfg).items()}
    for name in params:
        if ".ln" in name and name.endswith(".g"):
            params[name][:] = 1.0
    for s in mapping:
        params["enc.embed"][s] = emb_norm * u[s]
    for t in tokens:
        params["dec.out_proj"][t] = logit_gain * u[t]
    rot = np.eye(d)
    if idle_scale:
        counter = [0]

        def draw(*shape):
            n = int(np.prod(shape))
            out = uniform(seed + 2, n, idle_scale, counter[0]).reshape(shape)
            counter[0] += n
            return out

        rot = np.linalg.qr(draw(d, d))[0]
        idle_attn = [f"enc.{i}.self_attn" for i in range(cfg.n_enc_layers)]
        idle_attn += [f"dec.{i}.self_attn" for i in range(cfg.n_dec_layers)]
        idle_ffn = [f"enc.{i}.ffn" for i in range(cfg.n_enc_layers)]
        idle_ffn += [f"dec.{i}.ffn" for i in range(cfg.n_dec_layers)]
        for p in idle_attn:
            for k in ("wq", "bq", "wk", "bk", "wv", "bv"):
                params[f"{p}.{k}"] = draw(*params[f"{p}.{k}"].shape)
            params[p + ".wo"] = np.ones((d, 1)) * draw(1, d)
            params[p + ".bo"] = np.full(d, draw(1)[0])
        for p in idle_ffn:
            params[p + ".w1"] = draw(cfg.d_ff, d)
            params[p + ".b1"] = draw(cfg.d_ff)
            params[p + ".w2"] = np.ones((d, 1)) * draw(1, cfg.d_ff)
            params[p + ".b2"] = np.full(d, draw(1)[0])
    for i in range(cfg.n_dec_layers):
        p = f"dec.{i}.cross_attn"
        params[p + ".wq"] = qk.copy()
        params[p + ".wk"] = qk.copy()
        params[p + ".wv"] = rot.T @ wv
        params[p + ".wo"] = rot.copy()
    if noise:
        drawn = 0
        for name in sorted(params):
            n = params[name].size
            params[name] = params[name] + uniform(seed + 1, n, noise, drawn).reshape(
                params[name].shape)
            drawn += n
    layout = param_layout(cfg)
    return WeightSet({n: a.astype(np.float32) for n, a in params.items()},
                     {n: layout[n][1] for n in layout}, {n: layout[n][2] for n in layout})

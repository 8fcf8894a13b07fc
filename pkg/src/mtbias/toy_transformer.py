"""A small pre-norm transformer encoder-decoder with greedy decoding.

It exists to be compressed and audited: weights come from a :class:`WeightSet`,
decoding is deterministic, and every decode reports the cross-attention
averaged over all decoder layers and heads.

Architecture: sinusoidal positions added to untied, unscaled token
embeddings; pre-norm residual blocks (LayerNorm, eps 1e-5); ReLU
feed-forward; linear weights stored ``[out, in]`` with separate biases.
The source is terminated with ``eos`` before encoding when it does not
already end with one, so attention columns cover ``len(src) + 1`` positions
in that case.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .compression import fake_quantize
from .tensor_store import WeightSet

LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 16
    d_model: int = 32
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: int = 64
    max_len: int = 16
    bos: int = 1
    eos: int = 2
    pad: int = 0
    vocab: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        for k in ("vocab_size", "d_model", "n_heads", "n_enc_layers", "n_dec_layers",
                  "d_ff", "max_len"):
            if getattr(self, k) < 1:
                raise ValueError(f"{k} must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        special = (self.bos, self.eos, self.pad)
        if len(set(special)) != 3:
            raise ValueError("bos, eos and pad must be distinct")
        if any(not 0 <= t < self.vocab_size for t in special):
            raise ValueError("special token ids must be < vocab_size")
        if self.vocab and len(self.vocab) != self.vocab_size:
            raise ValueError("vocab list length must equal vocab_size")
        object.__setattr__(self, "vocab", tuple(self.vocab))

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_json(self, path) -> None:
        doc = asdict(self)
        doc["vocab"] = list(self.vocab)
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")

    @classmethod
    def from_json(cls, path) -> "ModelConfig":
        doc = json.loads(Path(path).read_text())
        doc["vocab"] = tuple(doc.get("vocab", ()))
        return cls(**doc)

    def detokenize(self, ids: Sequence[int]) -> str:
        if not self.vocab:
            return " ".join(str(i) for i in ids if i not in (self.bos, self.eos, self.pad))
        return " ".join(self.vocab[i] for i in ids if i not in (self.bos, self.eos, self.pad))

    def tokenize(self, text: str) -> list[int]:
        index = {w: i for i, w in enumerate(self.vocab)}
        try:
            return [index[w] for w in text.split()]
        except KeyError as exc:
            raise ValueError(f"word {exc.args[0]!r} not in model vocabulary") from exc


@dataclass(frozen=True)
class DecodeResult:
    tokens: list[int]
    cross_attention: np.ndarray   # |tokens| x |encoded source|


# --- parameter layout ---------------------------------------------------------

_ATTN = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")


def _attn_shapes(d):
    return {"wq": (d, d), "bq": (d,), "wk": (d, d), "bk": (d,),
            "wv": (d, d), "bv": (d,), "wo": (d, d), "bo": (d,)}


def param_layout(cfg: ModelConfig) -> dict[str, tuple[tuple[int, ...], str, str]]:
    """name -> (shape, layer unit, group) for every parameter the config implies."""
    d, f, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    out = {}

    def ln(prefix, unit):
        out[f"{prefix}.g"] = ((d,), unit, "other")
        out[f"{prefix}.b"] = ((d,), unit, "other")

    def attn(prefix, unit):
        for k, shape in _attn_shapes(d).items():
            out[f"{prefix}.{k}"] = (shape, unit, "attention")

    def ffn(prefix, unit):
        out[f"{prefix}.w1"] = ((f, d), unit, "feedforward")
        out[f"{prefix}.b1"] = ((f,), unit, "feedforward")
        out[f"{prefix}.w2"] = ((d, f), unit, "feedforward")
        out[f"{prefix}.b2"] = ((d,), unit, "feedforward")

    out["enc.embed"] = ((v, d), "enc.embed", "embedding")
    for i in range(cfg.n_enc_layers):
        u = f"enc.{i}"
        ln(f"{u}.ln1", u)
        attn(f"{u}.self_attn", u)
        ln(f"{u}.ln2", u)
        ffn(f"{u}.ffn", u)
    ln("enc.ln_f", "enc.ln_f")
    out["dec.embed"] = ((v, d), "dec.embed", "embedding")
    for i in range(cfg.n_dec_layers):
        u = f"dec.{i}"
        ln(f"{u}.ln1", u)
        attn(f"{u}.self_attn", u)
        ln(f"{u}.ln2", u)
        attn(f"{u}.cross_attn", u)
        ln(f"{u}.ln3", u)
        ffn(f"{u}.ffn", u)
    ln("dec.ln_f", "dec.ln_f")
    out["dec.out_proj"] = ((v, d), "dec.out_proj", "embedding")
    return dict(sorted(out.items()))


# --- deterministic initialisation ---------------------------------------------

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, n: int, start: int = 0) -> np.ndarray:
    """Outputs ``start+1 .. start+n`` of the SplitMix64 stream seeded with ``seed``."""
    k = np.arange(start + 1, start + n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed % 2**64) + k * _GAMMA
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def uniform(seed: int, n: int, scale: float, start: int = 0) -> np.ndarray:
    """``n`` draws from uniform(-scale, scale) using the top 53 bits of SplitMix64."""
    u = (splitmix64(seed, n, start) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    return scale * (2.0 * u - 1.0)


def make_demo_weights(cfg: ModelConfig, seed: int) -> WeightSet:
    """Reproducible random weights: uniform(-s, s) with s = 0.1/sqrt(d_model).

    LayerNorm gains start at 1 and LayerNorm biases at 0; every other tensor
    consumes the SplitMix64 stream in lexicographic name order, row-major.
    """
    layout = param_layout(cfg)
    s = 0.1 / math.sqrt(cfg.d_model)
    params, layer_of, group_of = {}, {}, {}
    drawn = 0
    for name, (shape, unit, group) in layout.items():
        n = int(np.prod(shape))
        if ".ln" in name and name.endswith(".g"):
            arr = np.ones(shape)
        elif ".ln" in name and name.endswith(".b"):
            arr = np.zeros(shape)
        else:
            arr = uniform(seed, n, s, start=drawn).reshape(shape)
            drawn += n
        params[name] = arr.astype(np.float32)
        layer_of[name] = unit
        group_of[name] = group
    return WeightSet(params, layer_of, group_of)


# --- forward pass --------------------------------------------------------------

def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(0, d, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)[:, : d // 2]
    return pe


def layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * g + b


def softmax(x, axis=-1):
    x = x - x.max(axis=axis, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=axis, keepdims=True)


class ToyTransformer:
    """Bound (config, weights) pair. Stateless between calls.

    ``act_quant`` maps a linear weight name to the (scale, zero_point) used to
    fake-quantize that layer's input; ``record`` collects those inputs instead.
    """

    def __init__(self, cfg: ModelConfig, ws: WeightSet,
                 act_quant: Mapping[str, tuple[float, int]] | None = None,
                 record: dict[str, list[np.ndarray]] | None = None):
        missing = [n for n in param_layout(cfg) if n not in ws]
        if missing:
            raise KeyError(f"weights lack {len(missing)} parameter(s), e.g. {missing[0]!r}")
        for name, (shape, _, _) in param_layout(cfg).items():
            if ws[name].shape != shape:
                raise ValueError(f"parameter {name!r} has shape {ws[name].shape}, expected {shape}")
        self.cfg = cfg
        self.w = {n: ws[n].astype(np.float64) for n in param_layout(cfg)}
        self.act_quant = dict(act_quant or {})
        self.record = record

    def linear(self, x, wname, bname=None):
        if self.record is not None:
            self.record.setdefault(wname, []).append(np.array(x, dtype=np.float32))
        if wname in self.act_quant:
            x = fake_quantize(x, *self.act_quant[wname])
        y = x @ self.w[wname].T
        if bname is not None:
            y = y + self.w[bname]
        return y

    def ln(self, x, prefix):
        return layer_norm(x, self.w[prefix + ".g"], self.w[prefix + ".b"])

    def attention(self, prefix, xq, xkv, causal=False):
        """Multi-head attention; returns (output, probs of shape heads x |q| x |kv|)."""
        h, dh = self.cfg.n_heads, self.cfg.d_head
        q = self.linear(xq, prefix + ".wq", prefix + ".bq")
        k = self.linear(xkv, prefix + ".wk", prefix + ".bk")
        v = self.linear(xkv, prefix + ".wv", prefix + ".bv")
        q = q.reshape(len(xq), h, dh).transpose(1, 0, 2)
        k = k.reshape(len(xkv), h, dh).transpose(1, 0, 2)
        v = v.reshape(len(xkv), h, dh).transpose(1, 0, 2)
        scores = q @ k.transpose(0, 2, 1) / math.sqrt(dh)
        if causal:
            mask = np.triu(np.ones((len(xq), len(xkv)), dtype=bool), 1)
            scores = np.where(mask, -np.inf, scores)
        probs = softmax(scores)
        ctx = (probs @ v).transpose(1, 0, 2).reshape(len(xq), h * dh)
        return self.linear(ctx, prefix + ".wo", prefix + ".bo"), probs

    def ffn(self, x, prefix):
        hdn = np.maximum(self.linear(x, prefix + ".w1", prefix + ".b1"), 0.0)
        return self.linear(hdn, prefix + ".w2", prefix + ".b2")

    def encode(self, src: Sequence[int]) -> np.ndarray:
        x = self.w["enc.embed"][list(src)] + sinusoidal_positions(len(src), self.cfg.d_model)
        for i in range(self.cfg.n_enc_layers):
            p = f"enc.{i}"
            hn = self.ln(x, p + ".ln1")
            x = x + self.attention(p + ".self_attn", hn, hn)[0]
            x = x + self.ffn(self.ln(x, p + ".ln2"), p + ".ffn")
        return self.ln(x, "enc.ln_f")

    def decode_logits(self, prefix_ids: Sequence[int], memory: np.ndarray):
        """Logits for the last prefix position and its layer/head-mean cross-attention row."""
        y = self.w["dec.embed"][list(prefix_ids)] + sinusoidal_positions(
            len(prefix_ids), self.cfg.d_model)
        rows = []
        for i in range(self.cfg.n_dec_layers):
            p = f"dec.{i}"
            hn = self.ln(y, p + ".ln1")
            y = y + self.attention(p + ".self_attn", hn, hn, causal=True)[0]
            out, probs = self.attention(p + ".cross_attn", self.ln(y, p + ".ln2"), memory)
            y = y + out
            rows.append(probs[:, -1, :])
            y = y + self.ffn(self.ln(y, p + ".ln3"), p + ".ffn")
        h = self.ln(y[-1:], "dec.ln_f")
        logits = self.linear(h, "dec.out_proj")[0]
        return logits, np.mean(np.concatenate(rows, axis=0), axis=0)

    def check_source(self, src: Sequence[int]) -> list[int]:
        cfg = self.cfg
        src = [int(t) for t in src]
        if not src:
            raise ValueError("source sequence is empty")
        if len(src) > cfg.max_len:
            raise ValueError(f"source length {len(src)} exceeds max_len {cfg.max_len}")
        bad = [t for t in src if not 0 <= t < cfg.vocab_size]
        if bad:
            raise ValueError(f"token id {bad[0]} out of range for vocab_size {cfg.vocab_size}")
        if src[-1] != cfg.eos:
            src.append(cfg.eos)
        return src

    def greedy(self, src: Sequence[int]) -> DecodeResult:
        cfg = self.cfg
        memory = self.encode(self.check_source(src))
        prefix = [cfg.bos]
        out, rows = [], []
        while len(out) < cfg.max_len:
            logits, row = self.decode_logits(prefix, memory)
            tok = int(np.argmax(logits))
            out.append(tok)
            rows.append(row / row.sum())
            if tok == cfg.eos:
                break
            prefix.append(tok)
        return DecodeResult(out, np.vstack(rows))


def forward_decode(cfg: ModelConfig, ws: WeightSet, src: Sequence[int],
                   act_quant: Mapping[str, tuple[float, int]] | None = None) -> DecodeResult:
    """Greedy decode of ``src``; deterministic for fixed (cfg, ws, src)."""
    return ToyTransformer(cfg, ws, act_quant).greedy(src)


def collect_activations(cfg: ModelConfig, ws: WeightSet,
                        sources: Sequence[Sequence[int]]) -> dict[str, list[np.ndarray]]:
    """Inputs seen by every linear layer while decoding ``sources``, keyed by weight name."""
    record: dict[str, list[np.ndarray]] = {}
    model = ToyTransformer(cfg, ws, record=record)
    for src in sources:
        model.greedy(src)
    return record

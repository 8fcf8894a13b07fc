"""Light compression: magnitude pruning and int8 post-training quantization."""

from __future__ import annotations

import enum
import re
import struct
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .tensor_store import (
    WeightFormatError,
    WeightSet,
    _Reader,
    encode_header,
    parse_tags,
    tags_json,
)


class PruneStrategy(enum.Enum):
    TRANSFORMER_LAYER = "transformer-layer"
    PER_MODULE = "per-module"
    SEPARATE_ATTN_FFN = "separate-attn-ffn"


def prune_count(p: float, n: int) -> int:
    """round(p * n), half away from zero, computed on the decimal form of p."""
    return int((Decimal(repr(float(p))) * n).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def prune_pools(ws: WeightSet, strategy: PruneStrategy) -> dict[object, list[str]]:
    """Map pool key -> parameter names (lexicographic) pooled together."""
    strategy = PruneStrategy(strategy)
    pools: dict[object, list[str]] = {}
    for name in ws.names():
        if strategy is PruneStrategy.PER_MODULE:
            key = name
        elif strategy is PruneStrategy.TRANSFORMER_LAYER:
            key = ws.layer_of[name]
        else:
            key = (ws.layer_of[name], ws.group_of[name])
        pools.setdefault(key, []).append(name)
    return pools


def magnitude_prune(ws: WeightSet, p: float, strategy: PruneStrategy) -> WeightSet:
    """Zero the ``round(p*n)`` smallest-magnitude values of every pool.

    Ties in magnitude are broken by position in the pool, where a pool is the
    concatenation of its flattened tensors in name order.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"sparsity ratio must lie in [0, 1], got {p}")
    out = {}
    for names in prune_pools(ws, strategy).values():
        flat = np.concatenate([ws[n].ravel() for n in names])
        k = prune_count(p, flat.size)
        if k:
            order = np.argsort(np.abs(flat), kind="stable")
            flat = flat.copy()
            flat[order[:k]] = 0.0
        offset = 0
        for n in names:
            size = ws[n].size
            out[n] = flat[offset:offset + size].reshape(ws[n].shape)
            offset += size
    return ws.replace(out)


@dataclass(frozen=True)
class QuantSpec:
    """int8 PTQ settings: symmetric per-channel weights, asymmetric per-tensor activations."""

    bits: int = 8
    calib_grid: int = 100
    activation_sites: tuple[str, ...] = ()

    def __post_init__(self):
        if self.bits != 8:
            raise ValueError("only 8-bit quantization is supported")
        if self.calib_grid < 2:
            raise ValueError("calib_grid must be at least 2")


@dataclass(frozen=True)
class QuantizedTensor:
    q: np.ndarray                 # int8, same shape as the source tensor
    scales: np.ndarray            # float64, one per channel (axis 0) or one per tensor
    zero_points: np.ndarray       # int32, same length as scales
    shape: tuple[int, ...] = field(default=())

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.int8)
        shape = tuple(self.shape) or q.shape
        object.__setattr__(self, "q", q.reshape(shape))
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "scales", np.asarray(self.scales, dtype=np.float64).ravel())
        object.__setattr__(self, "zero_points",
                           np.asarray(self.zero_points, dtype=np.int32).ravel())
        if len(self.scales) != len(self.zero_points):
            raise ValueError("scales and zero_points differ in length")
        if len(self.scales) not in (1, shape[0]):
            raise ValueError(f"expected 1 or {shape[0]} scales, got {len(self.scales)}")
        if not np.all(self.scales > 0):
            raise ValueError("scales must be strictly positive")


def _round_clip(x: np.ndarray, lo: int, hi: int) -> np.ndarray:
    # np.rint rounds half to even
    return np.clip(np.rint(x), lo, hi)


def channel_candidates(absmax: np.ndarray, grid: int) -> np.ndarray:
    """Clip thresholds ``absmax * k / grid`` for k = 1..grid, shape (C, grid)."""
    k = np.arange(1, grid + 1, dtype=np.float64)
    return absmax[:, None] * k[None, :] / grid


def symmetric_mse(rows: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Squared reconstruction error of each row at each threshold, shape (C, G)."""
    scale = thresholds / 127.0
    q = _round_clip(rows[:, None, :] / scale[:, :, None], -127, 127)
    err = rows[:, None, :] - q * scale[:, :, None]
    return np.sum(err * err, axis=2)


def quantize_weight(w: np.ndarray, grid: int = 100, chunk: int = 256) -> QuantizedTensor:
    """Symmetric per-output-channel int8 with MSE-optimal clip threshold."""
    w = np.asarray(w)
    rows = w.reshape(w.shape[0], -1).astype(np.float64)
    absmax = np.max(np.abs(rows), axis=1)
    scales = np.ones(rows.shape[0])
    live = np.flatnonzero(absmax > 0)
    for start in range(0, live.size, chunk):
        idx = live[start:start + chunk]
        cand = channel_candidates(absmax[idx], grid)
        mse = symmetric_mse(rows[idx], cand)
        best = np.argmin(mse, axis=1)   # first minimum: smallest threshold on ties
        scales[idx] = cand[np.arange(idx.size), best] / 127.0
    q = _round_clip(rows / scales[:, None], -127, 127).astype(np.int8)
    return QuantizedTensor(q.reshape(w.shape), scales, np.zeros(rows.shape[0], np.int32), w.shape)


def _asym_params(lo: float, hi: float) -> tuple[float, int]:
    scale = (hi - lo) / 255.0
    zp = int(np.clip(np.rint(-128 - lo / scale), -128, 127))
    return scale, zp


def activation_mse(x: np.ndarray, lo: float, hi: float) -> float:
    scale, zp = _asym_params(lo, hi)
    q = _round_clip(x / scale + zp, -128, 127)
    err = x - (q - zp) * scale
    return float(np.sum(err * err))


def calibrate_activation(batches: Sequence[np.ndarray], grid: int = 100) -> tuple[float, int]:
    """Per-tensor asymmetric (scale, zero_point) by MSE search over range shrink factors.

    The observed range is widened to include zero, then candidates
    ``(lo * k/grid, hi * k/grid)`` for k = 1..grid are scored.
    """
    if not batches:
        raise ValueError("empty calibration set")
    x = np.concatenate([np.asarray(b, dtype=np.float64).ravel() for b in batches])
    if x.size == 0:
        raise ValueError("empty calibration set")
    lo, hi = min(float(x.min()), 0.0), max(float(x.max()), 0.0)
    if hi == lo:
        return 1.0, 0
    best = None
    for k in range(1, grid + 1):
        f = k / grid
        mse = activation_mse(x, lo * f, hi * f)
        if best is None or mse < best[0]:
            best = (mse, lo * f, hi * f)
    return _asym_params(best[1], best[2])


def fake_quantize(x: np.ndarray, scale: float, zero_point: int) -> np.ndarray:
    q = _round_clip(x / scale + zero_point, -128, 127)
    return (q - zero_point) * scale


def quantize(ws: WeightSet, calib: Mapping[str, Sequence[np.ndarray]] | None = None,
             spec: QuantSpec = QuantSpec()) -> dict[str, QuantizedTensor]:
    """Quantize every weight tensor; calibrate the declared activation sites.

    Returns weights under their own names and each activation site under
    ``"act:" + site``, holding the int8 image of its calibration data with a
    single per-tensor scale and zero point.
    """
    calib = dict(calib or {})
    out = {name: quantize_weight(arr, spec.calib_grid) for name, arr in ws.params.items()}
    sites = list(spec.activation_sites) + [s for s in calib if s not in spec.activation_sites]
    for site in sites:
        batches = calib.get(site)
        if not batches:
            raise ValueError(f"no calibration batches for activation site {site!r}")
        scale, zp = calibrate_activation(batches, spec.calib_grid)
        x = np.concatenate([np.asarray(b, dtype=np.float64).ravel() for b in batches])
        q = _round_clip(x / scale + zp, -128, 127).astype(np.int8)
        out["act:" + site] = QuantizedTensor(q, [scale], [zp], q.shape)
    return out


def dequantize(qt: QuantizedTensor) -> np.ndarray:
    # one row per scale: per-channel rows, or the whole tensor as one row
    q = qt.q.reshape(len(qt.scales), -1).astype(np.float64)
    vals = qt.scales[:, None] * (q - qt.zero_points[:, None])
    return vals.reshape(qt.shape).astype(np.float32)


def dequantize_weights(qmap: Mapping[str, QuantizedTensor], like: WeightSet) -> WeightSet:
    """Float WeightSet rebuilt from quantized weights, tagged like ``like``."""
    return like.replace({n: dequantize(qmap[n]) for n in like.names()})


def activation_params(qmap: Mapping[str, QuantizedTensor]) -> dict[str, tuple[float, int]]:
    return {name[4:]: (float(qt.scales[0]), int(qt.zero_points[0]))
            for name, qt in qmap.items() if name.startswith("act:")}


# --- MTBQ file format -------------------------------------------------------
# b"MTBQ" | version u32 | count u32
# per tensor: header as MTBW | n_scales u32 | scales f64 * n | zero_points i32 * n | int8 payload
# trailing JSON with the source WeightSet's layer/group maps

QMAGIC = b"MTBQ"


def save_quantized(qmap: Mapping[str, QuantizedTensor], ws: WeightSet, path) -> None:
    names = sorted(qmap)
    chunks = [QMAGIC, struct.pack("<II", 1, len(names))]
    for name in names:
        qt = qmap[name]
        chunks.append(encode_header(name, qt.shape))
        chunks.append(struct.pack("<I", len(qt.scales)))
        chunks.append(qt.scales.astype("<f8").tobytes())
        chunks.append(qt.zero_points.astype("<i4").tobytes())
        chunks.append(qt.q.astype(np.int8).tobytes())
    chunks.append(tags_json(ws))
    Path(path).write_bytes(b"".join(chunks))


def load_quantized(path) -> tuple[dict[str, QuantizedTensor], dict, dict]:
    rd = _Reader(Path(path).read_bytes(), path)
    if rd.take(4, "magic") != QMAGIC:
        raise WeightFormatError(f"{path}: bad magic, expected {QMAGIC!r}")
    version, count = rd.unpack("<II", "header")
    if version != 1:
        raise WeightFormatError(f"{path}: unsupported format version {version}")
    out = {}
    for i in range(count):
        name, shape = rd.header(i)
        (n,) = rd.unpack("<I", f"scale count of {name!r}")
        scales = np.frombuffer(rd.take(8 * n, f"scales of {name!r}"), "<f8")
        zps = np.frombuffer(rd.take(4 * n, f"zero points of {name!r}"), "<i4")
        size = int(np.prod(shape))
        q = np.frombuffer(rd.take(size, f"payload of {name!r}"), np.int8).reshape(shape)
        try:
            out[name] = QuantizedTensor(q.copy(), scales.copy(), zps.copy(), shape)
        except ValueError as exc:
            raise WeightFormatError(f"{path}: tensor {name!r}: {exc}") from exc
    layer_of, group_of = parse_tags(rd.rest(), path)
    return out, layer_of, group_of


# --- memory footprint --------------------------------------------------------

_PRUNED = re.compile(r"^pruned\(\s*([0-9.]+)\s*\)$")


def memory_factor(method: str) -> float:
    """Model size relative to float32 dense: baseline, pruned(p) or quantized-int8."""
    method = method.strip().lower()
    if method == "baseline":
        return 1.0
    if method in ("quantized-int8", "quantized"):
        return 8 / 32
    m = _PRUNED.match(method)
    if m:
        p = Decimal(m.group(1))
        if not 0 <= p <= 1:
            raise ValueError(f"sparsity ratio out of range in {method!r}")
        return float(1 - p)
    raise ValueError(f"unknown compression method {method!r}")

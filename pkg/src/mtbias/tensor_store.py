"""Named float32 parameter collections and the MTBW binary weight format.

A tensor is a plain ``numpy.ndarray`` of dtype float32. A :class:`WeightSet`
groups named tensors into layer units and functional groups, which is the
information the pruning strategies need.

File layout (all integers little-endian)::

    b"MTBW" | version u32 | count u32
    per tensor, in lexicographic name order:
        name_len u16 | name utf-8 | rank u8 | dims u32 * rank | float32 * prod(dims)
    trailing utf-8 JSON: {"group_of": {...}, "layer_of": {...}}
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"MTBW"
FORMAT_VERSION = 1
GROUPS = ("attention", "feedforward", "embedding", "other")


class WeightFormatError(ValueError):
    """Raised when a weight file or WeightSet violates the format contract."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float32, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class WeightSet:
    """Immutable ordered map of parameter name -> float32 array.

    ``layer_of`` assigns each parameter to a layer unit and ``group_of`` to one
    of :data:`GROUPS`. Names are kept in lexicographic order.
    """

    params: Mapping[str, np.ndarray]
    layer_of: Mapping[str, str] = field(default_factory=dict)
    group_of: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        names = sorted(self.params)
        for name in names:
            if name not in self.layer_of:
                raise WeightFormatError(f"tensor {name!r} has no layer assignment")
            if name not in self.group_of:
                raise WeightFormatError(f"tensor {name!r} has no group assignment")
            if self.group_of[name] not in GROUPS:
                raise WeightFormatError(
                    f"tensor {name!r} has unknown group {self.group_of[name]!r}")
        extra = (set(self.layer_of) | set(self.group_of)) - set(names)
        if extra:
            raise WeightFormatError(f"layer/group maps name unknown tensors: {sorted(extra)}")
        params = {}
        for name in names:
            arr = _freeze(self.params[name])
            if arr.ndim == 0 or any(d < 1 for d in arr.shape):
                raise WeightFormatError(f"tensor {name!r} has invalid shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise WeightFormatError(f"tensor {name!r} contains non-finite values")
            params[name] = arr
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "layer_of", {n: self.layer_of[n] for n in names})
        object.__setattr__(self, "group_of", {n: self.group_of[n] for n in names})

    def __len__(self):
        return len(self.params)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def replace(self, params: Mapping[str, np.ndarray]) -> "WeightSet":
        """New WeightSet with the same tags and substituted tensors."""
        merged = dict(self.params)
        for name, arr in params.items():
            if name not in merged:
                raise KeyError(name)
            if np.shape(arr) != merged[name].shape:
                raise WeightFormatError(
                    f"shape change for {name!r}: {merged[name].shape} -> {np.shape(arr)}")
            merged[name] = arr
        return WeightSet(merged, self.layer_of, self.group_of)

    def equals(self, other: "WeightSet") -> bool:
        if self.names() != other.names():
            return False
        if self.layer_of != other.layer_of or self.group_of != other.group_of:
            return False
        return all(
            self[n].shape == other[n].shape
            and self[n].tobytes() == other[n].tobytes()
            for n in self.names()
        )

    def total_size(self) -> int:
        return sum(a.size for a in self.params.values())


def sparsity(ws: WeightSet) -> float:
    """Fraction of values exactly equal to zero."""
    total = ws.total_size()
    if total == 0:
        raise ValueError("sparsity of an empty WeightSet is undefined")
    zeros = sum(int(np.count_nonzero(a == 0.0)) for a in ws.params.values())
    return zeros / total


def tags_json(ws: WeightSet) -> bytes:
    # canonical form so that load -> save is byte-identical
    doc = {"group_of": ws.group_of, "layer_of": ws.layer_of}
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def encode_header(name: str, shape: tuple[int, ...]) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise WeightFormatError(f"tensor name too long: {name[:40]!r}...")
    if len(shape) > 0xFF:
        raise WeightFormatError(f"tensor {name!r} rank {len(shape)} exceeds 255")
    return (struct.pack("<H", len(raw)) + raw + struct.pack("<B", len(shape))
            + struct.pack(f"<{len(shape)}I", *shape))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise WeightFormatError(f"{self.path}: truncated file while reading {what}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def header(self, index: int) -> tuple[str, tuple[int, ...]]:
        (name_len,) = self.unpack("<H", f"name length of tensor #{index}")
        try:
            name = self.take(name_len, f"name of tensor #{index}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightFormatError(f"{self.path}: tensor #{index} name is not utf-8") from exc
        (rank,) = self.unpack("<B", f"rank of {name!r}")
        shape = self.unpack(f"<{rank}I", f"dims of {name!r}")
        if rank == 0 or any(d == 0 for d in shape):
            raise WeightFormatError(f"{self.path}: tensor {name!r} has invalid shape {shape}")
        return name, tuple(shape)

    def rest(self) -> bytes:
        chunk = self.buf[self.pos:]
        self.pos = len(self.buf)
        return chunk


def parse_tags(raw: bytes, path) -> tuple[dict, dict]:
    try:
        doc = json.loads(raw.decode("utf-8"))
        return dict(doc["layer_of"]), dict(doc["group_of"])
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise WeightFormatError(f"{path}: malformed trailing layer/group JSON") from exc


def save_weights(ws: WeightSet, path) -> None:
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(ws))]
    for name, arr in ws.params.items():
        chunks.append(encode_header(name, arr.shape))
        chunks.append(arr.astype("<f4").tobytes())
    chunks.append(tags_json(ws))
    Path(path).write_bytes(b"".join(chunks))


def load_weights(path) -> WeightSet:
    rd = _Reader(Path(path).read_bytes(), path)
    if rd.take(4, "magic") != MAGIC:
        raise WeightFormatError(f"{path}: bad magic, expected {MAGIC!r}")
    version, count = rd.unpack("<II", "header")
    if version != FORMAT_VERSION:
        raise WeightFormatError(f"{path}: unsupported format version {version}")
    params = {}
    prev = None
    for i in range(count):
        name, shape = rd.header(i)
        if prev is not None and name <= prev:
            raise WeightFormatError(f"{path}: tensor {name!r} out of lexicographic order")
        prev = name
        n = int(np.prod(shape))
        payload = rd.take(4 * n, f"payload of {name!r} ({n} values declared)")
        arr = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise WeightFormatError(f"{path}: tensor {name!r} contains non-finite values")
        params[name] = arr
    try:
        layer_of, group_of = parse_tags(rd.rest(), path)
    except WeightFormatError:
        if prev is None:
            raise
        # a short payload swallows the metadata, so blame the last tensor read
        raise WeightFormatError(
            f"{path}: payload of tensor {prev!r} does not match its declared "
            f"{params[prev].size} values (file truncated or trailing metadata corrupt)") from None
    try:
        return WeightSet(params, layer_of, group_of)
    except WeightFormatError as exc:
        raise WeightFormatError(f"{path}: {exc}") from exc

"""ESWT binary weight container (little-endian).

Layout::

    b"ESWT"  u16 version  u16 layer_count
    per layer:
        u8 kind (1 conv1d, 2 tconv1d, 3 dense)  u8 rank  u32 x rank weight dims
        weight block, then bias block
    block:
        u8 scheme (0 f32, 1 f16, 2 int8, 3 int4, 4 int2)
        f32 scale            integer schemes only
        packed data          length implied by element count and scheme

The bias length is the layer's output width, read from the weight dims.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .cnn.model import KIND_CODES, KIND_NAMES, WeightStore
from .errors import DataError
from .quant import QuantizedLayer, QuantizedTensor, QuantizedWeightStore, QuantScheme, packed_nbytes, quantize

MAGIC = b"ESWT"
VERSION = 1


class ContainerError(DataError):
    pass


def _bias_len(kind: str, dims: tuple[int, ...]) -> int:
    return dims[1] if kind == "tconv1d" else dims[-1]


def _block(t: QuantizedTensor) -> bytes:
    out = struct.pack("<B", t.scheme.code)
    if t.scheme.is_integer:
        out += struct.pack("<f", t.scale)
    return out + t.payload


def encode(store: QuantizedWeightStore | WeightStore) -> bytes:
    if isinstance(store, WeightStore):
        store = quantize(store, QuantScheme.F32)
    parts = [MAGIC, struct.pack("<HH", VERSION, len(store.layers))]
    for layer in store.layers:
        dims = layer.weights.shape
        parts.append(struct.pack("<BB", KIND_CODES[layer.kind], len(dims)))
        parts.append(struct.pack(f"<{len(dims)}I", *dims))
        parts.append(_block(layer.weights))
        parts.append(_block(layer.bias))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ContainerError(f"truncated container at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_block(r: _Reader, shape: tuple[int, ...]) -> QuantizedTensor:
    (code,) = r.unpack("<B")
    try:
        scheme = QuantScheme.from_code(code)
    except ValueError as e:
        raise ContainerError(str(e)) from None
    scale = r.unpack("<f")[0] if scheme.is_integer else 1.0
    count = int(np.prod(shape, dtype=np.int64))
    return QuantizedTensor(scheme, shape, scale, r.take(packed_nbytes(count, scheme)))


def decode(data: bytes) -> QuantizedWeightStore:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise ContainerError("not an ESWT container")
    version, n_layers = r.unpack("<HH")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    layers = []
    for _ in range(n_layers):
        kind_code, rank = r.unpack("<BB")
        if kind_code not in KIND_NAMES:
            raise ContainerError(f"unknown layer kind {kind_code}")
        kind = KIND_NAMES[kind_code]
        dims = tuple(r.unpack(f"<{rank}I"))
        w = _read_block(r, dims)
        b = _read_block(r, (_bias_len(kind, dims),))
        layers.append(QuantizedLayer(kind, w, b))
    if r.pos != len(data):
        raise ContainerError(f"{len(data) - r.pos} trailing bytes after last layer")
    schemes = {l.weights.scheme for l in layers} | {l.bias.scheme for l in layers}
    scheme = schemes.pop() if len(schemes) == 1 else QuantScheme.F32
    return QuantizedWeightStore(scheme, tuple(layers))


def save(path, store: QuantizedWeightStore | WeightStore) -> int:
    data = encode(store)
    Path(path).write_bytes(data)
    return len(data)


def load(path) -> QuantizedWeightStore:
    return decode(Path(path).read_bytes())


def load_weights(path) -> WeightStore:
    """Read a container and return float32 weights (dequantized if needed)."""
    return load(path).dequantize()

"""Post-training per-tensor symmetric quantization and a dequantizing inference path.

Integer schemes store ``q = rint(w / scale)`` with
``scale = max|w| / (2**(b-1) - 1)``; an all-zero tensor gets ``scale = 1``.
Sub-byte payloads are packed big-endian within each byte: the first element
occupies the most significant bits, so int4 ``[a, b]`` becomes ``(a << 4) | b``
and int2 ``[a, b, c, d]`` becomes ``a<<6 | b<<4 | c<<2 | d`` (two's complement
fields, zero padded at the tail).
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .cnn.model import LayerRecord, ModelArch, WeightStore, predict
from .power import PowerProfile


class QuantScheme(enum.Enum):
    F32 = "f32"
    F16 = "f16"
    INT8 = "int8"
    INT4 = "int4"
    INT2 = "int2"

    @property
    def bits(self) -> int:
        return {"f32": 32, "f16": 16, "int8": 8, "int4": 4, "int2": 2}[self.value]

    @property
    def is_integer(self) -> bool:
        return self.value.startswith("int")

    @property
    def qmax(self) -> int:
        if not self.is_integer:
            raise ValueError(f"{self.value} has no integer range")
        return 2 ** (self.bits - 1) - 1

    @property
    def code(self) -> int:
        return list(QuantScheme).index(self)

    @classmethod
    def from_code(cls, code: int) -> "QuantScheme":
        try:
            return list(cls)[code]
        except IndexError:
            raise ValueError(f"unknown scheme code {code}") from None

    @classmethod
    def parse(cls, value) -> "QuantScheme":
        if isinstance(value, cls):
            return value
        s = str(value).strip().lower()
        aliases = {"32": "f32", "16": "f16", "8": "int8", "4": "int4", "2": "int2", "float32": "f32", "float16": "f16"}
        try:
            return cls(aliases.get(s, s))
        except ValueError:
            raise ValueError(f"unknown quantization scheme {value!r}") from None


def packed_nbytes(count: int, scheme: QuantScheme) -> int:
    return math.ceil(count * scheme.bits / 8)


def pack(q: np.ndarray, bits: int) -> bytes:
    """Pack signed integers of width ``bits`` (8, 4 or 2)."""
    q = np.asarray(q, dtype=np.int64).ravel()
    if bits == 8:
        return q.astype(np.int8).tobytes()
    per = 8 // bits
    mask = (1 << bits) - 1
    pad = (-len(q)) % per
    u = (np.concatenate([q, np.zeros(pad, dtype=np.int64)]) & mask).reshape(-1, per)
    shifts = bits * np.arange(per - 1, -1, -1)
    return (u << shifts).sum(axis=1).astype(np.uint8).tobytes()


def unpack(data: bytes, bits: int, count: int) -> np.ndarray:
    if bits == 8:
        return np.frombuffer(data, dtype=np.int8, count=count).astype(np.int64)
    per = 8 // bits
    mask = (1 << bits) - 1
    b = np.frombuffer(data, dtype=np.uint8).astype(np.int64)
    shifts = bits * np.arange(per - 1, -1, -1)
    u = ((b[:, None] >> shifts) & mask).ravel()[:count]
    # sign-extend the two's complement fields
    return np.where(u >= 1 << (bits - 1), u - (1 << bits), u)


@dataclass(frozen=True)
class QuantizedTensor:
    scheme: QuantScheme
    shape: tuple[int, ...]
    scale: float
    payload: bytes

    @property
    def count(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    def integers(self) -> np.ndarray:
        if not self.scheme.is_integer:
            raise ValueError(f"{self.scheme.value} payload is not integer")
        return unpack(self.payload, self.scheme.bits, self.count).reshape(self.shape)

    def dequantize(self) -> np.ndarray:
        if self.scheme is QuantScheme.F32:
            return np.frombuffer(self.payload, dtype="<f4").reshape(self.shape).copy()
        if self.scheme is QuantScheme.F16:
            return np.frombuffer(self.payload, dtype="<f2").astype(np.float32).reshape(self.shape)
        return self.integers().astype(np.float32) * np.float32(self.scale)


def quantize_tensor(w: np.ndarray, scheme: QuantScheme | str) -> QuantizedTensor:
    scheme = QuantScheme.parse(scheme)
    w = np.asarray(w)
    if not np.all(np.isfinite(w)):
        raise ValueError("cannot quantize non-finite weights")
    shape = tuple(w.shape)
    if scheme is QuantScheme.F32:
        return QuantizedTensor(scheme, shape, 1.0, w.astype("<f4").tobytes())
    if scheme is QuantScheme.F16:
        return QuantizedTensor(scheme, shape, 1.0, w.astype("<f2").tobytes())
    peak = float(np.max(np.abs(w))) if w.size else 0.0
    scale = float(np.float32(peak / scheme.qmax)) if peak > 0 else 1.0
    # subnormal weights: keep the stored float32 scale positive
    scale = max(scale, float(np.finfo(np.float32).smallest_subnormal))
    q = np.clip(np.rint(w.astype(np.float64) / scale), -scheme.qmax, scheme.qmax)
    return QuantizedTensor(scheme, shape, scale, pack(q, scheme.bits))


@dataclass(frozen=True)
class QuantizedLayer:
    kind: str
    weights: QuantizedTensor
    bias: QuantizedTensor


@dataclass(frozen=True)
class QuantizedWeightStore:
    scheme: QuantScheme
    layers: tuple[QuantizedLayer, ...]

    @property
    def parameter_count(self) -> int:
        return sum(l.weights.count + l.bias.count for l in self.layers)

    @property
    def payload_bytes(self) -> int:
        return sum(len(l.weights.payload) + len(l.bias.payload) for l in self.layers)

    @property
    def container_bytes(self) -> int:
        from .container import encode

        return len(encode(self))

    def dequantize(self) -> WeightStore:
        return WeightStore([LayerRecord(l.kind, l.weights.dequantize(), l.bias.dequantize()) for l in self.layers])


def quantize(store: WeightStore, scheme: QuantScheme | str) -> QuantizedWeightStore:
    """Quantize every weight and bias tensor with its own symmetric scale."""
    scheme = QuantScheme.parse(scheme)
    return QuantizedWeightStore(
        scheme,
        tuple(
            QuantizedLayer(r.kind, quantize_tensor(r.weights, scheme), quantize_tensor(r.bias, scheme))
            for r in store.layers
        ),
    )


def quantized_forward(arch: ModelArch, qstore: QuantizedWeightStore, x: np.ndarray) -> np.ndarray:
    """Class probabilities with weights dequantized to float32 first."""
    return predict(arch, qstore.dequantize().astype(np.float32), x)


@dataclass(frozen=True)
class QuantRow:
    scheme: str
    payload_kib: float
    container_kib: float
    accuracy: float
    agreement: float
    time_us: float
    energy_uj: float
    energy_est_uj: float


def quantization_report(
    arch: ModelArch,
    store: WeightStore,
    X: np.ndarray,
    y: np.ndarray,
    schemes: Sequence[QuantScheme | str] = tuple(QuantScheme),
    profile: PowerProfile = PowerProfile(),
) -> list[QuantRow]:
    """Size, accuracy and per-inference cost of each scheme on a held-out set.

    ``agreement`` is the fraction of windows whose argmax matches the f32
    model. Time and energy are the measured on-device constants from
    ``profile``; ``energy_est_uj`` is active power times time.
    """
    ref = predict(arch, store, X).argmax(axis=1)
    rows = []
    for s in schemes:
        s = QuantScheme.parse(s)
        q = quantize(store, s)
        pred = quantized_forward(arch, q, X).argmax(axis=1)
        cost = profile.scheme_costs.get(s.value)
        t = cost.time_us if cost else float("nan")
        e = cost.energy_uj if cost else float("nan")
        rows.append(
            QuantRow(
                s.value,
                q.payload_bytes / 1024,
                q.container_bytes / 1024,
                float(np.mean(pred == y)) if len(y) else float("nan"),
                float(np.mean(pred == ref)) if len(y) else float("nan"),
                t,
                e,
                profile.inference_power_mw * t * 1e-3,
            )
        )
    return rows


def write_report_csv(rows: Sequence[QuantRow], path) -> None:
    def fmt(v, spec):
        return "" if isinstance(v, float) and math.isnan(v) else format(v, spec)

    with Path(path).open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("scheme", "payload_kib", "container_kib", "accuracy", "agreement", "time_us", "energy_uj", "energy_est_uj"))
        for r in rows:
            w.writerow(
                (
                    r.scheme,
                    fmt(r.payload_kib, ".1f"),
                    fmt(r.container_kib, ".1f"),
                    fmt(r.accuracy, ".4f"),
                    fmt(r.agreement, ".4f"),
                    fmt(r.time_us, ".0f"),
                    fmt(r.energy_uj, ".0f"),
                    fmt(r.energy_est_uj, ".2f"),
                )
            )

"""1-D CNN classifier: four strided convolutions, two transposed convolutions, dense head."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ShapeMismatch
from . import layers as L

KIND_CODES = {"conv1d": 1, "tconv1d": 2, "dense": 3}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_ch: int
    out_ch: int
    kernel: int
    stride: int
    padding: str
    in_len: int
    out_len: int

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "conv1d":
            return (self.kernel, self.in_ch, self.out_ch)
        if self.kind == "tconv1d":
            return (self.kernel, self.out_ch, self.in_ch)
        return (self.in_ch, self.out_ch)

    @property
    def fan_in(self) -> int:
        if self.kind == "dense":
            return self.in_ch
        return self.kernel * self.in_ch


@dataclass(frozen=True)
class ModelArch:
    n_points: int = 100
    n_channels: int = 5
    n_classes: int = 10
    conv_filters: tuple[int, ...] = (64, 64, 64, 64)
    conv_strides: tuple[int, ...] = (2, 2, 2, 2)
    conv_padding: str = "same"
    tconv_channels: tuple[int, ...] = (64, 7)
    tconv_strides: tuple[int, ...] = (1, 1)
    tconv_padding: str = "valid"
    kernel: int = 7

    def __post_init__(self):
        if len(self.conv_filters) != len(self.conv_strides):
            raise ValueError("conv_filters and conv_strides differ in length")
        if len(self.tconv_channels) != len(self.tconv_strides):
            raise ValueError("tconv_channels and tconv_strides differ in length")
        length = self.n_points
        for s in self.conv_strides:
            length = L.conv_out_len(length, self.kernel, s, self.conv_padding)
            if length < 1:
                raise ValueError(f"window of {self.n_points} points too short for the conv stack")

    @property
    def layers(self) -> list[LayerSpec]:
        specs = []
        length, ch = self.n_points, self.n_channels
        for f, s in zip(self.conv_filters, self.conv_strides):
            out = L.conv_out_len(length, self.kernel, s, self.conv_padding)
            specs.append(LayerSpec("conv1d", ch, f, self.kernel, s, self.conv_padding, length, out))
            length, ch = out, f
        for f, s in zip(self.tconv_channels, self.tconv_strides):
            out = L.tconv_out_len(length, self.kernel, s, self.tconv_padding)
            specs.append(LayerSpec("tconv1d", ch, f, self.kernel, s, self.tconv_padding, length, out))
            length, ch = out, f
        specs.append(LayerSpec("dense", length * ch, self.n_classes, 0, 0, "", 1, 1))
        return specs

    @property
    def parameter_count(self) -> int:
        return sum(int(np.prod(s.weight_shape)) + s.out_ch for s in self.layers)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelArch":
        d = json.loads(text)
        for k, v in d.items():
            if isinstance(v, list):
                d[k] = tuple(v)
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ModelArch":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass
class LayerRecord:
    kind: str
    weights: np.ndarray
    bias: np.ndarray

    @property
    def size(self) -> int:
        return self.weights.size + self.bias.size


@dataclass
class WeightStore:
    layers: list[LayerRecord] = field(default_factory=list)

    @property
    def parameter_count(self) -> int:
        return sum(r.size for r in self.layers)

    def astype(self, dtype) -> "WeightStore":
        return WeightStore(
            [LayerRecord(r.kind, r.weights.astype(dtype), r.bias.astype(dtype)) for r in self.layers]
        )

    def copy(self) -> "WeightStore":
        return WeightStore([LayerRecord(r.kind, r.weights.copy(), r.bias.copy()) for r in self.layers])

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([r.weights.ravel(), r.bias.ravel()]) for r in self.layers])

    def check(self, arch: ModelArch) -> None:
        specs = arch.layers
        if len(specs) != len(self.layers):
            raise ShapeMismatch(f"expected {len(specs)} layers, store has {len(self.layers)}")
        for s, r in zip(specs, self.layers):
            if r.kind != s.kind or r.weights.shape != s.weight_shape or r.bias.shape != (s.out_ch,):
                raise ShapeMismatch(f"layer {s.kind} expects {s.weight_shape}, got {r.kind} {r.weights.shape}")


def init_weights(arch: ModelArch, seed: int = 0, dtype=np.float32) -> WeightStore:
    """He-uniform kernels (limit sqrt(6 / fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    out = []
    for s in arch.layers:
        lim = np.sqrt(6.0 / s.fan_in)
        w = rng.uniform(-lim, lim, size=s.weight_shape).astype(dtype)
        out.append(LayerRecord(s.kind, w, np.zeros(s.out_ch, dtype=dtype)))
    return WeightStore(out)


def zeros_like_store(store: WeightStore) -> WeightStore:
    return WeightStore(
        [LayerRecord(r.kind, np.zeros_like(r.weights), np.zeros_like(r.bias)) for r in store.layers]
    )


def _check_input(arch: ModelArch, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (arch.n_points, arch.n_channels):
        raise ShapeMismatch(
            f"model expects windows of [{arch.n_points} x {arch.n_channels}], got {tuple(x.shape[-2:])}"
        )
    return x


def logits(arch: ModelArch, store: WeightStore, x: np.ndarray, keep_cache: bool = False):
    """Pre-softmax scores for a batch ``[B x n x C]`` (or one window ``[n x C]``)."""
    x = _check_input(arch, x)
    dtype = store.layers[0].weights.dtype
    h = x.astype(dtype, copy=False)
    caches = []
    for spec, rec in zip(arch.layers, store.layers):
        if spec.kind == "conv1d":
            h, c = L.conv1d_forward(h, rec.weights, rec.bias, spec.stride, spec.padding)
        elif spec.kind == "tconv1d":
            h, c = L.tconv1d_forward(h, rec.weights, rec.bias, spec.stride, spec.padding)
        else:
            shape = h.shape
            h, c = L.dense_forward(h.reshape(shape[0], -1), rec.weights, rec.bias)
            caches.append((c, shape, None))
            continue
        h = np.maximum(h, 0)
        caches.append((c, None, h))
    return (h, caches) if keep_cache else h


def forward(arch: ModelArch, store: WeightStore, x: np.ndarray) -> np.ndarray:
    """Class probabilities; one row per window."""
    return L.softmax(logits(arch, store, x))


def predict(arch: ModelArch, store: WeightStore, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
    x = _check_input(arch, x)
    out = [forward(arch, store, x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, arch.n_classes))


def loss_and_grads(
    arch: ModelArch, store: WeightStore, x: np.ndarray, y: np.ndarray, reduction: str = "mean"
) -> tuple[float, WeightStore]:
    """Softmax cross-entropy and its gradient w.r.t. every parameter."""
    x = _check_input(arch, x)
    y = np.asarray(y)
    if len(y) != len(x) or len(x) == 0:
        raise ShapeMismatch("batch must be nonempty with one label per window")
    z, caches = logits(arch, store, x, keep_cache=True)
    p = L.softmax(z)
    B = len(x)
    nll = -np.log(np.clip(p[np.arange(B), y], 1e-300, None))
    scale = 1.0 / B if reduction == "mean" else 1.0
    loss = float(nll.sum() * scale)
    d = p.copy()
    d[np.arange(B), y] -= 1.0
    d *= scale

    grads = [None] * len(store.layers)
    for i in range(len(store.layers) - 1, -1, -1):
        spec, rec = arch.layers[i], store.layers[i]
        cache, shape, act = caches[i]
        if spec.kind == "dense":
            d, dw, db = L.dense_backward(d, rec.weights, cache)
            d = d.reshape(shape)
        else:
            d = d * (act > 0)
            if spec.kind == "conv1d":
                d, dw, db = L.conv1d_backward(d, rec.weights, cache)
            else:
                d, dw, db = L.tconv1d_backward(d, rec.weights, cache)
        grads[i] = LayerRecord(spec.kind, dw, db)
    return loss, WeightStore(grads)

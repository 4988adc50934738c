"""Forward/backward kernels for 1-D convolution, transposed convolution and dense layers.

Activations are time-major ``[B x L x C]``. Kernel layouts follow the usual
Keras conventions: Conv1D ``[k, C_in, C_out]``, Conv1DTranspose
``[k, C_out, C_in]``, Dense ``[F_in, F_out]``.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_out_len(L: int, k: int, stride: int, padding: str) -> int:
    if padding == "same":
        return math.ceil(L / stride)
    if padding == "valid":
        return (L - k) // stride + 1
    raise ValueError(f"unknown padding {padding!r}")


def _same_pads(L: int, k: int, stride: int) -> tuple[int, int]:
    out = math.ceil(L / stride)
    total = max((out - 1) * stride + k - L, 0)
    return total // 2, total - total // 2


def tconv_out_len(L: int, k: int, stride: int, padding: str) -> int:
    if padding == "same":
        return L * stride
    if padding == "valid":
        return (L - 1) * stride + k
    raise ValueError(f"unknown padding {padding!r}")


def conv1d_forward(x, w, b, stride=1, padding="valid", pads=None):
    """Cross-correlation. Returns output and a cache for :func:`conv1d_backward`."""
    k = w.shape[0]
    if pads is None:
        pads = _same_pads(x.shape[1], k, stride) if padding == "same" else (0, 0)
    xp = np.pad(x, ((0, 0), pads, (0, 0))) if any(pads) else x
    win = sliding_window_view(xp, k, axis=1)[:, ::stride]  # B, Lout, C, k
    B, Lout, C, _ = win.shape
    cols = win.transpose(0, 1, 3, 2).reshape(B * Lout, k * C)
    y = cols @ w.reshape(k * C, -1)
    y += b
    return y.reshape(B, Lout, -1), (cols, xp.shape, pads, stride, k, x.shape)


def conv1d_backward(dy, w, cache):
    cols, xp_shape, pads, stride, k, x_shape = cache
    B, Lout, F = dy.shape
    C = w.shape[1]
    dy2 = dy.reshape(B * Lout, F)
    dw = (cols.T @ dy2).reshape(w.shape)
    db = dy2.sum(axis=0)
    dcols = (dy2 @ w.reshape(k * C, F).T).reshape(B, Lout, k, C)
    dxp = np.zeros(xp_shape, dtype=dy.dtype)
    span = stride * (Lout - 1) + 1
    for j in range(k):
        dxp[:, j : j + span : stride, :] += dcols[:, :, j, :]
    dx = dxp[:, pads[0] : xp_shape[1] - pads[1], :]
    return dx, dw, db


def _tconv_as_conv(w):
    # [k, C_out, C_in] -> flipped [k, C_in, C_out]
    return np.ascontiguousarray(w[::-1].transpose(0, 2, 1))


def _dilate(x, stride):
    if stride == 1:
        return x
    B, L, C = x.shape
    out = np.zeros((B, (L - 1) * stride + 1, C), dtype=x.dtype)
    out[:, ::stride] = x
    return out


def tconv1d_forward(x, w, b, stride=1, padding="valid"):
    k = w.shape[0]
    L = x.shape[1]
    full = (L - 1) * stride + k
    target = tconv_out_len(L, k, stride, padding)
    crop_l = (full - target) // 2
    xd = _dilate(x, stride)
    y, cache = conv1d_forward(xd, _tconv_as_conv(w), b, 1, pads=(k - 1, k - 1))
    y = y[:, crop_l : crop_l + target]
    return y, (cache, crop_l, full, stride, x.shape)


def tconv1d_backward(dy, w, cache):
    conv_cache, crop_l, full, stride, x_shape = cache
    dfull = np.zeros((dy.shape[0], full, dy.shape[2]), dtype=dy.dtype)
    dfull[:, crop_l : crop_l + dy.shape[1]] = dy
    dxd, dwc, db = conv1d_backward(dfull, _tconv_as_conv(w), conv_cache)
    dx = dxd[:, ::stride] if stride > 1 else dxd
    dw = dwc.transpose(0, 2, 1)[::-1]
    return dx, np.ascontiguousarray(dw), db


def dense_forward(x, w, b):
    return x @ w + b, x


def dense_backward(dy, w, x):
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)

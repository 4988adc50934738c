"""Reference implementations the tests compare the package against.

Nothing here imports the package's convolution kernels: the loops follow the
layer definitions directly.
"""

import numpy as np

from heog.cnn.model import ModelArch, init_weights, logits, loss_and_grads


def naive_conv(x, w, b, stride, padding):
    """x [L, C], w [k, C, F]; cross-correlation with explicit zero padding."""
    L, C = x.shape
    k, _, F = w.shape
    if padding == "same":
        out_len = -(-L // stride)
        total = max((out_len - 1) * stride + k - L, 0)
        left = total // 2
    else:
        out_len = (L - k) // stride + 1
        left = 0
    y = np.zeros((out_len, F))
    for o in range(out_len):
        for f in range(F):
            acc = b[f]
            for j in range(k):
                src = o * stride + j - left
                if 0 <= src < L:
                    for c in range(C):
                        acc += x[src, c] * w[j, c, f]
            y[o, f] = acc
    return y


def naive_tconv(x, w, b, stride, padding):
    """x [L, C_in], w [k, C_out, C_in]; scatter each input through the kernel."""
    L, _ = x.shape
    k, F, _ = w.shape
    full = np.zeros(((L - 1) * stride + k, F))
    for i in range(L):
        for j in range(k):
            full[i * stride + j] += w[j] @ x[i]
    target = L * stride if padding == "same" else full.shape[0]
    crop = (full.shape[0] - target) // 2
    return full[crop : crop + target] + b


def naive_forward(arch, store, x):
    """Class probabilities for one window ``[n x C]``."""
    h = np.asarray(x, dtype=np.float64)
    for spec, rec in zip(arch.layers, store.layers):
        w, b = rec.weights.astype(np.float64), rec.bias.astype(np.float64)
        if spec.kind == "conv1d":
            h = np.maximum(naive_conv(h, w, b, spec.stride, spec.padding), 0)
        elif spec.kind == "tconv1d":
            h = np.maximum(naive_tconv(h, w, b, spec.stride, spec.padding), 0)
        else:
            z = h.reshape(-1) @ w + b
            e = np.exp(z - z.max())
            return e / e.sum()


def random_arch(rng):
    while True:
        try:
            return ModelArch(
                n_points=int(rng.integers(10, 30)),
                n_channels=int(rng.integers(1, 4)),
                n_classes=int(rng.integers(2, 5)),
                conv_filters=tuple(int(v) for v in rng.integers(2, 5, size=2)),
                conv_strides=tuple(int(v) for v in rng.integers(1, 3, size=2)),
                conv_padding=str(rng.choice(["same", "valid"])),
                tconv_channels=tuple(int(v) for v in rng.integers(2, 5, size=2)),
                tconv_strides=tuple(int(v) for v in rng.integers(1, 3, size=2)),
                tconv_padding=str(rng.choice(["same", "valid"])),
                kernel=int(rng.choice([3, 5, 7])),
            )
        except ValueError:
            continue  # conv stack too deep for the drawn window length


def random_store(arch, rng, bias_scale=0.1):
    store = init_weights(arch, int(rng.integers(1 << 30)), dtype=np.float64)
    for r in store.layers:
        r.bias[:] = rng.normal(0, bias_scale, r.bias.shape)
    return store


GRAD_ARCH = ModelArch(
    n_points=24, n_channels=2, n_classes=3, conv_filters=(4, 4), conv_strides=(2, 2), tconv_channels=(4, 3)
)
STRIDED_ARCH = ModelArch(
    n_points=20, n_channels=2, n_classes=3, conv_filters=(3, 3), conv_strides=(2, 1),
    tconv_channels=(3, 3), tconv_strides=(2, 2), tconv_padding="same",
)


def _relu_pattern(arch, store, x):
    _, caches = logits(arch, store, x, keep_cache=True)
    return [act > 0 for _, shape, act in caches if act is not None]


def finite_difference_errors(arch, seed, per_kind=100, eps=1e-4):
    """Worst relative error |analytic - central| / (|analytic| + 1e-8) per layer kind.

    Parameters are drawn at random in float64. A draw whose +/-eps step flips
    any ReLU is replaced: the central difference is not a derivative across
    the kink. Returns ``(worst, skipped)``.
    """
    rng = np.random.default_rng(seed)
    store = random_store(arch, rng)
    x = rng.normal(size=(4, arch.n_points, arch.n_channels))
    y = rng.integers(0, arch.n_classes, size=4)
    _, grads = loss_and_grads(arch, store, x, y)
    worst, skipped = {}, 0
    for kind in ("conv1d", "tconv1d", "dense"):
        slots = [
            (li, name, idx)
            for li, r in enumerate(store.layers)
            if r.kind == kind
            for name in ("weights", "bias")
            for idx in np.ndindex(getattr(r, name).shape)
        ]
        if len(slots) < per_kind:
            raise ValueError(f"model has only {len(slots)} {kind} parameters")
        errs = []
        for i in rng.permutation(len(slots)):
            if len(errs) == per_kind:
                break
            li, name, idx = slots[i]
            p = getattr(store.layers[li], name)
            old = p[idx]
            p[idx] = old + eps
            lp, _ = loss_and_grads(arch, store, x, y)
            mask_p = _relu_pattern(arch, store, x)
            p[idx] = old - eps
            lm, _ = loss_and_grads(arch, store, x, y)
            mask_m = _relu_pattern(arch, store, x)
            p[idx] = old
            if any(not np.array_equal(a, b) for a, b in zip(mask_p, mask_m)):
                skipped += 1
                continue
            ana = getattr(grads.layers[li], name)[idx]
            errs.append(abs(ana - (lp - lm) / (2 * eps)) / (abs(ana) + 1e-8))
        if len(errs) < per_kind:
            raise ValueError(f"too few kink-free {kind} parameters")
        worst[kind] = max(errs)
    return worst, skipped

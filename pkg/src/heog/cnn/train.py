"""Minibatch training with SGD-momentum or Adam, best-by-validation checkpointing."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import EmptyClass
from .data import WindowDataset, split
from .model import ModelArch, WeightStore, init_weights, loss_and_grads, predict, zeros_like_store

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"  # adam | sgd
    lr: float = 1e-3
    momentum: float = 0.9
    beta2: float = 0.999
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    split_mode: str = "subject"
    test_fraction: float = 0.2
    val_fraction: float = 0.15


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    val_acc: float


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    initial_loss: float = float("nan")
    best_epoch: int = 0

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(("epoch", "loss", "train_acc", "val_acc"))
            w.writerow((0, f"{self.initial_loss:.6f}", "", ""))
            for r in self.epochs:
                w.writerow((r.epoch, f"{r.loss:.6f}", f"{r.train_acc:.4f}", f"{r.val_acc:.4f}"))


class _Adam:
    def __init__(self, store: WeightStore, cfg: TrainConfig):
        self.cfg = cfg
        self.m = zeros_like_store(store)
        self.v = zeros_like_store(store) if cfg.optimizer == "adam" else None
        self.t = 0

    def step(self, store: WeightStore, grads: WeightStore) -> None:
        cfg = self.cfg
        self.t += 1
        for p, g, m, v in zip(
            store.layers, grads.layers, self.m.layers, (self.v or self.m).layers
        ):
            for name in ("weights", "bias"):
                P, G, M = getattr(p, name), getattr(g, name), getattr(m, name)
                if cfg.optimizer == "adam":
                    V = getattr(v, name)
                    M *= cfg.momentum
                    M += (1 - cfg.momentum) * G
                    V *= cfg.beta2
                    V += (1 - cfg.beta2) * G * G
                    mhat = M / (1 - cfg.momentum**self.t)
                    vhat = V / (1 - cfg.beta2**self.t)
                    P -= (cfg.lr * mhat / (np.sqrt(vhat) + 1e-7)).astype(P.dtype)
                else:
                    M *= cfg.momentum
                    M += G
                    P -= (cfg.lr * M).astype(P.dtype)


def accuracy(arch: ModelArch, store: WeightStore, ds: WindowDataset) -> float:
    if len(ds) == 0:
        return float("nan")
    return float(np.mean(predict(arch, store, ds.X).argmax(axis=1) == ds.y))


def mean_loss(arch: ModelArch, store: WeightStore, ds: WindowDataset, batch: int = 512) -> float:
    total = 0.0
    for i in range(0, len(ds), batch):
        loss, _ = loss_and_grads(arch, store, ds.X[i : i + batch], ds.y[i : i + batch], reduction="sum")
        total += loss
    return total / max(len(ds), 1)


def arch_for(ds: WindowDataset, **kw) -> ModelArch:
    return ModelArch(n_points=ds.X.shape[1], n_channels=ds.X.shape[2], n_classes=ds.label_set.size, **kw)


def train(
    arch: ModelArch,
    train_ds: WindowDataset,
    config: TrainConfig = TrainConfig(),
    val_ds: WindowDataset | None = None,
    init: WeightStore | None = None,
) -> tuple[WeightStore, TrainLog]:
    """Train from ``init`` (or a seeded initialization); returns the best-by-validation weights.

    Without ``val_ds`` a validation split is carved out of ``train_ds`` by
    whole acquisition.
    """
    counts = train_ds.class_counts()
    if np.any(counts == 0):
        missing = [train_ds.label_set.classes[i].value for i in np.flatnonzero(counts == 0)]
        raise EmptyClass(f"no training samples for {', '.join(missing)}")
    if val_ds is None and config.val_fraction > 0:
        train_ds, val_ds = split(train_ds, "acquisition", config.val_fraction, config.seed + 1)

    store = init.copy() if init is not None else init_weights(arch, config.seed)
    store.check(arch)
    opt = _Adam(store, config)
    rng = np.random.default_rng(config.seed)
    tlog = TrainLog(initial_loss=mean_loss(arch, store, train_ds))
    best, best_key = store.copy(), (-1.0, 0.0)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_ds))
        total = 0.0
        for i in range(0, len(order), config.batch_size):
            idx = order[i : i + config.batch_size]
            loss, grads = loss_and_grads(arch, store, train_ds.X[idx], train_ds.y[idx])
            total += loss * len(idx)
            opt.step(store, grads)
        train_acc = accuracy(arch, store, train_ds)
        val_acc = accuracy(arch, store, val_ds) if val_ds is not None and len(val_ds) else train_acc
        rec = EpochRecord(epoch, total / len(train_ds), train_acc, val_acc)
        tlog.epochs.append(rec)
        log.info("epoch %d loss %.4f train %.3f val %.3f", epoch, rec.loss, train_acc, val_acc)
        key = (val_acc, -rec.loss)
        if key > best_key:
            best, best_key, tlog.best_epoch = store.copy(), key, epoch
    return best, tlog

"""Accuracy and confusion matrices, channel ablation and window-size sweeps."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ShapeMismatch
from ..signal import EOG_SAMPLE_RATE, TRAINING_WINDOW_SIZES, ChannelSubset, LabelSet
from .data import WindowDataset, build_windows, split
from .model import ModelArch, WeightStore, predict
from .train import TrainConfig, TrainLog, arch_for, train

log = logging.getLogger(__name__)


@dataclass
class EvalResult:
    accuracy: float
    counts: np.ndarray  # [K x K], rows = truth, columns = prediction
    label_set: LabelSet

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def confusion(self) -> np.ndarray:
        """Row-normalized confusion; classes absent from the data keep a zero row."""
        rows = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    def write_confusion_csv(self, path) -> None:
        names = [c.value for c in self.label_set.classes]
        with Path(path).open("w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["truth"] + names)
            for name, row in zip(names, self.confusion):
                w.writerow([name] + [f"{v:.4f}" for v in row])


def confusion_counts(y_true, y_pred, k: int) -> np.ndarray:
    m = np.zeros((k, k), dtype=np.int64)
    np.add.at(m, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return m


def evaluate(arch: ModelArch, store: WeightStore, ds: WindowDataset) -> EvalResult:
    if ds.X.ndim != 3 or ds.X.shape[1:] != (arch.n_points, arch.n_channels):
        raise ShapeMismatch(
            f"dataset windows {ds.X.shape[1:]} do not match model input ({arch.n_points}, {arch.n_channels})"
        )
    if ds.label_set.size != arch.n_classes:
        raise ShapeMismatch(f"model has {arch.n_classes} outputs, dataset uses {ds.label_set.size} classes")
    pred = predict(arch, store, ds.X).argmax(axis=1) if len(ds) else np.zeros(0, dtype=int)
    counts = confusion_counts(ds.y, pred, arch.n_classes)
    acc = float(np.trace(counts) / counts.sum()) if counts.sum() else float("nan")
    return EvalResult(acc, counts, ds.label_set)


@dataclass
class Experiment:
    arch: ModelArch
    store: WeightStore
    log: TrainLog
    result: EvalResult
    train_ds: WindowDataset
    test_ds: WindowDataset


def train_and_evaluate(
    recordings,
    n: int = 100,
    label_set: LabelSet | str = LabelSet.FULL10,
    subset: ChannelSubset | str = ChannelSubset.ALL,
    config: TrainConfig = TrainConfig(),
    per_event: int = 4,
    window_seed: int = 0,
) -> Experiment:
    """Window the recordings, split by group, train one model and score the held-out part."""
    ds = build_windows(recordings, n, label_set, subset, per_event=per_event, seed=window_seed)
    tr, te = split(ds, config.split_mode, config.test_fraction, config.seed)
    arch = arch_for(tr)
    store, tlog = train(arch, tr, config)
    res = evaluate(arch, store, te)
    log.info("n=%d %s %s: accuracy %.3f on %d windows", n, ds.label_set.value, ds.subset.value, res.accuracy, res.n)
    return Experiment(arch, store, tlog, res, tr, te)


@dataclass(frozen=True)
class AblationRow:
    label_set: str
    subset: str
    channels: int
    accuracy: float
    relative: float


def ablation(
    recordings,
    label_sets: Sequence[LabelSet | str] = (LabelSet.FULL10, LabelSet.BASIC6),
    subsets: Sequence[ChannelSubset | str] = tuple(ChannelSubset),
    n: int = 100,
    config: TrainConfig = TrainConfig(),
    per_event: int = 4,
) -> list[AblationRow]:
    """Retrain per (label set, channel subset); relative accuracy is against the best row."""
    raw = []
    for ls in label_sets:
        for sub in subsets:
            ls_, sub_ = LabelSet.parse(ls), ChannelSubset.parse(sub)
            exp = train_and_evaluate(recordings, n, ls_, sub_, config, per_event)
            raw.append((ls_.value, sub_.value, len(sub_.channels), exp.result.accuracy))
    best = max(r[3] for r in raw)
    return [AblationRow(*r, r[3] / best if best > 0 else float("nan")) for r in raw]


def write_ablation_csv(rows: Sequence[AblationRow], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("label_set", "subset", "channels", "accuracy", "relative"))
        for r in rows:
            w.writerow((r.label_set, r.subset, r.channels, f"{r.accuracy:.4f}", f"{r.relative:.4f}"))


@dataclass(frozen=True)
class SweepRow:
    n: int
    duration_ms: float
    accuracy: float


def window_size_sweep(
    recordings,
    sizes: Sequence[int] = (25, 100, 240),
    label_set: LabelSet | str = LabelSet.FULL10,
    subset: ChannelSubset | str = ChannelSubset.ALL,
    config: TrainConfig = TrainConfig(),
    per_event: int = 4,
    sample_rate: float = EOG_SAMPLE_RATE,
) -> list[SweepRow]:
    rows = []
    for n in sizes:
        if n not in TRAINING_WINDOW_SIZES:
            raise ValueError(f"window size {n} not in {TRAINING_WINDOW_SIZES}")
        exp = train_and_evaluate(recordings, n, label_set, subset, config, per_event)
        rows.append(SweepRow(n, n / sample_rate * 1000.0, exp.result.accuracy))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("n", "duration_ms", "accuracy"))
        for r in rows:
            w.writerow((r.n, f"{r.duration_ms:.1f}", f"{r.accuracy:.4f}"))

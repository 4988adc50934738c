"""Rolling-window inference over a sample stream, event emission and latency sweeps."""

from __future__ import annotations

import csv
import json
import queue
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cnn.model import ModelArch, WeightStore, forward, predict
from .errors import DegenerateWindow, OutOfOrderSample, TruthOutsideTrace
from .signal import (
    EOG_SAMPLE_RATE,
    ChannelSubset,
    LabeledEvent,
    LabelSet,
    MovementClass,
    MultiChannelTrace,
    preprocess_batch,
    preprocess_window,
)

MOVEMENT_DURATION = 0.040  # s, used for latency measured from movement end
SWEEP_WINDOWS = 53


def subset_for(n_channels: int) -> ChannelSubset:
    for s in ChannelSubset:
        if len(s.channels) == n_channels:
            return s
    raise ValueError(f"no channel subset with {n_channels} channels")


@dataclass(frozen=True)
class StreamConfig:
    n: int = 100
    stride: int = 2
    refractory: float = 0.200
    label_set: LabelSet = LabelSet.FULL10
    sample_rate: float = EOG_SAMPLE_RATE
    confirm: int = 6  # consecutive windows agreeing on a movement class
    rearm: int = 6  # consecutive Straight windows before the next event

    def __post_init__(self):
        if not 1 <= self.stride <= self.n:
            raise ValueError(f"stride must be in [1, n={self.n}], got {self.stride}")
        if self.refractory < 0:
            raise ValueError("refractory must be nonnegative")
        if self.confirm < 1 or self.rearm < 0:
            raise ValueError("confirm must be >= 1 and rearm >= 0")

    @property
    def overlap(self) -> float:
        return 1.0 - self.stride / self.n


@dataclass(frozen=True)
class PredictionEvent:
    t_end: float
    label: MovementClass
    confidence: float

    def to_json(self) -> dict:
        return {"t_end": round(self.t_end, 6), "label": self.label.value, "confidence": round(self.confidence, 6)}


class StreamEngine:
    """Keeps the last ``n`` frames and classifies every ``stride`` new frames.

    A movement class becomes a candidate once ``confirm`` consecutive windows
    agree on it. A candidate is emitted when the engine is armed and the last
    event is more than ``refractory`` seconds older; emitting disarms the
    engine until ``rearm`` consecutive Straight windows have been seen
    (``rearm=0`` keeps it armed). Isolated misfires on drift or noise rarely
    survive the confirmation, and one movement yields one event. Not safe for
    concurrent pushes.
    """

    def __init__(
        self,
        arch: ModelArch,
        store: WeightStore,
        config: StreamConfig = StreamConfig(),
        start_time: float = 0.0,
    ):
        if arch.n_points != config.n:
            raise ValueError(f"model expects {arch.n_points}-point windows, stream uses {config.n}")
        if arch.n_classes != config.label_set.size:
            raise ValueError(f"model has {arch.n_classes} outputs, label set {config.label_set.value} has {config.label_set.size}")
        self.arch, self.store, self.config = arch, store, config
        self.columns = subset_for(arch.n_channels).indices
        self.start_time = start_time
        self._ring = np.zeros((config.n, 5), dtype=np.float64)
        self._count = 0
        self._last_t: float | None = None
        self._run_label: MovementClass | None = None
        self._run: list[float] = []  # confidences of the current movement run
        self._straight = 0
        self._armed = True
        self._last_emit: float | None = None
        self.inference_count = 0

    def _window(self) -> np.ndarray:
        k = self._count % self.config.n
        return np.concatenate([self._ring[k:], self._ring[:k]])[:, self.columns]

    def classify(self, window: np.ndarray) -> np.ndarray:
        """Class probabilities for one raw ``[n x C]`` window."""
        try:
            z = preprocess_window(window)
        except DegenerateWindow:
            p = np.zeros(self.config.label_set.size)
            p[self.config.label_set.index(MovementClass.STRAIGHT)] = 1.0
            return p
        return forward(self.arch, self.store, z)[0]

    def _infer(self, t_end: float) -> PredictionEvent | None:
        self.inference_count += 1
        cfg = self.config
        p = self.classify(self._window())
        i = int(np.argmax(p))
        label = cfg.label_set.classes[i]
        if label is MovementClass.STRAIGHT:
            self._straight += 1
            self._run_label, self._run = None, []
            if self._straight >= cfg.rearm:
                self._armed = True
            return None
        self._straight = 0
        if label is not self._run_label:
            self._run_label, self._run = label, []
        self._run.append(float(p[i]))
        if len(self._run) < cfg.confirm or not (self._armed or cfg.rearm == 0):
            return None
        if self._last_emit is not None and t_end - self._last_emit <= cfg.refractory:
            return None
        self._last_emit = t_end
        self._armed = False
        return PredictionEvent(t_end, label, float(np.mean(self._run[-cfg.confirm :])))

    def push(self, frames, times: Sequence[float] | None = None) -> list[PredictionEvent]:
        """Append one ``[5]`` frame or a ``[k x 5]`` block; return events emitted."""
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim == 1:
            frames = frames[None]
        if frames.ndim != 2 or frames.shape[1] != 5:
            raise ValueError(f"frames must be [k x 5], got {frames.shape}")
        dt = 1.0 / self.config.sample_rate
        if times is None:
            times = self.start_time + (self._count + np.arange(len(frames))) * dt
        times = np.asarray(times, dtype=np.float64)
        if len(times) != len(frames):
            raise ValueError("one timestamp per frame required")
        events = []
        n, stride = self.config.n, self.config.stride
        for row, t in zip(frames, times):
            if self._last_t is not None and not t > self._last_t:
                raise OutOfOrderSample(f"sample at t={t:.6f} does not follow t={self._last_t:.6f}")
            self._last_t = float(t)
            self._ring[self._count % n] = row
            self._count += 1
            if self._count >= n and (self._count - n) % stride == 0:
                ev = self._infer(float(t) + dt)
                if ev is not None:
                    events.append(ev)
        return events


def run_stream(engine: StreamEngine, trace: MultiChannelTrace, chunk: int = 1) -> list[PredictionEvent]:
    """Feed a whole trace in blocks of ``chunk`` frames."""
    out = []
    times = trace.times
    for i in range(0, len(trace), chunk):
        out += engine.push(trace.samples[i : i + chunk], times[i : i + chunk])
    return out


def run_threaded(engine: StreamEngine, blocks: Iterable, maxsize: int = 64) -> list[PredictionEvent]:
    """Producer thread enqueues ``(frames, times)`` blocks; this thread runs inference."""
    q: queue.Queue = queue.Queue(maxsize=maxsize)
    done = object()
    failure: list[BaseException] = []

    def produce():
        try:
            for item in blocks:
                q.put(item)
        except BaseException as e:  # surfaced in the consumer
            failure.append(e)
        finally:
            q.put(done)

    th = threading.Thread(target=produce, daemon=True)
    th.start()
    events = []
    while (item := q.get()) is not done:
        frames, times = item
        events += engine.push(frames, times)
    th.join()
    if failure:
        raise failure[0]
    return events


def trace_blocks(trace: MultiChannelTrace, chunk: int):
    times = trace.times
    for i in range(0, len(trace), chunk):
        yield trace.samples[i : i + chunk], times[i : i + chunk]


def write_events_jsonl(events: Sequence[PredictionEvent], path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for e in events:
            f.write(json.dumps(e.to_json()) + "\n")


# --- latency protocol -------------------------------------------------------


@dataclass(frozen=True)
class LatencyRecord:
    t_m: float
    label: MovementClass
    latency: float  # s from t_m to the end of the first correct window
    correct: bool

    @property
    def latency_from_end(self) -> float:
        return self.latency - MOVEMENT_DURATION


def sweep_starts(idx_m: int, stride: int = 2, count: int = SWEEP_WINDOWS) -> np.ndarray:
    """Start indices of the sweep; the last window starts at the movement sample."""
    return idx_m - stride * (count - 1) + stride * np.arange(count)


def measure_latency(
    arch: ModelArch,
    store: WeightStore,
    trace: MultiChannelTrace,
    truth: Sequence[LabeledEvent],
    label_set: LabelSet | str = LabelSet.FULL10,
    stride: int = 2,
    count: int = SWEEP_WINDOWS,
) -> list[LatencyRecord]:
    """Slide ``count`` windows across each true movement and time the first hit.

    Straight truth is correct with zero latency by definition. Events whose
    class is outside ``label_set`` are skipped.
    """
    label_set = LabelSet.parse(label_set)
    n = arch.n_points
    cols = subset_for(arch.n_channels).indices
    fs = trace.sample_rate
    out = []
    for ev in truth:
        if ev.label not in label_set:
            continue
        if not trace.start_time <= ev.t <= trace.start_time + trace.duration:
            raise TruthOutsideTrace(f"event at t={ev.t:.3f} outside trace")
        if ev.label is MovementClass.STRAIGHT:
            out.append(LatencyRecord(ev.t, ev.label, 0.0, True))
            continue
        idx_m = trace.index_of(ev.t)
        starts = sweep_starts(idx_m, stride, count)
        if starts[0] < 0 or starts[-1] + n > len(trace):
            raise TruthOutsideTrace(f"latency sweep around t={ev.t:.3f} leaves the trace")
        X = np.stack([trace.samples[s : s + n, cols] for s in starts]).astype(np.float64)
        Z, keep = preprocess_batch(X)
        pred = np.full(count, label_set.index(MovementClass.STRAIGHT) if MovementClass.STRAIGHT in label_set else -1)
        pred[keep] = predict(arch, store, Z.astype(np.float32)).argmax(axis=1)
        hit = np.flatnonzero(pred == label_set.index(ev.label))
        if len(hit):
            t_end = trace.start_time + (starts[hit[0]] + n) / fs
            out.append(LatencyRecord(ev.t, ev.label, t_end - ev.t, True))
        else:
            out.append(LatencyRecord(ev.t, ev.label, float("nan"), False))
    return out


@dataclass(frozen=True)
class LatencyStats:
    label: str
    count: int
    median: float
    q1: float
    q3: float
    p90: float
    median_from_end: float
    p90_from_end: float
    never_predicted_rate: float


def _stats(label: str, recs: Sequence[LatencyRecord]) -> LatencyStats:
    lat = np.array([r.latency for r in recs if r.correct])
    never = float(np.mean([not r.correct for r in recs]))
    if len(lat) == 0:
        nan = float("nan")
        return LatencyStats(label, len(recs), nan, nan, nan, nan, nan, nan, never)
    q1, med, q3, p90 = np.percentile(lat, [25, 50, 75, 90])
    end = lat - MOVEMENT_DURATION
    return LatencyStats(
        label, len(recs), med, q1, q3, p90, float(np.median(end)), float(np.percentile(end, 90)), never
    )


def latency_stats(records: Sequence[LatencyRecord]) -> list[LatencyStats]:
    """Box-plot statistics per class, plus an ``all`` row over movement classes."""
    if not records:
        raise ValueError("no latency records")
    out = []
    seen = []
    for r in records:
        if r.label not in seen:
            seen.append(r.label)
    for cls in sorted(seen, key=lambda c: list(MovementClass).index(c)):
        out.append(_stats(cls.value, [r for r in records if r.label is cls]))
    moving = [r for r in records if r.label is not MovementClass.STRAIGHT]
    if moving:
        out.append(_stats("all", moving))
    return out


def write_latency_csv(records: Sequence[LatencyRecord], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("t_m", "label", "latency_ms", "correct"))
        for r in records:
            lat = "" if not r.correct else f"{r.latency * 1000:.1f}"
            w.writerow((f"{r.t_m:.6f}", r.label.value, lat, int(r.correct)))


def write_latency_stats_csv(stats: Sequence[LatencyStats], path) -> None:
    cols = ("median", "q1", "q3", "p90", "median_from_end", "p90_from_end")
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("label", "count") + tuple(c + "_ms" for c in cols) + ("never_predicted_rate",))
        for s in stats:
            vals = [getattr(s, c) for c in cols]
            w.writerow(
                [s.label, s.count]
                + ["" if np.isnan(v) else f"{v * 1000:.1f}" for v in vals]
                + [f"{s.never_predicted_rate:.4f}"]
            )

"""Window extraction around labeled events, plus subject/acquisition splits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..signal import ChannelSubset, LabelSet, MovementClass, preprocess_batch, select_channels
from ..synth import Recording

MIN_OFFSET = 0.05  # s from event onset to window end
END_MARGIN = 0.02  # s kept between onset and window start
QUIET_VELOCITY = 1.0  # deg/s
STRAIGHT_WEIGHT = 3.0  # Straight windows per recording, in units of one movement class


@dataclass
class WindowDataset:
    X: np.ndarray  # [N x n x C], preprocessed
    y: np.ndarray  # class index within label_set
    subject: np.ndarray
    acquisition: np.ndarray  # "sXX_rYY"
    label_set: LabelSet
    subset: ChannelSubset

    def __len__(self) -> int:
        return len(self.y)

    def take(self, mask) -> "WindowDataset":
        return WindowDataset(
            self.X[mask], self.y[mask], self.subject[mask], self.acquisition[mask], self.label_set, self.subset
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.label_set.size)


def event_offsets(n: int, fs: float, per_event: int, rng: np.random.Generator, min_offset: float = MIN_OFFSET) -> np.ndarray:
    """Times from movement onset to window end, uniform over the window span."""
    hi = max(min_offset, n / fs - END_MARGIN)
    return rng.uniform(min_offset, hi, size=per_event)


def _quiet_mask(rec: Recording, pad: float) -> np.ndarray:
    """Per EOG sample: gaze is still within +/- ``pad`` seconds."""
    tr = rec.trace
    t = tr.times
    g = rec.gaze
    speed = np.hypot(np.gradient(g.azimuth, g.t), np.gradient(g.elevation, g.t))
    moving = np.interp(t, g.t, (speed > QUIET_VELOCITY).astype(float)) > 0
    k = int(np.ceil(pad * tr.sample_rate))
    if k:
        kern = np.ones(2 * k + 1)
        moving = np.convolve(moving.astype(float), kern, mode="same") > 0
    return ~moving


def recording_windows(
    rec: Recording,
    n: int,
    label_set: LabelSet,
    per_event: int,
    rng: np.random.Generator,
    use: str = "labels",
    straight_per_recording: int | None = None,
    min_offset: float = MIN_OFFSET,
    straight_weight: float = STRAIGHT_WEIGHT,
) -> tuple[np.ndarray, list[MovementClass]]:
    events = rec.labels if use == "labels" else rec.events
    if events is None:
        raise ValueError(f"recording {rec.key} has no gaze-derived labels; run the labeler first")
    tr = rec.trace
    fs = tr.sample_rate
    out, labels = [], []
    n_moves = 0
    for ev in events:
        if ev.label is MovementClass.STRAIGHT or ev.label not in label_set:
            continue
        n_moves += 1
        for off in event_offsets(n, fs, per_event, rng, min_offset):
            end = tr.index_of(ev.t + off)
            if end - n < 0 or end > len(tr):
                continue
            out.append(tr.samples[end - n : end])
            labels.append(ev.label)

    if MovementClass.STRAIGHT in label_set:
        movement_classes = max(1, sum(1 for c in label_set.classes if c is not MovementClass.STRAIGHT and c is not MovementClass.BLINK))
        if straight_per_recording is None:
            straight_per_recording = int(round(straight_weight * per_event * n_moves / movement_classes))
        quiet = _quiet_mask(rec, 0.05)
        # window [end-n, end) is usable when every sample in it is quiet
        run = np.concatenate([[0], np.cumsum(~quiet)])
        ends = np.arange(n, len(tr) + 1)
        ok = ends[(run[ends] - run[ends - n]) == 0]
        if len(ok):
            pick = rng.choice(ok, size=min(straight_per_recording, len(ok)), replace=False)
            for end in np.sort(pick):
                out.append(tr.samples[end - n : end])
                labels.append(MovementClass.STRAIGHT)
    if not out:
        return np.zeros((0, n, 5)), []
    return np.stack(out).astype(np.float64), labels


def build_windows(
    recordings: Sequence[Recording],
    n: int = 100,
    label_set: LabelSet | str = LabelSet.FULL10,
    subset: ChannelSubset | str = ChannelSubset.ALL,
    per_event: int = 4,
    seed: int = 0,
    use: str = "labels",
    min_offset: float = MIN_OFFSET,
    straight_weight: float = STRAIGHT_WEIGHT,
) -> WindowDataset:
    """Preprocessed training windows for every recording.

    Each kept event contributes ``per_event`` windows whose ends fall at random
    offsets after the movement onset; Straight windows are drawn from spans in
    which the gaze is still.
    """
    label_set = LabelSet.parse(label_set)
    subset = ChannelSubset.parse(subset)
    root = np.random.SeedSequence(seed)
    Xs, ys, subj, acq = [], [], [], []
    for rec, ss in zip(recordings, root.spawn(len(recordings))):
        X, labels = recording_windows(
            rec, n, label_set, per_event, np.random.default_rng(ss), use, min_offset=min_offset,
            straight_weight=straight_weight,
        )
        if not labels:
            continue
        Xs.append(X)
        ys += [label_set.index(c) for c in labels]
        subj += [rec.subject] * len(labels)
        acq += [rec.key] * len(labels)
    if not Xs:
        raise ValueError("no windows extracted")
    X = select_channels(np.concatenate(Xs), subset)
    Xp, keep = preprocess_batch(X)
    return WindowDataset(
        Xp.astype(np.float32),
        np.asarray(ys)[keep],
        np.asarray(subj)[keep],
        np.asarray(acq)[keep],
        label_set,
        subset,
    )


def split_groups(groups: Sequence, test_fraction: float, seed: int) -> tuple[set, set]:
    uniq = sorted(set(groups))
    rng = np.random.default_rng(seed)
    order = [uniq[i] for i in rng.permutation(len(uniq))]
    n_test = max(1, int(round(test_fraction * len(uniq))))
    return set(order[n_test:]), set(order[:n_test])


def split(ds: WindowDataset, mode: str = "subject", test_fraction: float = 0.2, seed: int = 0):
    """Train/test split by whole subject (default) or whole acquisition, never by window."""
    groups = ds.subject if mode == "subject" else ds.acquisition
    train_g, test_g = split_groups(groups.tolist(), test_fraction, seed)
    is_test = np.isin(groups, list(test_g))
    return ds.take(~is_test), ds.take(is_test)

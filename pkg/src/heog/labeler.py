"""Gaze-derivative movement labeling.

Offline step that turns logger prompts plus eye-tracker gaze into timestamped
movement labels: standardize the gaze derivative with statistics from the
post-prompt segments, threshold it per axis, merge a vertical and a
horizontal crossing into a corner class, and drop ambiguous segments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateCalibration
from .signal import SIGMA_FLOOR, GazeTrace, LabeledEvent, MovementClass, derivative

SEGMENT_SECONDS = 1.0


@dataclass(frozen=True)
class Thresholds:
    up: float = 3.0
    down: float = -3.0
    right: float = 2.5
    left: float = -2.5
    straight_band: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        lo, hi = self.straight_band
        if not (self.up > hi and self.down < lo and self.left < 0 < self.right):
            raise ValueError("thresholds must lie outside the straight band")


@dataclass(frozen=True)
class Crossing:
    t: float
    label: MovementClass
    index: int


@dataclass(frozen=True)
class Discarded:
    t: float
    reason: str  # too_many | invalid_pair | mismatch


@dataclass(frozen=True)
class Calibration:
    mean: np.ndarray  # (elev', az')
    std: np.ndarray


def _segment_mask(t: np.ndarray, segments) -> np.ndarray:
    mask = np.zeros(len(t), dtype=bool)
    for start, end in segments:
        mask |= (t >= start) & (t < end)
    return mask


def standardize_derivative(
    gaze: GazeTrace, calibration_segments: Sequence[tuple[float, float]]
) -> tuple[np.ndarray, np.ndarray, Calibration]:
    """Standardized (Elev', Az') using mean/std pooled over calibration segments."""
    if not calibration_segments:
        raise ValueError("need at least one calibration segment")
    dt = 1.0 / gaze.sample_rate
    d_el = derivative(gaze.elevation, dt)
    d_az = derivative(gaze.azimuth, dt)
    mask = _segment_mask(gaze.t, calibration_segments)
    if mask.sum() < 2:
        raise ValueError("calibration segments cover fewer than 2 samples")
    mu = np.array([d_el[mask].mean(), d_az[mask].mean()])
    sd = np.array([d_el[mask].std(), d_az[mask].std()])
    if np.any(sd < SIGMA_FLOOR):
        raise DegenerateCalibration("gaze derivative has zero variance over calibration segments")
    return (d_el - mu[0]) / sd[0], (d_az - mu[1]) / sd[1], Calibration(mu, sd)


def _axis_crossings(z, t, hi, lo, band, hi_label, lo_label, i0, i1):
    out = []
    armed = True
    for i in range(i0, i1):
        v = z[i]
        if armed and v > hi:
            out.append(Crossing(float(t[i]), hi_label, i))
            armed = False
        elif armed and v < lo:
            out.append(Crossing(float(t[i]), lo_label, i))
            armed = False
        elif not armed and band[0] < v < band[1]:
            armed = True
    return out


def detect_movements(
    elev_std: np.ndarray,
    az_std: np.ndarray,
    t: np.ndarray,
    thresholds: Thresholds = Thresholds(),
    segment: tuple[float, float] | None = None,
) -> list[Crossing]:
    """Threshold crossings within ``segment``, sorted by time.

    After a crossing, an axis stays disarmed until its series re-enters the
    straight band, so one excursion yields one crossing.
    """
    if segment is None:
        i0, i1 = 0, len(t)
    else:
        if segment[0] > t[-1] or segment[1] < t[0]:
            raise ValueError("segment outside series span")
        i0, i1 = np.searchsorted(t, segment[0]), np.searchsorted(t, segment[1])
    band = thresholds.straight_band
    found = _axis_crossings(
        elev_std, t, thresholds.up, thresholds.down, band, MovementClass.UP, MovementClass.DOWN, i0, i1
    )
    found += _axis_crossings(
        az_std, t, thresholds.right, thresholds.left, band, MovementClass.RIGHT, MovementClass.LEFT, i0, i1
    )
    return sorted(found, key=lambda c: (c.t, c.label.value))


def combine_and_validate(
    crossings: Sequence[Crossing], segment: tuple[float, float]
) -> LabeledEvent | Discarded:
    if len(crossings) == 0:
        return LabeledEvent(float(segment[0]), MovementClass.STRAIGHT, "straight", "gaze_derived")
    if len(crossings) == 1:
        c = crossings[0]
        return LabeledEvent(c.t, c.label, "", "gaze_derived")
    if len(crossings) > 2:
        return Discarded(crossings[0].t, "too_many")
    a, b = crossings
    da, db = a.label.direction, b.label.direction
    vertical = [d for d in (da, db) if d[0] == 0]
    horizontal = [d for d in (da, db) if d[1] == 0]
    if len(vertical) != 1 or len(horizontal) != 1:
        return Discarded(a.t, "invalid_pair")
    combined = (horizontal[0][0], vertical[0][1])
    return LabeledEvent(min(a.t, b.t), MovementClass.from_direction(combined), "", "gaze_derived")


def relabel_returns(events: Sequence[LabeledEvent]) -> list[LabeledEvent]:
    """Give each return movement the class of its direction of motion."""
    out = []
    for ev in events:
        if ev.kind == "return":
            ev = LabeledEvent(ev.t, ev.label.reversed(), ev.kind, ev.source, dict(ev.extra))
        out.append(ev)
    return out


@dataclass
class LabelResult:
    events: list[LabeledEvent]
    discarded: list[Discarded]
    calibration: Calibration

    @property
    def total(self) -> int:
        return len(self.events) + len(self.discarded)


def label_recording(
    gaze: GazeTrace,
    prompts: Sequence[LabeledEvent],
    thresholds: Thresholds = Thresholds(),
    segment_seconds: float = SEGMENT_SECONDS,
    calibration: str = "all",
) -> LabelResult:
    """Label every prompt segment of one recording.

    ``prompts`` are logger events (position labels, kind outbound/return/blink).
    ``calibration="all"`` pools every post-prompt segment for the derivative
    statistics; ``"first"`` uses only the first segment.
    """
    prompts = sorted(prompts, key=lambda e: e.t)
    if not prompts:
        raise ValueError("no prompts")
    segments = [(p.t, p.t + segment_seconds) for p in prompts]
    calib = segments if calibration == "all" else segments[:1]
    el, az, cal = standardize_derivative(gaze, calib)
    expected = relabel_returns(prompts)
    events, discarded = [], []
    for p, exp, seg in zip(prompts, expected, segments):
        crossings = detect_movements(el, az, gaze.t, thresholds, seg)
        if p.label is MovementClass.BLINK:
            t0 = crossings[0].t if crossings else p.t
            events.append(LabeledEvent(t0, MovementClass.BLINK, "blink", "gaze_derived"))
            continue
        res = combine_and_validate(crossings, seg)
        if isinstance(res, Discarded):
            discarded.append(res)
            continue
        if res.label is not MovementClass.STRAIGHT and res.label is not exp.label:
            discarded.append(Discarded(res.t, "mismatch"))
            continue
        kind = "straight" if res.label is MovementClass.STRAIGHT else p.kind
        events.append(LabeledEvent(res.t, res.label, kind, "gaze_derived"))
    return LabelResult(events, discarded, cal)

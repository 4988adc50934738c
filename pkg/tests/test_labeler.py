from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heog.errors import DegenerateCalibration
from heog.labeler import (
    Crossing,
    Discarded,
    Thresholds,
    combine_and_validate,
    detect_movements,
    label_recording,
    relabel_returns,
    standardize_derivative,
)
from heog.signal import GazeTrace, LabeledEvent, MovementClass as M
from heog.synth import SynthConfig, generate_protocol, prompts_from_events

T = np.arange(100) / 100.0


def _series(peaks=()):
    z = np.zeros(100)
    for i, v in peaks:
        z[i] = v
    return z


def _mirror(cls):
    d = cls.direction
    return cls if d is None else M.from_direction((-d[0], d[1]))


def test_thresholds_validate_band():
    with pytest.raises(ValueError):
        Thresholds(up=0.5)


def test_constant_gaze_is_degenerate():
    g = GazeTrace(T, np.zeros(100), np.zeros(100))
    with pytest.raises(DegenerateCalibration):
        standardize_derivative(g, [(0.0, 0.5)])


def test_step_outside_calibration_stands_out():
    rng = np.random.default_rng(0)
    t = np.arange(480) / 120.0
    az = rng.normal(0, 0.05, 480)
    el = rng.normal(0, 0.05, 480) + np.where(t >= 3.0, 10.0, 0.0)
    el_z, az_z, _ = standardize_derivative(GazeTrace(t, az, el), [(0.0, 1.0), (1.0, 2.0)])
    assert el_z[(t > 2.9) & (t < 3.1)].max() > Thresholds().up
    assert np.abs(az_z).max() < 10


def test_linear_drift_stays_in_straight_band():
    # calibration pools segments that contain movements, so a drift-only
    # segment has a derivative close to the pooled mean
    t = np.arange(1200) / 120.0
    drift = 0.2 * t
    step = 15.0 * ((t >= 1.5).astype(float) - (t >= 3.5).astype(float))
    g = GazeTrace(t, drift + step, 0.5 * drift + step)
    el_z, az_z, _ = standardize_derivative(g, [(1.0, 2.0), (3.0, 4.0), (6.0, 7.0)])
    quiet = (t >= 6.0) & (t < 9.0)
    assert np.abs(el_z[quiet]).max() < 1 and np.abs(az_z[quiet]).max() < 1
    assert detect_movements(el_z, az_z, t, segment=(6.0, 9.0)) == []


def test_detect_single_axis_crossings():
    up = detect_movements(_series([(40, 2.0), (41, 3.5), (42, 2.0)]), _series(), T)
    assert [(c.t, c.label) for c in up] == [(T[41], M.UP)]
    left = detect_movements(_series(), _series([(10, -2.6)]), T)
    assert [(c.t, c.label) for c in left] == [(T[10], M.LEFT)]
    assert detect_movements(_series([(5, 0.9)]), _series([(7, -0.9)]), T) == []


def test_excursion_counts_once_until_band_reentry():
    # 3.5, dips to 2 (outside the band), 3.5 again: one excursion
    el = _series([(10, 3.5), (11, 2.0), (12, 3.5), (13, 0.0), (20, 3.2)])
    got = detect_movements(el, _series(), T)
    assert [c.t for c in got] == [T[10], T[20]]


def test_detect_respects_segment():
    el = _series([(10, 4.0), (60, 4.0)])
    got = detect_movements(el, _series(), T, segment=(0.5, 1.0))
    assert [c.t for c in got] == [T[60]]


def test_combine_corner_and_discards():
    seg = (1.0, 2.0)
    up, left, right, down = (Crossing(t, c, 0) for t, c in [(1.1, M.UP), (1.2, M.LEFT), (1.3, M.RIGHT), (1.15, M.DOWN)])
    ev = combine_and_validate([up, left], seg)
    assert ev.label is M.UP_LEFT and ev.t == 1.1
    assert combine_and_validate([up, down], seg) == Discarded(1.1, "invalid_pair")
    assert combine_and_validate([left, right], seg).reason == "invalid_pair"
    assert combine_and_validate([up, left, right], seg).reason == "too_many"
    st_ev = combine_and_validate([], seg)
    assert st_ev.label is M.STRAIGHT and st_ev.t == 1.0
    assert combine_and_validate([right], seg).label is M.RIGHT


def test_relabel_returns():
    evs = [
        LabeledEvent(1.0, M.LEFT, "return"),
        LabeledEvent(2.0, M.UP_LEFT, "return"),
        LabeledEvent(3.0, M.BLINK, "blink"),
        LabeledEvent(4.0, M.UP, "outbound"),
    ]
    assert [e.label for e in relabel_returns(evs)] == [M.RIGHT, M.DOWN_RIGHT, M.BLINK, M.UP]


def _noise_free(seed):
    gaze, events = generate_protocol(SynthConfig(), np.random.default_rng(seed))
    return gaze, events, prompts_from_events(events)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_labels_match_truth_on_clean_gaze(seed):
    gaze, events, prompts = _noise_free(seed)
    res = label_recording(gaze, prompts)
    assert res.total == len(prompts) and not res.discarded
    assert len(res.events) == len(events)
    for got, want in zip(res.events, events):
        assert got.label is want.label
        assert abs(got.t - want.t) <= 0.025


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_azimuth_mirror_swaps_left_and_right(seed):
    gaze, _, prompts = _noise_free(seed)
    mirrored = GazeTrace(gaze.t, -gaze.azimuth, gaze.elevation)
    mprompts = [replace(p, label=_mirror(p.label)) for p in prompts]
    a = label_recording(gaze, prompts).events
    b = label_recording(mirrored, mprompts).events
    assert [e.t for e in a] == [e.t for e in b]
    assert [_mirror(e.label) for e in a] == [e.label for e in b]


def test_every_segment_is_labeled_or_discarded():
    cfg = SynthConfig()
    gaze, events = generate_protocol(cfg, np.random.default_rng(2))
    noisy = GazeTrace(gaze.t, gaze.azimuth + np.random.default_rng(3).normal(0, 0.3, len(gaze)), gaze.elevation)
    prompts = prompts_from_events(events)
    res = label_recording(noisy, prompts)
    assert len(res.events) <= len(prompts)
    assert len(res.events) + len(res.discarded) == len(prompts)

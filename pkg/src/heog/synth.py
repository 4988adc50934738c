"""Synthetic gaze + multichannel EOG recordings.

The generator follows the acquisition protocol: a dot visits eight peripheral
positions (each twice, shuffled) and returns to center, with two blink
prompts per recording. Gaze is rendered at 120 Hz and projected onto the five
electrode pairs through a dipole mixing matrix, per-channel attenuation,
baseline drift and white noise, then digitized at 240 Hz.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal as sps

from .signal import (
    EOG_SAMPLE_RATE,
    GAZE_SAMPLE_RATE,
    LSB_PER_MV,
    MAX_COUNTS,
    ChannelId,
    GazeTrace,
    LabeledEvent,
    MovementClass,
    MultiChannelTrace,
    read_events_jsonl,
    read_gaze_csv,
    read_trace_csv,
    write_events_jsonl,
    write_gaze_csv,
    write_trace_csv,
)

FULL_SCALE_DEG = 30.0

CONTACTLESS_SERIES_OHM = 1.0e9
INPUT_IMPEDANCE_RANGE_OHM = (2.35e8, 2.4e9)


def attenuation_factor(z_input: float, z_series: float) -> float:
    """Voltage divider between the amplifier input and the electrode coupling."""
    if z_input <= 0:
        raise ValueError("z_input must be positive")
    if z_series < 0:
        raise ValueError("z_series must be nonnegative")
    return z_input / (z_input + z_series)


_CONTACTLESS_LO = attenuation_factor(INPUT_IMPEDANCE_RANGE_OHM[0], CONTACTLESS_SERIES_OHM)
_CONTACTLESS_HI = attenuation_factor(INPUT_IMPEDANCE_RANGE_OHM[1], CONTACTLESS_SERIES_OHM)

PERIPHERAL_POSITIONS = (
    MovementClass.UP,
    MovementClass.DOWN,
    MovementClass.LEFT,
    MovementClass.RIGHT,
    MovementClass.DOWN_LEFT,
    MovementClass.UP_LEFT,
    MovementClass.UP_RIGHT,
    MovementClass.DOWN_RIGHT,
)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_subjects: int = 20
    recordings_per_subject: int = 5
    movement_interval: float = 1.0
    movement_duration: float = 0.040
    amplitude_range: tuple[float, float] = (250e-6, 1000e-6)
    noise_rms: float = 54e-6
    drift_amplitude: float = 200e-6
    drift_bandwidth: float = 0.2
    eog_sample_rate: float = EOG_SAMPLE_RATE
    gaze_sample_rate: float = GAZE_SAMPLE_RATE
    contact_attenuation: float = 0.992
    contactless_attenuation_range: tuple[float, float] = (_CONTACTLESS_LO, _CONTACTLESS_HI)
    geometry_jitter: float = 0.1
    diagonal_rotation_deg: float = 15.0
    contact_gain_jitter: float = 0.2
    tracker_latency: float = 0.045
    sync_offset_std: float = 0.015
    position_azimuth_deg: float = 20.0
    position_elevation_deg: float = 12.0
    amplitude_jitter: float = 0.1
    reaction_time_range: tuple[float, float] = (0.15, 0.30)
    blink_duration: float = 0.100
    blink_scale: float = 1.5
    lead_in: float = 2.0
    tail: float = 1.0
    blinks_per_recording: int = 2
    repeats_per_position: int = 2

    def __post_init__(self):
        for name in ("eog_sample_rate", "gaze_sample_rate", "movement_interval", "movement_duration"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.movement_duration >= self.movement_interval:
            raise ValueError("movement_duration must be shorter than movement_interval")
        lo, hi = self.amplitude_range
        if not (250e-6 <= lo <= hi <= 1000e-6):
            raise ValueError("amplitude_range must lie within [250e-6, 1000e-6] V")
        if self.noise_rms < 0 or self.drift_amplitude < 0:
            raise ValueError("noise_rms and drift_amplitude must be nonnegative")

    @classmethod
    def from_mapping(cls, values: dict) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}
        kw = {}
        for k, v in values.items():
            if k not in known:
                continue
            default = getattr(cls, k, None)
            if isinstance(default, tuple):
                v = tuple(float(x) for x in (v.split(",") if isinstance(v, str) else v))
            elif isinstance(default, bool):
                v = str(v).lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                v = int(v)
            elif isinstance(default, float):
                v = float(v)
            kw[k] = v
        return cls(**kw)

    def to_mapping(self) -> dict:
        return asdict(self)


DEFAULT_MIXING = np.array(
    [
        [-0.7, 0.7],  # diagonal left
        [0.7, 0.7],  # diagonal right
        [1.0, 0.0],  # horizontal
        [0.0, 1.0],  # vertical
        [0.6, 0.2],  # center
    ]
)


@dataclass(frozen=True)
class ChannelGeometry:
    mixing: np.ndarray = field(default_factory=lambda: DEFAULT_MIXING.copy())
    attenuation: np.ndarray = field(
        default_factory=lambda: np.array([0.992, 0.992, _CONTACTLESS_HI, _CONTACTLESS_HI, _CONTACTLESS_HI])
    )

    def __post_init__(self):
        m = np.asarray(self.mixing, dtype=float)
        a = np.asarray(self.attenuation, dtype=float)
        if m.shape != (5, 2) or a.shape != (5,):
            raise ValueError("mixing must be 5x2 and attenuation length 5")
        if np.any(a <= 0) or np.any(a > 1):
            raise ValueError("attenuation must lie in (0, 1]")
        object.__setattr__(self, "mixing", m)
        object.__setattr__(self, "attenuation", a)


@dataclass(frozen=True)
class Subject:
    """Per-subject physiology and electrode coupling."""

    index: int
    amplitude: float
    geometry: ChannelGeometry


def sample_subject(config: SynthConfig, index: int, rng: np.random.Generator) -> Subject:
    amplitude = rng.uniform(*config.amplitude_range)
    lo, hi = config.contactless_attenuation_range
    att = np.empty(5)
    for ch in ChannelId:
        att[ch] = config.contact_attenuation if ch.is_contact else rng.uniform(lo, hi)
    jitter = rng.uniform(-config.geometry_jitter, config.geometry_jitter, size=(5, 2))
    # keep pure-axis channels pure, only perturb their gain
    jitter[ChannelId.HORIZONTAL, 1] = 0.0
    jitter[ChannelId.VERTICAL, 0] = 0.0
    mixing = DEFAULT_MIXING + jitter
    # frame fit varies between wearers: rotate the diagonal pair together
    theta = np.deg2rad(rng.uniform(-config.diagonal_rotation_deg, config.diagonal_rotation_deg))
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    diag = [ChannelId.DIAGONAL_LEFT, ChannelId.DIAGONAL_RIGHT]
    mixing[diag] = mixing[diag] @ rot.T
    mixing[diag] *= rng.uniform(1 - config.contact_gain_jitter, 1 + config.contact_gain_jitter, size=(2, 1))
    return Subject(index, amplitude, ChannelGeometry(mixing, att))


def _smoothstep(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def _position_target(cls: MovementClass, config: SynthConfig) -> np.ndarray:
    d = cls.direction
    return np.array([d[0] * config.position_azimuth_deg, d[1] * config.position_elevation_deg])


def generate_protocol(
    config: SynthConfig,
    rng: np.random.Generator,
    prompts: Sequence[MovementClass] | None = None,
) -> tuple[GazeTrace, list[LabeledEvent]]:
    """Render one recording's gaze and its ground-truth events.

    ``prompts`` overrides the shuffled schedule (peripheral positions and/or
    ``Blink``). Event timestamps are movement onsets; returns carry the class
    of their direction of motion. Each event's ``extra`` holds the prompt time
    and the prompted position.
    """
    if prompts is None:
        prompts = [p for p in PERIPHERAL_POSITIONS for _ in range(config.repeats_per_position)]
        prompts += [MovementClass.BLINK] * config.blinks_per_recording
        prompts = [prompts[i] for i in rng.permutation(len(prompts))]

    events: list[LabeledEvent] = []
    moves = []  # (onset, delta vector)
    blinks = []  # onset times
    t = config.lead_in
    for p in prompts:
        if p is MovementClass.BLINK:
            onset = t + rng.uniform(*config.reaction_time_range)
            blinks.append(onset)
            events.append(_event(onset, p, "blink", t, p))
            t += config.movement_interval
            continue
        if p.direction is None:
            raise ValueError(f"cannot prompt {p}")
        scale = 1.0 + rng.uniform(-config.amplitude_jitter, config.amplitude_jitter)
        target = _position_target(p, config) * scale
        onset = t + rng.uniform(*config.reaction_time_range)
        moves.append((onset, target))
        events.append(_event(onset, p, "outbound", t, p))
        t_ret = t + config.movement_interval
        onset_ret = t_ret + rng.uniform(*config.reaction_time_range)
        moves.append((onset_ret, -target))
        events.append(_event(onset_ret, p.reversed(), "return", t_ret, p))
        t += 2 * config.movement_interval
    duration = t + config.tail

    fs = config.gaze_sample_rate
    tt = np.arange(int(np.ceil(duration * fs))) / fs
    gaze = np.zeros((len(tt), 2))
    for onset, delta in moves:
        gaze += np.outer(_smoothstep((tt - onset) / config.movement_duration), delta)
    peak = min(config.blink_scale * config.position_elevation_deg, FULL_SCALE_DEG)
    for onset in blinks:
        s = np.clip((tt - onset) / config.blink_duration, 0.0, 1.0)
        gaze[:, 1] += peak * 0.5 * (1.0 - np.cos(2 * np.pi * s))
    gaze = np.clip(gaze, -FULL_SCALE_DEG, FULL_SCALE_DEG)
    return GazeTrace(tt, gaze[:, 0], gaze[:, 1]), events


def _event(onset, label, kind, prompt_t, position) -> LabeledEvent:
    return LabeledEvent(
        float(onset),
        label,
        kind,
        "synthetic_truth",
        {"prompt_t": round(float(prompt_t), 6), "position": position.value},
    )


def prompts_from_events(events: Sequence[LabeledEvent]) -> list[LabeledEvent]:
    """Logger-style prompts: prompt time, prompted position, kind."""
    out = []
    for ev in events:
        out.append(
            LabeledEvent(
                float(ev.extra["prompt_t"]),
                MovementClass.parse(ev.extra["position"]),
                ev.kind,
                "logger",
            )
        )
    return out


def _drift(rng: np.random.Generator, T: int, fs: float, amplitude: float, bandwidth: float) -> np.ndarray:
    if amplitude == 0 or T == 0:
        return np.zeros(T)
    sos = sps.butter(2, bandwidth, fs=fs, output="sos")
    burn = int(5 * fs / bandwidth)
    x = sps.sosfilt(sos, rng.standard_normal(T + burn))[burn:]
    return x * (amplitude / x.std())


def gaze_to_volts(
    gaze: GazeTrace, geometry: ChannelGeometry, amplitude: float, fs: float, lag: float = 0.0
) -> np.ndarray:
    """Noise-free channel potentials in volts at ``fs``, shape [T x 5].

    ``lag`` delays the EOG relative to the gaze clock (seconds).
    """
    T = int(round(len(gaze) * fs / gaze.sample_rate))
    t = gaze.t[0] + np.arange(T) / fs - lag
    az = np.interp(t, gaze.t, gaze.azimuth)
    el = np.interp(t, gaze.t, gaze.elevation)
    dipole = np.stack([az, el], axis=1) / FULL_SCALE_DEG
    return amplitude * (dipole @ geometry.mixing.T) * geometry.attenuation


def volts_to_counts(v: np.ndarray) -> np.ndarray:
    counts = np.rint(v * 1e3 * LSB_PER_MV)
    return np.clip(counts, -MAX_COUNTS, MAX_COUNTS).astype(np.int32)


def gaze_to_eog(
    gaze: GazeTrace,
    geometry: ChannelGeometry,
    config: SynthConfig,
    rng: np.random.Generator,
    amplitude: float | None = None,
    lag: float = 0.0,
) -> MultiChannelTrace:
    if len(gaze) == 0:
        raise ValueError("gaze trace is empty")
    if amplitude is None:
        amplitude = float(np.mean(config.amplitude_range))
    fs = config.eog_sample_rate
    v = gaze_to_volts(gaze, geometry, amplitude, fs, lag)
    T = v.shape[0]
    for ch in range(5):
        v[:, ch] += _drift(rng, T, fs, config.drift_amplitude, config.drift_bandwidth)
    if config.noise_rms > 0:
        v += rng.normal(0.0, config.noise_rms, size=v.shape)
    return MultiChannelTrace(volts_to_counts(v), fs, float(gaze.t[0]))


@dataclass
class Recording:
    subject: int
    index: int
    trace: MultiChannelTrace
    gaze: GazeTrace
    events: list[LabeledEvent]
    prompts: list[LabeledEvent]
    labels: list[LabeledEvent] | None = None

    @property
    def key(self) -> str:
        return f"s{self.subject:02d}_r{self.index:02d}"


def generate_recording(
    config: SynthConfig,
    subject: Subject,
    index: int,
    rng: np.random.Generator,
    prompts: Sequence[MovementClass] | None = None,
) -> Recording:
    gaze, events = generate_protocol(config, rng, prompts)
    # gaze samples reach the logger late, so the EOG leads the gaze clock
    lag = -config.tracker_latency
    if config.sync_offset_std > 0:
        lag += rng.normal(0.0, config.sync_offset_std)
    trace = gaze_to_eog(gaze, subject.geometry, config, rng, subject.amplitude, lag)
    return Recording(subject.index, index, trace, gaze, events, prompts_from_events(events))


def generate_dataset(config: SynthConfig) -> list[Recording]:
    """All subjects x recordings; each gets an independent child RNG stream."""
    root = np.random.SeedSequence(config.seed)
    recs = []
    for s, sub_seq in enumerate(root.spawn(config.n_subjects)):
        subj_seq, *rec_seqs = sub_seq.spawn(1 + config.recordings_per_subject)
        subject = sample_subject(config, s, np.random.default_rng(subj_seq))
        for r, rs in enumerate(rec_seqs):
            recs.append(generate_recording(config, subject, r, np.random.default_rng(rs)))
    return recs


def generate_quiet(config: SynthConfig, duration: float, rng: np.random.Generator, subject: Subject | None = None) -> MultiChannelTrace:
    """Fixation-only stream: drift and noise, no movements."""
    if subject is None:
        subject = sample_subject(config, 0, rng)
    n = int(np.ceil(duration * config.gaze_sample_rate))
    t = np.arange(n) / config.gaze_sample_rate
    gaze = GazeTrace(t, np.zeros(n), np.zeros(n))
    return gaze_to_eog(gaze, subject.geometry, config, rng, subject.amplitude)


# --- dataset directories -----------------------------------------------------


def write_recording(rec: Recording, root) -> Path:
    d = Path(root) / f"subject_{rec.subject:02d}" / f"rec_{rec.index:02d}"
    d.mkdir(parents=True, exist_ok=True)
    write_trace_csv(rec.trace, d / "trace.csv")
    write_gaze_csv(rec.gaze, d / "gaze.csv")
    write_events_jsonl(rec.events, d / "events.jsonl")
    write_events_jsonl(rec.prompts, d / "prompts.jsonl")
    if rec.labels is not None:
        write_events_jsonl(rec.labels, d / "labels.jsonl")
    return d


def write_dataset(recs: Sequence[Recording], root) -> list[Path]:
    return [write_recording(r, root) for r in recs]


def read_dataset(root, eog_sample_rate: float = EOG_SAMPLE_RATE) -> list[Recording]:
    root = Path(root)
    recs = []
    for sd in sorted(root.glob("subject_*")):
        for rd in sorted(sd.glob("rec_*")):
            labels = read_events_jsonl(rd / "labels.jsonl") if (rd / "labels.jsonl").exists() else None
            events = read_events_jsonl(rd / "events.jsonl") if (rd / "events.jsonl").exists() else []
            recs.append(
                Recording(
                    int(sd.name.split("_")[1]),
                    int(rd.name.split("_")[1]),
                    read_trace_csv(rd / "trace.csv", eog_sample_rate),
                    read_gaze_csv(rd / "gaze.csv"),
                    events,
                    read_events_jsonl(rd / "prompts.jsonl"),
                    labels,
                )
            )
    if not recs:
        raise FileNotFoundError(f"no recordings under {root}")
    return recs


def with_overrides(config: SynthConfig, **kw) -> SynthConfig:
    return replace(config, **kw)


def config_json(config: SynthConfig) -> str:
    return json.dumps(config.to_mapping(), sort_keys=True)

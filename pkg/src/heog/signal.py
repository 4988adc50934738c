"""Shared domain types and window-level signal processing.

Everything here is a pure function over immutable inputs. Windows are laid
out time-major, ``[n points x C channels]``; batch helpers accept a leading
batch axis ``[N x n x C]``.
"""

from __future__ import annotations

import csv
import enum
import json
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateWindow, EmptyTrace, InvalidFilterConfig

EOG_SAMPLE_RATE = 240.0
GAZE_SAMPLE_RATE = 120.0
LSB_PER_MV = 78.0
INPUT_RANGE_MV = 460.0
MAX_COUNTS = int(INPUT_RANGE_MV * LSB_PER_MV)  # 35880

SIGMA_FLOOR = 1e-12
DEFAULT_SG_ORDER = 20
DEFAULT_SG_FRAME = 31


class ChannelId(enum.IntEnum):
    DIAGONAL_LEFT = 0
    DIAGONAL_RIGHT = 1
    HORIZONTAL = 2
    VERTICAL = 3
    CENTER = 4

    @property
    def column(self) -> str:
        return CHANNEL_COLUMNS[self.value]

    @property
    def is_contact(self) -> bool:
        return self in (ChannelId.DIAGONAL_LEFT, ChannelId.DIAGONAL_RIGHT)


TRAINING_WINDOW_SIZES = (25, 50, 75, 100, 125, 150, 200, 240)
CHANNEL_COLUMNS = ("dl", "dr", "h", "v", "c")


class ChannelSubset(enum.Enum):
    ALL = "all"
    CONTACT_ONLY = "contact"
    CONTACTLESS_ONLY = "contactless"

    @property
    def channels(self) -> tuple[ChannelId, ...]:
        if self is ChannelSubset.ALL:
            return tuple(ChannelId)
        want_contact = self is ChannelSubset.CONTACT_ONLY
        return tuple(c for c in ChannelId if c.is_contact == want_contact)

    @property
    def indices(self) -> list[int]:
        return [int(c) for c in self.channels]

    @classmethod
    def parse(cls, value: "str | ChannelSubset") -> "ChannelSubset":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


class MovementClass(enum.Enum):
    UP = "Up"
    DOWN = "Down"
    LEFT = "Left"
    RIGHT = "Right"
    DOWN_LEFT = "DownLeft"
    UP_LEFT = "UpLeft"
    UP_RIGHT = "UpRight"
    DOWN_RIGHT = "DownRight"
    STRAIGHT = "Straight"
    BLINK = "Blink"

    @property
    def direction(self) -> tuple[int, int] | None:
        """Unit (azimuth, elevation) signs of the motion, None for Straight/Blink."""
        return _DIRECTIONS.get(self)

    @property
    def is_corner(self) -> bool:
        d = self.direction
        return d is not None and d[0] != 0 and d[1] != 0

    @classmethod
    def from_direction(cls, d: tuple[int, int]) -> "MovementClass":
        for k, v in _DIRECTIONS.items():
            if v == tuple(d):
                return k
        raise ValueError(f"no movement class for direction {d}")

    def reversed(self) -> "MovementClass":
        """Class of the motion in the opposite direction (returns to center)."""
        d = self.direction
        if d is None:
            return self
        return MovementClass.from_direction((-d[0], -d[1]))

    @classmethod
    def parse(cls, value: "str | MovementClass") -> "MovementClass":
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            return cls[str(value).upper()]


_DIRECTIONS = {
    MovementClass.UP: (0, 1),
    MovementClass.DOWN: (0, -1),
    MovementClass.LEFT: (-1, 0),
    MovementClass.RIGHT: (1, 0),
    MovementClass.DOWN_LEFT: (-1, -1),
    MovementClass.UP_LEFT: (-1, 1),
    MovementClass.UP_RIGHT: (1, 1),
    MovementClass.DOWN_RIGHT: (1, -1),
}


class LabelSet(enum.Enum):
    FULL10 = "full10"
    BASIC6 = "basic6"

    @property
    def classes(self) -> tuple[MovementClass, ...]:
        if self is LabelSet.FULL10:
            return tuple(MovementClass)
        return (
            MovementClass.UP,
            MovementClass.DOWN,
            MovementClass.LEFT,
            MovementClass.RIGHT,
            MovementClass.STRAIGHT,
            MovementClass.BLINK,
        )

    @property
    def size(self) -> int:
        return len(self.classes)

    def index(self, cls: MovementClass) -> int:
        return self.classes.index(cls)

    def __contains__(self, cls: object) -> bool:
        return cls in self.classes

    @classmethod
    def parse(cls, value: "str | LabelSet") -> "LabelSet":
        if isinstance(value, cls):
            return value
        v = str(value).lower()
        aliases = {"10": "full10", "full": "full10", "6": "basic6", "basic": "basic6"}
        return cls(aliases.get(v, v))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MultiChannelTrace:
    """Five-channel EOG stream in signed ADC counts."""

    samples: np.ndarray
    sample_rate: float = EOG_SAMPLE_RATE
    start_time: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 2 or s.shape[1] != len(ChannelId):
            raise ValueError(f"samples must be [T x {len(ChannelId)}], got {s.shape}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if s.size and np.abs(s).max() > MAX_COUNTS:
            raise ValueError(f"counts exceed +/-{MAX_COUNTS}")
        object.__setattr__(self, "samples", _frozen(s.astype(np.int32)))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(len(self)) / self.sample_rate

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def index_of(self, t: float) -> int:
        """Index of the sample nearest to time ``t``."""
        return int(round((t - self.start_time) * self.sample_rate))


@dataclass(frozen=True)
class GazeTrace:
    """Gaze angles in degrees; (0, 0) is straight ahead, positive is right/up."""

    t: np.ndarray
    azimuth: np.ndarray
    elevation: np.ndarray

    def __post_init__(self):
        for name in ("t", "azimuth", "elevation"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=float)))
        if not (len(self.t) == len(self.azimuth) == len(self.elevation)):
            raise ValueError("gaze columns must have equal length")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def sample_rate(self) -> float:
        return 1.0 / float(np.median(np.diff(self.t)))


@dataclass(frozen=True)
class Window:
    data: np.ndarray
    end_time: float = 0.0

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim == 1:
            d = d[:, None]
        object.__setattr__(self, "data", _frozen(d))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LabeledEvent:
    t: float
    label: MovementClass
    kind: str = "outbound"
    source: str = "synthetic_truth"
    extra: dict = field(default_factory=dict, compare=False)

    def to_json(self) -> dict:
        d = {"t": round(float(self.t), 6), "label": self.label.value, "kind": self.kind}
        if self.source:
            d["source"] = self.source
        d.update(self.extra)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "LabeledEvent":
        d = dict(d)
        t = float(d.pop("t"))
        label = MovementClass.parse(d.pop("label"))
        kind = d.pop("kind", "outbound")
        source = d.pop("source", "")
        return cls(t, label, kind, source, d)


# --- window operations -------------------------------------------------------


def _unwrap(x):
    if isinstance(x, Window):
        return x.data, x
    return np.asarray(x, dtype=np.float64), None


def standardize(x, axis: int = -2):
    """Zero-mean, unit population-std per channel, using the window's own stats.

    Accepts a :class:`Window` (returns a Window) or an array whose time axis
    is ``axis``.
    """
    data, win = _unwrap(x)
    if data.ndim == 1:
        axis = 0
    if data.shape[axis] < 2:
        raise DegenerateWindow("need at least 2 points per channel")
    mu = data.mean(axis=axis, keepdims=True)
    sigma = data.std(axis=axis, keepdims=True)
    if np.any(sigma < SIGMA_FLOOR):
        raise DegenerateWindow("channel standard deviation below 1e-12")
    out = (data - mu) / sigma
    return Window(out, win.end_time) if win is not None else out


@lru_cache(maxsize=32)
def savgol_hat(frame_len: int, poly_order: int) -> np.ndarray:
    """Least-squares projection matrix onto polynomials over one frame.

    Row ``i`` maps a frame of samples to the fitted value at position ``i``;
    the middle row is the usual smoothing kernel. Built from a QR of a
    Legendre basis on [-1, 1], which stays well conditioned at order 20.
    """
    half = frame_len // 2
    u = np.arange(-half, half + 1) / max(half, 1)
    V = np.polynomial.legendre.legvander(u, poly_order)
    Q, _ = np.linalg.qr(V)
    H = Q @ Q.T
    H.setflags(write=False)
    return H


def _check_sg(n: int, poly_order: int, frame_len: int):
    if frame_len % 2 == 0:
        raise InvalidFilterConfig(f"frame_len must be odd, got {frame_len}")
    if frame_len <= poly_order:
        raise InvalidFilterConfig("frame_len must exceed poly_order")
    if poly_order < 0:
        raise InvalidFilterConfig("poly_order must be nonnegative")
    if n < frame_len:
        raise InvalidFilterConfig(f"window of {n} points shorter than frame {frame_len}")


def savgol_filter(
    x,
    poly_order: int = DEFAULT_SG_ORDER,
    frame_len: int = DEFAULT_SG_FRAME,
    mode: str = "mirror",
    axis: int = -2,
):
    """Savitzky-Golay smoothing along the time axis.

    ``mode="mirror"`` reflects the signal about the end samples before
    convolving; ``mode="interp"`` fits the first/last frame instead, which
    reproduces polynomials of degree <= ``poly_order`` exactly up to the edges.
    """
    data, win = _unwrap(x)
    if data.ndim == 1:
        axis = 0
    data = np.moveaxis(data, axis, -1)
    n = data.shape[-1]
    _check_sg(n, poly_order, frame_len)
    H = savgol_hat(frame_len, poly_order)
    half = frame_len // 2
    if mode == "mirror":
        pad = [(0, 0)] * (data.ndim - 1) + [(half, half)]
        padded = np.pad(data, pad, mode="reflect")
        frames = np.lib.stride_tricks.sliding_window_view(padded, frame_len, axis=-1)
        out = frames @ H[half]
    elif mode == "interp":
        frames = np.lib.stride_tricks.sliding_window_view(data, frame_len, axis=-1)
        out = np.empty_like(data)
        out[..., half : n - half] = frames @ H[half]
        out[..., :half] = data[..., :frame_len] @ H[:half].T
        out[..., n - half :] = data[..., n - frame_len :] @ H[half + 1 :].T
    else:
        raise InvalidFilterConfig(f"unknown edge mode {mode!r}")
    out = np.moveaxis(out, -1, axis)
    return Window(out, win.end_time) if win is not None else out


def derivative(series, dt: float) -> np.ndarray:
    """Central differences inside, one-sided at both ends."""
    y = np.asarray(series, dtype=np.float64)
    if y.shape[0] < 2:
        raise ValueError("derivative needs at least 2 points")
    if dt <= 0:
        raise ValueError("dt must be positive")
    out = np.empty_like(y)
    out[1:-1] = (y[2:] - y[:-2]) / (2 * dt)
    out[0] = (y[1] - y[0]) / dt
    out[-1] = (y[-1] - y[-2]) / dt
    return out


def window_offsets(total: int, n: int, stride: int) -> np.ndarray:
    if n < 1 or stride < 1:
        raise ValueError("n and stride must be >= 1")
    if total < n:
        return np.zeros(0, dtype=int)
    return np.arange(0, total - n + 1, stride)


def segment_windows(trace: MultiChannelTrace, n: int, stride: int) -> list[Window]:
    """Rolling windows at offsets 0, stride, 2*stride, ...

    ``end_time`` is the time just past the last sample of each window. A trace
    shorter than ``n`` yields an empty list and an :class:`EmptyTrace` warning.
    """
    offsets = window_offsets(len(trace), n, stride)
    if len(offsets) == 0:
        warnings.warn(EmptyTrace(f"trace of {len(trace)} points shorter than window {n}"))
        return []
    fs = trace.sample_rate
    return [
        Window(trace.samples[o : o + n], trace.start_time + (o + n) / fs) for o in offsets
    ]


def preprocess_batch(
    X: np.ndarray, poly_order: int = DEFAULT_SG_ORDER, frame_len: int = DEFAULT_SG_FRAME
) -> tuple[np.ndarray, np.ndarray]:
    """Standardize then smooth a batch ``[N x n x C]``.

    Returns the processed batch with degenerate windows removed, plus the
    boolean keep-mask over the input batch.
    """
    X = np.asarray(X, dtype=np.float64)
    sigma = X.std(axis=1)
    keep = np.all(sigma >= SIGMA_FLOOR, axis=1)
    Xk = X[keep]
    if len(Xk) == 0:
        return np.zeros((0,) + X.shape[1:]), keep
    Z = standardize(Xk, axis=1)
    if X.shape[1] >= frame_len:
        Z = savgol_filter(Z, poly_order, frame_len, axis=1)
    return Z, keep


def preprocess_window(data: np.ndarray, poly_order=DEFAULT_SG_ORDER, frame_len=DEFAULT_SG_FRAME):
    """Single-window variant of :func:`preprocess_batch`; raises on degeneracy."""
    Z = standardize(np.asarray(data, dtype=np.float64), axis=0)
    if Z.shape[0] >= frame_len:
        Z = savgol_filter(Z, poly_order, frame_len, axis=0)
    return Z


# --- file formats ------------------------------------------------------------


def write_trace_csv(trace: MultiChannelTrace, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("t",) + CHANNEL_COLUMNS)
        for t, row in zip(trace.times, trace.samples):
            w.writerow([f"{t:.6f}"] + [int(v) for v in row])


def read_trace_csv(path, sample_rate: float = EOG_SAMPLE_RATE) -> MultiChannelTrace:
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip().split(",")
    if tuple(header) != ("t",) + CHANNEL_COLUMNS:
        raise ValueError(f"unexpected trace header {header}")
    start = float(arr[0, 0]) if len(arr) else 0.0
    return MultiChannelTrace(arr[:, 1:].astype(np.int32), sample_rate, start)


def write_gaze_csv(gaze: GazeTrace, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("t", "azimuth_deg", "elevation_deg"))
        for t, az, el in zip(gaze.t, gaze.azimuth, gaze.elevation):
            w.writerow((f"{t:.6f}", f"{az:.6f}", f"{el:.6f}"))


def read_gaze_csv(path) -> GazeTrace:
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip().split(",")
    if header != ["t", "azimuth_deg", "elevation_deg"]:
        raise ValueError(f"unexpected gaze header {header}")
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return GazeTrace(arr[:, 0], arr[:, 1], arr[:, 2])


def write_events_jsonl(events: Iterable[LabeledEvent], path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for ev in events:
            f.write(json.dumps(ev.to_json(), sort_keys=True) + "\n")


def read_events_jsonl(path) -> list[LabeledEvent]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(LabeledEvent.from_json(json.loads(line)))
    return out


def select_channels(X: np.ndarray, subset: ChannelSubset | str | Sequence[int]) -> np.ndarray:
    if isinstance(subset, (ChannelSubset, str)):
        idx = ChannelSubset.parse(subset).indices
    else:
        idx = list(subset)
    return np.asarray(X)[..., idx]

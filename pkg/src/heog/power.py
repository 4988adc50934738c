"""Acquisition, inference and battery-lifetime arithmetic for the wearable."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .signal import EOG_SAMPLE_RATE

DEFAULT_OVERLAPS = (0.99, 0.98, 0.96, 0.90, 0.52)
MAX_SENSORS = 6


@dataclass(frozen=True)
class SchemeCost:
    """Measured per-inference cost of one deployed quantization scheme."""

    time_us: float
    energy_uj: float


# Cluster execution at 370 MHz, 10 classes; average power 153 mW during inference.
MEASURED_SCHEME_COSTS = {
    "f16": SchemeCost(2017.0, 309.0),
    "int8": SchemeCost(330.0, 50.0),
    "int4": SchemeCost(301.0, 46.0),
    "int2": SchemeCost(289.0, 44.0),
}


@dataclass(frozen=True)
class PowerProfile:
    mcu_baseline_mw: float = 4.0
    per_sensor_mw: float = 0.75
    inference_energy_uj: float = 46.0
    inference_power_mw: float = 153.0
    inference_time_us: float = 301.0
    scheme_costs: dict = field(default_factory=lambda: dict(MEASURED_SCHEME_COSTS))

    def __post_init__(self):
        for name in ("mcu_baseline_mw", "per_sensor_mw", "inference_energy_uj", "inference_power_mw", "inference_time_us"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def active_energy_uj(self) -> float:
        """Energy implied by active power times execution time (mW x us = nJ)."""
        return self.inference_power_mw * self.inference_time_us * 1e-3


@dataclass(frozen=True)
class BatterySpec:
    capacity_mah: float = 175.0
    voltage_v: float = 3.7

    def __post_init__(self):
        if self.capacity_mah <= 0 or self.voltage_v <= 0:
            raise ValueError("battery capacity and voltage must be positive")

    @property
    def energy_mwh(self) -> float:
        return self.capacity_mah * self.voltage_v


def acquisition_power(n_sensors: int, profile: PowerProfile = PowerProfile()) -> float:
    """Sampling power in mW for ``n_sensors`` active front-ends."""
    if not 0 <= n_sensors <= MAX_SENSORS:
        raise ValueError(f"n_sensors must be in [0, {MAX_SENSORS}], got {n_sensors}")
    return profile.mcu_baseline_mw + n_sensors * profile.per_sensor_mw


def stride_ms(overlap: float, window_points: int = 100, sample_rate: float = EOG_SAMPLE_RATE) -> float:
    if not 0 <= overlap < 1:
        raise ValueError(f"overlap must be in [0, 1), got {overlap}")
    return (1.0 - overlap) * window_points / sample_rate * 1000.0


def inference_power(
    overlap: float,
    window_points: int = 100,
    sample_rate: float = EOG_SAMPLE_RATE,
    profile: PowerProfile = PowerProfile(),
) -> tuple[float, float]:
    """Return ``(stride_ms, mW)`` for one inference per stride.

    uJ per ms is mW, so the division needs no unit factor.
    """
    s = stride_ms(overlap, window_points, sample_rate)
    return s, profile.inference_energy_uj / s


def battery_lifetime(total_power_mw: float, battery: BatterySpec = BatterySpec()) -> float:
    """Days of operation at a constant average draw."""
    if total_power_mw <= 0:
        raise ValueError("total power must be positive")
    return battery.energy_mwh / total_power_mw / 24.0


@dataclass(frozen=True)
class OverlapRow:
    overlap: float
    stride_ms: float
    inference_mw: float
    total_mw: float
    battery_days: float


def overlap_table(
    overlaps=DEFAULT_OVERLAPS,
    n_sensors: int = 5,
    window_points: int = 100,
    sample_rate: float = EOG_SAMPLE_RATE,
    profile: PowerProfile = PowerProfile(),
    battery: BatterySpec = BatterySpec(),
) -> list[OverlapRow]:
    acq = acquisition_power(n_sensors, profile)
    rows = []
    for ov in overlaps:
        s, p = inference_power(ov, window_points, sample_rate, profile)
        rows.append(OverlapRow(ov, s, p, acq + p, battery_lifetime(acq + p, battery)))
    return rows


def overlap_csv(rows: list[OverlapRow], full: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["overlap", "stride_ms", "inference_mw"]
    if full:
        head += ["total_mw", "battery_days"]
    w.writerow(head)
    for r in rows:
        line = [f"{r.overlap:.2f}", f"{r.stride_ms:.1f}", f"{r.inference_mw:.2f}"]
        if full:
            line += [f"{r.total_mw:.2f}", f"{r.battery_days:.2f}"]
        w.writerow(line)
    return buf.getvalue()

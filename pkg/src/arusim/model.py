"""Domain types for the recorder: audio format, gains, schedules, device config.

All validation bounds live here so the protocol layer, the profile codec and
the simulator agree on exactly one set of rules.  The storage arithmetic
(bytes per second, per-file size, card capacity) also lives here because it is
pure and every other module leans on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime, time
from enum import Enum
from typing import Any, Union

SAMPLE_RATE_MIN_HZ = 8_000
SAMPLE_RATE_MAX_HZ = 192_000
VALID_BIT_DEPTHS = (16, 24)
STEREO_CHANNELS = 2
PGA_STEP_DB = 0.375
PGA_MAX_DB = 60.0
PREAMP_MAX_DB = 40.0
WAV_HEADER_BYTES = 44
DEFAULT_OVERHEAD_FRACTION = 0.017
DAILY_SESSION_MINUTES = 10
DEFAULT_BATTERY_FLOOR_PERCENT = 10.0


class DeviceState(Enum):
    """Operating states of the unit; transitions are owned by the scheduler."""

    BOOT = "Boot"
    CONFIG_MODE = "ConfigMode"
    SLEEP = "Sleep"
    RECORDING = "Recording"
    WRITING = "Writing"
    STORAGE_FULL = "StorageFull"
    LOW_BATTERY = "LowBattery"


@dataclass(frozen=True)
class AudioFormat:
    sample_rate_hz: int = 48_000
    bit_depth: int = 16
    channels_per_file: int = STEREO_CHANNELS

    @property
    def bytes_per_sample(self) -> int:
        return self.bit_depth // 8

    @property
    def block_align(self) -> int:
        return self.bytes_per_sample * self.channels_per_file


@dataclass(frozen=True)
class GainSettings:
    pga_gain_db: float = 30.0
    preamp_gain_db: float = 20.0


@dataclass(frozen=True)
class DailySchedule:
    """Wake every whole hour between sunrise and sunset, record 10 minutes."""

    sunrise: time
    sunset: time
    session_minutes: int = DAILY_SESSION_MINUTES


@dataclass(frozen=True)
class HourlySchedule:
    """Wake at explicit times of day and record for a configured duration."""

    wake_times: tuple[time, ...]
    session_minutes: int


Schedule = Union[DailySchedule, HourlySchedule]


@dataclass(frozen=True)
class GateConfig:
    enabled: bool = False
    threshold: float = 0.05


@dataclass(frozen=True)
class BandpassConfig:
    enabled: bool = False
    low_hz: float = 1000.0
    high_hz: float = 8000.0


@dataclass(frozen=True)
class DeviceConfig:
    """Complete user-settable device state, as persisted and shared in profiles.

    ``extras`` carries unrecognised profile keys so that re-exporting a profile
    from a newer tool does not lose them.
    """

    format: AudioFormat = AudioFormat()
    gains: GainSettings = GainSettings()
    schedule: Schedule = DailySchedule(time(6, 0), time(18, 0))
    silence_gate: GateConfig = GateConfig()
    bandpass: BandpassConfig = BandpassConfig()
    battery_floor_percent: float = DEFAULT_BATTERY_FLOOR_PERCENT
    rtc_time: datetime = datetime(2026, 1, 1, 0, 0, 0)
    extras: dict = field(default_factory=dict)


def factory_defaults() -> DeviceConfig:
    """The configuration a factory-reset unit boots with."""
    return DeviceConfig()


@dataclass(frozen=True)
class Violation:
    """One failed validation rule: which field, what was required, what came in."""

    field: str
    requirement: str
    value: Any

    def __str__(self) -> str:
        return f"{self.field}={self.value!r} violates: {self.requirement}"


class ConfigValidationError(ValueError):
    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


def _is_pga_step(value: float) -> bool:
    steps = value / PGA_STEP_DB
    return abs(steps - round(steps)) < 1e-9


def config_violations(cfg: DeviceConfig) -> list[Violation]:
    """Every rule the config breaks, not just the first."""
    out: list[Violation] = []
    fmt = cfg.format
    if not (SAMPLE_RATE_MIN_HZ <= fmt.sample_rate_hz <= SAMPLE_RATE_MAX_HZ):
        out.append(Violation("format.sample_rate_hz",
                             f"{SAMPLE_RATE_MIN_HZ} <= rate <= {SAMPLE_RATE_MAX_HZ}",
                             fmt.sample_rate_hz))
    if fmt.bit_depth not in VALID_BIT_DEPTHS:
        out.append(Violation("format.bit_depth", f"one of {VALID_BIT_DEPTHS}", fmt.bit_depth))
    if fmt.channels_per_file != STEREO_CHANNELS:
        out.append(Violation("format.channels_per_file",
                             f"exactly {STEREO_CHANNELS} (each session file is stereo)",
                             fmt.channels_per_file))

    g = cfg.gains
    if not (0.0 <= g.pga_gain_db <= PGA_MAX_DB):
        out.append(Violation("gains.pga_gain_db", f"0.0 <= gain <= {PGA_MAX_DB}", g.pga_gain_db))
    elif not _is_pga_step(g.pga_gain_db):
        out.append(Violation("gains.pga_gain_db",
                             f"integer multiple of {PGA_STEP_DB} dB", g.pga_gain_db))
    if not (0.0 <= g.preamp_gain_db <= PREAMP_MAX_DB):
        out.append(Violation("gains.preamp_gain_db",
                             f"0.0 <= gain <= {PREAMP_MAX_DB}", g.preamp_gain_db))

    sched = cfg.schedule
    if isinstance(sched, DailySchedule):
        if not sched.sunrise < sched.sunset:
            out.append(Violation("schedule.sunrise", "sunrise < sunset",
                                 (sched.sunrise, sched.sunset)))
        if sched.session_minutes != DAILY_SESSION_MINUTES:
            out.append(Violation("schedule.session_minutes",
                                 f"fixed at {DAILY_SESSION_MINUTES} in daily mode",
                                 sched.session_minutes))
    elif isinstance(sched, HourlySchedule):
        if sched.session_minutes < 1:
            out.append(Violation("schedule.session_minutes", ">= 1", sched.session_minutes))
        if not sched.wake_times:
            out.append(Violation("schedule.wake_times", "at least one wake time",
                                 sched.wake_times))
        else:
            times = list(sched.wake_times)
            if any(b <= a for a, b in zip(times, times[1:])):
                out.append(Violation("schedule.wake_times", "strictly increasing", times))
            elif sched.session_minutes >= 1:
                gap_s = sched.session_minutes * 60
                for a, b in zip(times, times[1:]):
                    delta = (b.hour - a.hour) * 3600 + (b.minute - a.minute) * 60 \
                        + (b.second - a.second)
                    if delta < gap_s:
                        out.append(Violation(
                            "schedule.wake_times",
                            f"consecutive wakes at least {sched.session_minutes} min apart",
                            (a, b)))
                        break
    else:
        out.append(Violation("schedule", "Daily or Hourly schedule", type(sched).__name__))

    gate = cfg.silence_gate
    if not (0.0 <= gate.threshold <= 1.0):
        out.append(Violation("silence_gate.threshold", "0 <= threshold <= 1", gate.threshold))

    bp = cfg.bandpass
    if bp.enabled:
        nyquist = fmt.sample_rate_hz / 2
        if not (0.0 < bp.low_hz < bp.high_hz < nyquist):
            out.append(Violation("bandpass",
                                 f"0 < low_hz < high_hz < {nyquist} (sample_rate/2)",
                                 (bp.low_hz, bp.high_hz)))

    if not (0.0 <= cfg.battery_floor_percent <= 100.0):
        out.append(Violation("battery_floor_percent", "0 <= percent <= 100",
                             cfg.battery_floor_percent))
    return out


def validate_config(cfg: DeviceConfig) -> DeviceConfig:
    """Return ``cfg`` unchanged if every invariant holds, else raise with all violations."""
    violations = config_violations(cfg)
    if violations:
        raise ConfigValidationError(violations)
    return cfg


def bytes_per_second(fmt: AudioFormat) -> int:
    """PCM data rate of one session file (stereo pair) in bytes/second."""
    return fmt.sample_rate_hz * fmt.bytes_per_sample * fmt.channels_per_file


def session_file_bytes(fmt: AudioFormat, duration_s: float) -> int:
    """Size of one finished WAV file: 44-byte canonical header plus PCM data.

    The data size is derived from whole frames so it matches an actually
    emitted file byte for byte; for integer durations it equals
    44 + bytes_per_second * duration.
    """
    if duration_s <= 0:
        raise ValueError(f"duration_s must be > 0, got {duration_s}")
    frames = round(fmt.sample_rate_hz * duration_s)
    return WAV_HEADER_BYTES + frames * fmt.block_align


def capacity_files(total_storage_bytes: int, fmt: AudioFormat, duration_s: float,
                   overhead_fraction: float = DEFAULT_OVERHEAD_FRACTION) -> int:
    """How many recording files of the given length fit in the storage array.

    ``overhead_fraction`` models filesystem bookkeeping as a single haircut on
    usable capacity.
    """
    if not (0.0 <= overhead_fraction < 1.0):
        raise ValueError(f"overhead_fraction must be in [0, 1), got {overhead_fraction}")
    usable = total_storage_bytes * (1.0 - overhead_fraction)
    return int(math.floor(usable / session_file_bytes(fmt, duration_s)))


def parse_time_of_day(text: str) -> time:
    """Parse 'HH:MM' or 'HH:MM:SS' into a time of day."""
    parts = text.strip().split(":")
    if len(parts) not in (2, 3):
        raise ValueError(f"expected HH:MM or HH:MM:SS, got {text!r}")
    h, m = int(parts[0]), int(parts[1])
    s = int(parts[2]) if len(parts) == 3 else 0
    return time(h, m, s)


def format_time_of_day(t: time) -> str:
    if t.second:
        return f"{t.hour:02d}:{t.minute:02d}:{t.second:02d}"
    return f"{t.hour:02d}:{t.minute:02d}"


def with_rtc_time(cfg: DeviceConfig, at: datetime) -> DeviceConfig:
    return replace(cfg, rtc_time=at)

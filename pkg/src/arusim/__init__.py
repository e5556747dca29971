"""Deterministic desk-scale simulator of a solar-powered autonomous
bird-call recording unit: virtual hardware, capture pipeline, scheduler,
configuration protocol, and a scenario-driven event loop."""

from .model import (
    AudioFormat,
    BandpassConfig,
    ConfigValidationError,
    DailySchedule,
    DeviceConfig,
    DeviceState,
    GainSettings,
    GateConfig,
    HourlySchedule,
    Violation,
    bytes_per_second,
    capacity_files,
    config_violations,
    factory_defaults,
    session_file_bytes,
    validate_config,
)

__version__ = "0.1.0"

__all__ = [
    "AudioFormat",
    "BandpassConfig",
    "ConfigValidationError",
    "DailySchedule",
    "DeviceConfig",
    "DeviceState",
    "GainSettings",
    "GateConfig",
    "HourlySchedule",
    "Violation",
    "bytes_per_second",
    "capacity_files",
    "config_violations",
    "factory_defaults",
    "session_file_bytes",
    "validate_config",
    "__version__",
]

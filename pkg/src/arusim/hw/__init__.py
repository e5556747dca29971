"""Deterministic software stand-ins for every peripheral the firmware touches."""

from .audio import (
    AudioSource,
    FilePlaybackSource,
    MixtureSource,
    NoiseSource,
    Segment,
    SilenceSource,
    ToneSource,
    audio_read,
    quantize,
)
from .eeprom import EEPROM_SIZE, VirtualEeprom
from .energy import EnergyState, default_draw_table
from .rtc import VirtualRtc
from .storage import SdCard, SdCardArray, WriteResult

__all__ = [
    "AudioSource",
    "FilePlaybackSource",
    "MixtureSource",
    "NoiseSource",
    "Segment",
    "SilenceSource",
    "ToneSource",
    "audio_read",
    "quantize",
    "EEPROM_SIZE",
    "VirtualEeprom",
    "EnergyState",
    "default_draw_table",
    "VirtualRtc",
    "SdCard",
    "SdCardArray",
    "WriteResult",
]

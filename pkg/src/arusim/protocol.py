"""Configuration link: packet framing over a byte stream, EEPROM persistence,
and shareable JSON profiles.

Wire format (identical over USB and Wi-Fi transports):

    0xAA | packet_id (1) | payload_len (2, LE) | payload | crc (2, LE)

with CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF) over
packet_id || payload_len || payload.  On a CRC failure the decoder discards
the sync byte and rescans, so any intact frame later in the stream is always
recovered.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from enum import IntEnum
from typing import Optional, Union

from .model import (
    AudioFormat,
    BandpassConfig,
    DailySchedule,
    DeviceConfig,
    DeviceState,
    GainSettings,
    GateConfig,
    HourlySchedule,
    config_violations,
    factory_defaults,
    format_time_of_day,
    parse_time_of_day,
    validate_config,
)

SYNC = 0xAA
MAX_PAYLOAD = 1024
HEADER_LEN = 4   # sync + id + len
FRAME_OVERHEAD = HEADER_LEN + 2  # + crc

PROFILE_SCHEMA_VERSION = 1


class PacketId(IntEnum):
    SET_AUDIO_FORMAT = 0x01
    SET_GAINS = 0x02
    SET_SCHEDULE = 0x03
    SET_DSP = 0x04
    SET_RTC_TIME = 0x05
    FACTORY_RESET = 0x06
    FORCED_SLEEP = 0x07
    QUERY_STATUS = 0x08
    SET_FULL_PROFILE = 0x09
    # device -> operator responses (invented plumbing, documented in README)
    ACK = 0x0A
    NACK = 0x0B


# -- CRC-16/CCITT-FALSE ------------------------------------------------------

def _build_crc_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021 if crc & 0x8000 else crc << 1) & 0xFFFF
        table.append(crc)
    return table


_CRC_TABLE = _build_crc_table()


def crc16_ccitt_false(data: bytes) -> int:
    crc = 0xFFFF
    for b in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[(crc >> 8) ^ b]
    return crc


assert crc16_ccitt_false(b"123456789") == 0x29B1  # published check value


# -- framing ------------------------------------------------------------------

@dataclass(frozen=True)
class ConfigPacket:
    packet_id: int
    payload: bytes = b""


def encode_packet(packet_id: int, payload: bytes = b"") -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise ValueError(f"payload {len(payload)} exceeds {MAX_PAYLOAD} bytes")
    body = struct.pack("<BH", packet_id, len(payload)) + payload
    return bytes([SYNC]) + body + struct.pack("<H", crc16_ccitt_false(body))


@dataclass(frozen=True)
class CrcError:
    offset: int          # where the bad frame's sync byte sat in the input
    packet_id: int


@dataclass
class DecodeResult:
    """One decode attempt over a byte buffer.

    packet is set on success; need_more means the buffer holds (at most) an
    incomplete frame; consumed is how many leading bytes the caller should
    discard; junk_skipped counts garbage bytes before the frame; crc_errors
    lists corrupted frames skipped during the scan.
    """

    packet: Optional[ConfigPacket] = None
    consumed: int = 0
    junk_skipped: int = 0
    crc_errors: list = field(default_factory=list)
    need_more: bool = False


def decode_packet(buf: Union[bytes, bytearray], eof: bool = False) -> DecodeResult:
    """Scan for the next valid frame; resynchronize past corruption.

    With eof=True an incomplete frame candidate is treated as corrupt (its
    sync byte is skipped) so trailing intact frames are still recovered.
    """
    res = DecodeResult()
    pos = 0
    n = len(buf)
    while True:
        while pos < n and buf[pos] != SYNC:
            pos += 1
            res.junk_skipped += 1
        if pos >= n:
            res.consumed = pos
            return res
        if pos + HEADER_LEN > n:
            if not eof:
                res.consumed = pos
                res.need_more = True
                return res
            pos += 1
            res.junk_skipped += 1
            continue
        packet_id, length = struct.unpack_from("<BH", buf, pos + 1)
        end = pos + HEADER_LEN + length + 2
        if length > MAX_PAYLOAD:
            # not a plausible frame: skip the sync byte and rescan
            res.crc_errors.append(CrcError(pos, packet_id))
            pos += 1
            res.junk_skipped += 1
            continue
        if end > n:
            if not eof:
                res.consumed = pos
                res.need_more = True
                return res
            pos += 1
            res.junk_skipped += 1
            continue
        body = bytes(buf[pos + 1:pos + HEADER_LEN + length])
        (crc,) = struct.unpack_from("<H", buf, end - 2)
        if crc16_ccitt_false(body) != crc:
            res.crc_errors.append(CrcError(pos, packet_id))
            pos += 1
            res.junk_skipped += 1
            continue
        res.packet = ConfigPacket(packet_id, bytes(buf[pos + HEADER_LEN:end - 2]))
        res.consumed = end
        return res


def iter_packets(stream: bytes, eof: bool = True):
    """All valid frames in a byte stream, resynchronizing past corruption."""
    buf = memoryview(bytes(stream))
    while len(buf):
        res = decode_packet(buf, eof=eof)
        if res.packet is None:
            break
        yield res
        buf = buf[res.consumed:]


# -- payload codecs ------------------------------------------------------------

def encode_audio_format(fmt: AudioFormat) -> bytes:
    return struct.pack("<IB", fmt.sample_rate_hz, fmt.bit_depth)


def decode_audio_format(payload: bytes) -> AudioFormat:
    rate, depth = struct.unpack("<IB", payload)
    return AudioFormat(sample_rate_hz=rate, bit_depth=depth)


def encode_gains(g: GainSettings) -> bytes:
    return struct.pack("<ff", g.pga_gain_db, g.preamp_gain_db)


def decode_gains(payload: bytes) -> GainSettings:
    pga, preamp = struct.unpack("<ff", payload)
    return GainSettings(pga_gain_db=pga, preamp_gain_db=preamp)


def _schedule_to_dict(s) -> dict:
    if isinstance(s, DailySchedule):
        return {"variant": "daily", "sunrise": format_time_of_day(s.sunrise),
                "sunset": format_time_of_day(s.sunset),
                "session_minutes": s.session_minutes}
    if isinstance(s, HourlySchedule):
        return {"variant": "hourly",
                "wake_times": [format_time_of_day(t) for t in s.wake_times],
                "session_minutes": s.session_minutes}
    raise TypeError(f"unknown schedule {type(s).__name__}")


def _schedule_from_dict(d: dict):
    variant = d.get("variant")
    if variant == "daily":
        return DailySchedule(parse_time_of_day(d["sunrise"]),
                             parse_time_of_day(d["sunset"]),
                             int(d.get("session_minutes", 10)))
    if variant == "hourly":
        return HourlySchedule(tuple(parse_time_of_day(t) for t in d["wake_times"]),
                              int(d["session_minutes"]))
    raise ValueError(f"unknown schedule variant {variant!r}")


def encode_schedule(s) -> bytes:
    return json.dumps(_schedule_to_dict(s), separators=(",", ":")).encode()


def decode_schedule(payload: bytes):
    return _schedule_from_dict(json.loads(payload.decode()))


def encode_dsp(gate: GateConfig, bandpass: BandpassConfig) -> bytes:
    doc = {
        "silence_gate": {"enabled": gate.enabled, "threshold": gate.threshold},
        "bandpass": {"enabled": bandpass.enabled, "low_hz": bandpass.low_hz,
                     "high_hz": bandpass.high_hz},
    }
    return json.dumps(doc, separators=(",", ":")).encode()


def decode_dsp(payload: bytes) -> tuple[GateConfig, BandpassConfig]:
    doc = json.loads(payload.decode())
    g = doc["silence_gate"]
    b = doc["bandpass"]
    return (GateConfig(bool(g["enabled"]), float(g["threshold"])),
            BandpassConfig(bool(b["enabled"]), float(b["low_hz"]),
                           float(b["high_hz"])))


_EPOCH = datetime(1970, 1, 1)


def encode_rtc_time(at: datetime) -> bytes:
    return struct.pack("<q", int((at - _EPOCH).total_seconds()))


def decode_rtc_time(payload: bytes) -> datetime:
    (secs,) = struct.unpack("<q", payload)
    return _EPOCH + timedelta(seconds=secs)


# -- JSON profiles --------------------------------------------------------------

class ProfileError(ValueError):
    """Base for profile import failures."""


class ProfileParseError(ProfileError):
    pass


class ProfileVersionError(ProfileError):
    pass


class ProfileValidationError(ProfileError):
    def __init__(self, violations):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


_PROFILE_KEYS = {"schema_version", "profile_name", "format", "gains", "schedule",
                 "silence_gate", "bandpass", "battery_floor_percent", "rtc_time"}


def profile_to_dict(cfg: DeviceConfig, profile_name: Optional[str] = None) -> dict:
    # name rides in extras so that export -> import is the identity; it is
    # only emitted when the config is actually named
    name = cfg.extras.get("profile_name", profile_name)
    doc = {
        "schema_version": PROFILE_SCHEMA_VERSION,
        "format": {
            "sample_rate_hz": cfg.format.sample_rate_hz,
            "bit_depth": cfg.format.bit_depth,
            "channels_per_file": cfg.format.channels_per_file,
        },
        "gains": {
            "pga_gain_db": cfg.gains.pga_gain_db,
            "preamp_gain_db": cfg.gains.preamp_gain_db,
        },
        "schedule": _schedule_to_dict(cfg.schedule),
        "silence_gate": {
            "enabled": cfg.silence_gate.enabled,
            "threshold": cfg.silence_gate.threshold,
        },
        "bandpass": {
            "enabled": cfg.bandpass.enabled,
            "low_hz": cfg.bandpass.low_hz,
            "high_hz": cfg.bandpass.high_hz,
        },
        "battery_floor_percent": cfg.battery_floor_percent,
        "rtc_time": cfg.rtc_time.isoformat(),
    }
    if name is not None:
        doc["profile_name"] = name
    # unknown keys ride along for forward compatibility
    for key, value in cfg.extras.items():
        if key not in _PROFILE_KEYS:
            doc[key] = value
    return doc


def profile_export(cfg: DeviceConfig, profile_name: Optional[str] = None) -> str:
    return json.dumps(profile_to_dict(cfg, profile_name), indent=2) + "\n"


def profile_from_dict(doc: dict) -> DeviceConfig:
    if not isinstance(doc, dict):
        raise ProfileParseError("profile must be a JSON object")
    version = doc.get("schema_version")
    if version != PROFILE_SCHEMA_VERSION:
        raise ProfileVersionError(
            f"unsupported schema_version {version!r}; this build speaks "
            f"{PROFILE_SCHEMA_VERSION}")
    try:
        fmt = doc["format"]
        gains = doc["gains"]
        gate = doc["silence_gate"]
        bp = doc["bandpass"]
        extras = {k: v for k, v in doc.items() if k not in _PROFILE_KEYS}
        if "profile_name" in doc:
            extras["profile_name"] = doc["profile_name"]
        cfg = DeviceConfig(
            format=AudioFormat(int(fmt["sample_rate_hz"]), int(fmt["bit_depth"]),
                               int(fmt.get("channels_per_file", 2))),
            gains=GainSettings(float(gains["pga_gain_db"]),
                               float(gains["preamp_gain_db"])),
            schedule=_schedule_from_dict(doc["schedule"]),
            silence_gate=GateConfig(bool(gate["enabled"]), float(gate["threshold"])),
            bandpass=BandpassConfig(bool(bp["enabled"]), float(bp["low_hz"]),
                                    float(bp["high_hz"])),
            battery_floor_percent=float(doc["battery_floor_percent"]),
            rtc_time=datetime.fromisoformat(doc["rtc_time"]),
            extras=extras,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProfileParseError(f"malformed profile: {exc}") from exc
    violations = config_violations(cfg)
    if violations:
        raise ProfileValidationError(violations)
    return cfg


def profile_import(text: str) -> DeviceConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProfileParseError(f"not valid JSON: {exc}") from exc
    return profile_from_dict(doc)


# -- EEPROM persistence ----------------------------------------------------------

# Two alternating slots with a sequence counter give old-or-new atomicity on a
# part with no atomic multi-byte write.
SLOT_ADDRESSES = (0x0000, 0x0400)
SLOT_SIZE = 0x0400
_IMAGE_MAGIC = b"ARUC"
_IMAGE_VERSION = 1
_IMAGE_HEADER = struct.Struct("<4sBIH")  # magic, version, sequence, payload_len
PERSIST_PAGE = 128


def _build_image(cfg: DeviceConfig, sequence: int) -> bytes:
    payload = json.dumps(profile_to_dict(cfg), separators=(",", ":")).encode()
    image = _IMAGE_HEADER.pack(_IMAGE_MAGIC, _IMAGE_VERSION, sequence, len(payload))
    image += payload
    if len(image) + 2 > SLOT_SIZE:
        raise ValueError(f"config image {len(image) + 2} bytes exceeds slot "
                         f"{SLOT_SIZE}")
    return image + struct.pack("<H", crc16_ccitt_false(image))


def _parse_slot(raw: bytes) -> Optional[tuple[int, DeviceConfig]]:
    if raw[:4] != _IMAGE_MAGIC:
        return None
    magic, version, sequence, length = _IMAGE_HEADER.unpack_from(raw)
    if version != _IMAGE_VERSION:
        return None
    end = _IMAGE_HEADER.size + length
    if end + 2 > len(raw):
        return None
    image = raw[:end]
    (crc,) = struct.unpack_from("<H", raw, end)
    if crc16_ccitt_false(image) != crc:
        return None
    try:
        cfg = profile_from_dict(json.loads(raw[_IMAGE_HEADER.size:end].decode()))
    except (ProfileError, UnicodeDecodeError, json.JSONDecodeError):
        return None
    return sequence, cfg


def _slot_sequences(eeprom) -> list[Optional[tuple[int, DeviceConfig]]]:
    return [_parse_slot(eeprom.read(addr, SLOT_SIZE)) for addr in SLOT_ADDRESSES]


def persist_config(eeprom, cfg: DeviceConfig) -> None:
    """Write a versioned, checksummed image into the older of two slots.

    The image goes out in EEPROM-page-sized writes; a power cut between pages
    leaves that slot's checksum invalid and the other slot untouched.
    """
    slots = _slot_sequences(eeprom)
    sequences = [s[0] if s else -1 for s in slots]
    target = 0 if sequences[0] <= sequences[1] else 1
    image = _build_image(cfg, max(sequences) + 1)
    base = SLOT_ADDRESSES[target]
    for offset in range(0, len(image), PERSIST_PAGE):
        eeprom.write(base + offset, image[offset:offset + PERSIST_PAGE])


def load_config(eeprom) -> Optional[DeviceConfig]:
    """Newest valid persisted config, or None (corrupt or blank EEPROM)."""
    slots = [s for s in _slot_sequences(eeprom) if s is not None]
    if not slots:
        return None
    return max(slots, key=lambda s: s[0])[1]


# -- packet application ----------------------------------------------------------

@dataclass
class Ack:
    ok: bool
    request_id: int
    errors: list = field(default_factory=list)
    status: Optional[dict] = None

    def to_frame(self) -> bytes:
        doc = {}
        if self.errors:
            doc["errors"] = [str(e) for e in self.errors]
        if self.status is not None:
            doc["status"] = self.status
        payload = bytes([self.request_id]) + \
            json.dumps(doc, separators=(",", ":"), sort_keys=True).encode()
        return encode_packet(PacketId.ACK if self.ok else PacketId.NACK, payload)


ALLOWED_ANY_STATE = {PacketId.QUERY_STATUS, PacketId.FORCED_SLEEP}


def apply_packet(device, packet: ConfigPacket) -> Ack:
    """Parse, validate, persist, acknowledge.  Failures leave config untouched.

    ``device`` carries: state (DeviceState), config (DeviceConfig), eeprom,
    and hooks set_rtc(datetime), request_forced_sleep(), factory_reset(),
    status_snapshot().
    """
    pid = packet.packet_id
    try:
        pid = PacketId(pid)
    except ValueError:
        return Ack(False, packet.packet_id, [f"unknown packet id 0x{pid:02X}"])

    if pid in (PacketId.ACK, PacketId.NACK):
        return Ack(False, pid, ["response ids are not commands"])

    if device.state != DeviceState.CONFIG_MODE and pid not in ALLOWED_ANY_STATE:
        return Ack(False, pid, [
            f"wrong mode: {pid.name} requires ConfigMode, device is "
            f"{device.state.value} (configuration is only accepted during "
            "non-recording ON time)"])

    if pid == PacketId.QUERY_STATUS:
        return Ack(True, pid, status=device.status_snapshot())
    if pid == PacketId.FORCED_SLEEP:
        device.request_forced_sleep()
        return Ack(True, pid)
    if pid == PacketId.FACTORY_RESET:
        device.factory_reset()
        return Ack(True, pid)

    try:
        candidate = _updated_config(device.config, pid, packet.payload)
    except (ValueError, KeyError, struct.error) as exc:
        return Ack(False, pid, [f"bad payload: {exc}"])

    violations = config_violations(candidate)
    if violations:
        return Ack(False, pid, violations)

    try:
        persist_config(device.eeprom, candidate)
    except ValueError as exc:
        return Ack(False, pid, [f"persist failed: {exc}"])

    device.config = candidate
    if pid == PacketId.SET_RTC_TIME:
        device.set_rtc(candidate.rtc_time)
    return Ack(True, pid)


def _updated_config(cfg: DeviceConfig, pid: PacketId, payload: bytes) -> DeviceConfig:
    if pid == PacketId.SET_AUDIO_FORMAT:
        return replace(cfg, format=decode_audio_format(payload))
    if pid == PacketId.SET_GAINS:
        return replace(cfg, gains=decode_gains(payload))
    if pid == PacketId.SET_SCHEDULE:
        return replace(cfg, schedule=decode_schedule(payload))
    if pid == PacketId.SET_DSP:
        gate, bandpass = decode_dsp(payload)
        return replace(cfg, silence_gate=gate, bandpass=bandpass)
    if pid == PacketId.SET_RTC_TIME:
        return replace(cfg, rtc_time=decode_rtc_time(payload))
    if pid == PacketId.SET_FULL_PROFILE:
        return profile_import(payload.decode())
    raise ValueError(f"no config update for {pid.name}")

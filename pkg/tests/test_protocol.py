"""Framing, resynchronization, persistence, profiles, packet application."""

import copy
import json
import struct
from dataclasses import dataclass, field, replace
from datetime import datetime, time

import pytest
from hypothesis import given, settings, strategies as st

from arusim.hw import VirtualEeprom
from arusim.model import (
    AudioFormat,
    DeviceConfig,
    DeviceState,
    GainSettings,
    HourlySchedule,
    factory_defaults,
)
from arusim.protocol import (
    PacketId,
    ProfileParseError,
    ProfileValidationError,
    ProfileVersionError,
    apply_packet,
    crc16_ccitt_false,
    decode_packet,
    encode_audio_format,
    encode_packet,
    encode_rtc_time,
    decode_rtc_time,
    iter_packets,
    load_config,
    persist_config,
    profile_export,
    profile_import,
)


def crc_oracle(data: bytes) -> int:
    """Independent bitwise CRC-16/CCITT-FALSE."""
    crc = 0xFFFF
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) & 0xFFFF if crc & 0x8000 else (crc << 1) & 0xFFFF
    return crc


class TestCrc:
    def test_published_check_value(self):
        assert crc_oracle(b"123456789") == 0x29B1
        assert crc16_ccitt_false(b"123456789") == 0x29B1

    @given(st.binary(max_size=64))
    def test_table_matches_bitwise_oracle(self, data):
        assert crc16_ccitt_false(data) == crc_oracle(data)


class TestFraming:
    def test_factory_reset_frame_layout(self):
        frame = encode_packet(PacketId.FACTORY_RESET)
        crc = crc_oracle(bytes([0x06, 0x00, 0x00]))
        assert frame == bytes([0xAA, 0x06, 0x00, 0x00]) + struct.pack("<H", crc)

    def test_round_trip_empty(self):
        res = decode_packet(encode_packet(PacketId.QUERY_STATUS))
        assert res.packet.packet_id == 0x08
        assert res.packet.payload == b""

    def test_oversize_payload_rejected(self):
        with pytest.raises(ValueError):
            encode_packet(PacketId.SET_FULL_PROFILE, b"x" * 1025)

    @given(pid=st.integers(1, 9), payload=st.binary(max_size=1024))
    @settings(max_examples=200)
    def test_round_trip_any_payload(self, pid, payload):
        res = decode_packet(encode_packet(pid, payload))
        assert res.packet.packet_id == pid
        assert res.packet.payload == payload
        assert res.consumed == len(payload) + 6
        assert res.junk_skipped == 0


class TestDecodeResync:
    def test_junk_before_frame_counted(self):
        stream = b"\x01\x02\x03" + encode_packet(PacketId.QUERY_STATUS, b"hi")
        res = decode_packet(stream)
        assert res.packet.payload == b"hi"
        assert res.junk_skipped == 3

    def test_flipped_bit_reports_error_and_recovers_next_frame(self):
        # oracle: hand-built stream
        good = encode_packet(PacketId.SET_GAINS, b"\x01\x02\x03\x04")
        bad = bytearray(good)
        bad[5] ^= 0x10  # flip a payload bit
        stream = bytes(bad) + good
        res = decode_packet(stream)
        assert res.packet is not None
        assert res.packet.payload == b"\x01\x02\x03\x04"
        assert res.crc_errors and res.crc_errors[0].offset == 0

    def test_truncated_frame_needs_more(self):
        frame = encode_packet(PacketId.SET_GAINS, b"\x01\x02\x03\x04")
        res = decode_packet(frame[:-3])
        assert res.need_more and res.packet is None
        assert res.consumed == 0  # nothing beyond sync scan

    def test_truncated_frame_at_eof_releases_trailing_frame(self):
        lying = bytearray(encode_packet(PacketId.SET_FULL_PROFILE, b"x" * 4))
        lying[2:4] = struct.pack("<H", 900)  # length field inflated by corruption
        stream = bytes(lying) + encode_packet(PacketId.QUERY_STATUS)
        packets = [r.packet for r in iter_packets(stream, eof=True)]
        assert [p.packet_id for p in packets] == [PacketId.QUERY_STATUS]

    def test_never_raises_on_arbitrary_bytes(self):
        import random
        rng = random.Random(5)
        blob = bytes(rng.randrange(256) for _ in range(10_000))
        list(iter_packets(blob, eof=True))  # must not raise

    @given(st.binary(max_size=300), st.binary(max_size=300))
    @settings(max_examples=100)
    def test_frame_recovered_after_arbitrary_garbage(self, junk, payload):
        payload = payload[:1024]
        frame = encode_packet(PacketId.SET_FULL_PROFILE, payload)
        packets = [r.packet for r in iter_packets(junk + frame, eof=True)]
        assert any(p.payload == payload and p.packet_id == PacketId.SET_FULL_PROFILE
                   for p in packets)


class TestRtcTimeCodec:
    def test_round_trip(self):
        at = datetime(2026, 6, 1, 12, 30, 15)
        assert decode_rtc_time(encode_rtc_time(at)) == at


@dataclass
class StubDevice:
    state: DeviceState = DeviceState.CONFIG_MODE
    config: DeviceConfig = field(default_factory=factory_defaults)
    eeprom: VirtualEeprom = field(default_factory=VirtualEeprom)
    rtc_sets: list = field(default_factory=list)
    forced_sleeps: int = 0
    factory_resets: int = 0

    def set_rtc(self, at):
        self.rtc_sets.append(at)

    def request_forced_sleep(self):
        self.forced_sleeps += 1

    def factory_reset(self):
        self.factory_resets += 1
        self.config = factory_defaults()

    def status_snapshot(self):
        return {"state": self.state.value}


class TestApplyPacket:
    def test_set_audio_format_happy_path(self):
        dev = StubDevice()
        pkt = decode_packet(encode_packet(
            PacketId.SET_AUDIO_FORMAT, encode_audio_format(AudioFormat(96000, 24, 2)),
        )).packet
        ack = apply_packet(dev, pkt)
        assert ack.ok
        assert dev.config.format.sample_rate_hz == 96000
        assert load_config(dev.eeprom).format.sample_rate_hz == 96000

    def test_wrong_mode_rejected_during_recording(self):
        dev = StubDevice(state=DeviceState.RECORDING)
        pkt = decode_packet(encode_packet(
            PacketId.SET_AUDIO_FORMAT, encode_audio_format(AudioFormat()))).packet
        ack = apply_packet(dev, pkt)
        assert not ack.ok
        assert "wrong mode" in ack.errors[0]
        assert load_config(dev.eeprom) is None  # nothing persisted

    def test_query_status_and_forced_sleep_allowed_anytime(self):
        dev = StubDevice(state=DeviceState.RECORDING)
        ack = apply_packet(dev, decode_packet(encode_packet(PacketId.QUERY_STATUS)).packet)
        assert ack.ok and ack.status == {"state": "Recording"}
        ack = apply_packet(dev, decode_packet(encode_packet(PacketId.FORCED_SLEEP)).packet)
        assert ack.ok and dev.forced_sleeps == 1

    def test_invalid_value_nacked_with_violations(self):
        dev = StubDevice()
        before = dev.config
        pkt = decode_packet(encode_packet(
            PacketId.SET_AUDIO_FORMAT, encode_audio_format(AudioFormat(4000, 16, 2)),
        )).packet
        ack = apply_packet(dev, pkt)
        assert not ack.ok
        assert any("sample_rate_hz" in str(e) for e in ack.errors)
        assert dev.config == before

    def test_factory_reset(self):
        dev = StubDevice(config=replace(factory_defaults(),
                                        gains=GainSettings(45.0, 10.0)))
        ack = apply_packet(dev, decode_packet(encode_packet(PacketId.FACTORY_RESET)).packet)
        assert ack.ok
        assert dev.factory_resets == 1
        assert dev.config == factory_defaults()

    def test_unknown_id_rejected(self):
        dev = StubDevice()
        from arusim.protocol import ConfigPacket
        ack = apply_packet(dev, ConfigPacket(0x7F, b""))
        assert not ack.ok and "unknown packet id" in ack.errors[0]

    def test_ack_frames_decode(self):
        dev = StubDevice()
        ack = apply_packet(dev, decode_packet(encode_packet(PacketId.QUERY_STATUS)).packet)
        frame = ack.to_frame()
        res = decode_packet(frame)
        assert res.packet.packet_id == PacketId.ACK
        assert res.packet.payload[0] == PacketId.QUERY_STATUS
        doc = json.loads(res.packet.payload[1:])
        assert doc["status"]["state"] == "ConfigMode"


class TestPersistence:
    def test_round_trip(self):
        e = VirtualEeprom()
        cfg = replace(factory_defaults(), gains=GainSettings(15.0, 5.0))
        persist_config(e, cfg)
        assert load_config(e) == cfg

    def test_blank_eeprom_gives_none(self):
        assert load_config(VirtualEeprom()) is None

    def test_single_corrupted_byte_falls_back(self):
        e = VirtualEeprom()
        old = factory_defaults()
        persist_config(e, old)
        new = replace(old, gains=GainSettings(7.5, 1.0))
        persist_config(e, new)
        assert load_config(e) == new
        # corrupt each byte of the active (newer) slot in turn
        from arusim.protocol import SLOT_ADDRESSES, SLOT_SIZE
        for addr in range(SLOT_ADDRESSES[1], SLOT_ADDRESSES[1] + 64):
            damaged = copy.deepcopy(e)
            cell = damaged.read(addr, 1)[0]
            damaged.write(addr, bytes([cell ^ 0xFF]))
            assert load_config(damaged) in (old, None) or load_config(damaged) == old

    def test_alternating_slots_keep_previous_config(self):
        e = VirtualEeprom()
        c1 = factory_defaults()
        c2 = replace(c1, gains=GainSettings(9.0, 2.0))
        c3 = replace(c1, gains=GainSettings(12.0, 3.0))
        persist_config(e, c1)
        persist_config(e, c2)
        persist_config(e, c3)
        assert load_config(e) == c3

    def test_power_cut_between_every_write_step(self):
        class PowerCut(Exception):
            pass

        class CuttingEeprom:
            def __init__(self, inner, cut_after):
                self.inner, self.cut_after, self.writes = inner, cut_after, 0

            def read(self, addr, length):
                return self.inner.read(addr, length)

            def write(self, addr, data):
                if self.writes >= self.cut_after:
                    raise PowerCut()
                self.writes += 1
                self.inner.write(addr, data)

        old = factory_defaults()
        new = replace(old, gains=GainSettings(22.5, 11.0))

        pristine = VirtualEeprom()
        persist_config(pristine, old)
        # count the write steps of a full persist
        probe = CuttingEeprom(copy.deepcopy(pristine), cut_after=10_000)
        persist_config(probe, new)
        total_writes = probe.writes
        assert total_writes >= 2

        for cut in range(total_writes):
            e = copy.deepcopy(pristine)
            try:
                persist_config(CuttingEeprom(e, cut), new)
            except PowerCut:
                pass
            loaded = load_config(e)
            assert loaded in (old, new), f"blend after cut at write {cut}"
        # the complete write lands the new config
        done = copy.deepcopy(pristine)
        persist_config(done, new)
        assert load_config(done) == new


class TestProfiles:
    def test_export_import_identity(self):
        cfg = factory_defaults()
        assert profile_import(profile_export(cfg)) == cfg

    def test_named_profile_keeps_name(self):
        text = profile_export(factory_defaults(), profile_name="site-7")
        cfg = profile_import(text)
        assert cfg.extras["profile_name"] == "site-7"
        assert json.loads(profile_export(cfg))["profile_name"] == "site-7"

    def test_hourly_schedule_round_trip(self):
        cfg = replace(factory_defaults(),
                      schedule=HourlySchedule((time(5, 30), time(19, 45)), 15))
        assert profile_import(profile_export(cfg)) == cfg

    def test_out_of_range_rate_rejected_with_violation(self):
        doc = json.loads(profile_export(factory_defaults()))
        doc["format"]["sample_rate_hz"] = 4000
        with pytest.raises(ProfileValidationError) as err:
            profile_import(json.dumps(doc))
        assert any(v.field == "format.sample_rate_hz" for v in err.value.violations)

    def test_unknown_keys_preserved_on_reexport(self):
        doc = json.loads(profile_export(factory_defaults()))
        doc["deployment_site"] = {"lat": 12.97, "lon": 77.59}
        cfg = profile_import(json.dumps(doc))
        out = json.loads(profile_export(cfg))
        assert out["deployment_site"] == {"lat": 12.97, "lon": 77.59}

    def test_malformed_text_distinct_error(self):
        with pytest.raises(ProfileParseError):
            profile_import("{not json")

    def test_unsupported_version_distinct_error(self):
        doc = json.loads(profile_export(factory_defaults()))
        doc["schema_version"] = 99
        with pytest.raises(ProfileVersionError):
            profile_import(json.dumps(doc))

    def test_missing_field_is_parse_error(self):
        doc = json.loads(profile_export(factory_defaults()))
        del doc["gains"]
        with pytest.raises(ProfileParseError):
            profile_import(json.dumps(doc))

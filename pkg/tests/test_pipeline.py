"""Double-buffered capture, session files, storage placement."""

import io
import wave
from dataclasses import replace
from datetime import datetime

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arusim.hw import SdCard, SdCardArray, SilenceSource, ToneSource, quantize
from arusim.hw.audio import AudioSource, N_CHANNELS
from arusim.model import AudioFormat, DeviceConfig, GateConfig, factory_defaults
from arusim.pipeline import (
    HALF_BYTES,
    DoubleBuffer,
    WriterLatencyModel,
    finalize_session,
    half_fill_time_s,
    run_session,
    session_file_name,
    simulate_half_timing,
)
from arusim.wav import bytes_to_samples, parse_wav_header, samples_to_bytes

FMT48 = AudioFormat(48000, 16, 2)
T0 = datetime(2026, 6, 1, 6, 0, 0)


class ConstantPerChannelSource(AudioSource):
    """Distinct constant per channel, for routing checks."""

    def __init__(self, values=(0.1, 0.2, 0.3, 0.4)):
        super().__init__()
        self.values = values

    def _render(self, start, n, rate):
        return np.tile(np.asarray(self.values), (n, 1))


def capture_oracle(source_factory, fmt, duration_s):
    """Direct capture of the source with no buffering: per-interface bytes."""
    src = source_factory()
    frames = round(duration_s * fmt.sample_rate_hz)
    block = quantize(src.read(frames, fmt.sample_rate_hz), fmt.bit_depth)
    return [samples_to_bytes(block[:, 0:2], fmt.bit_depth),
            samples_to_bytes(block[:, 2:4], fmt.bit_depth)]


class TestDoubleBuffer:
    def test_interrupts_at_half_and_full(self):
        buf = DoubleBuffer()
        assert buf.feed(b"\x00" * 2047) == []
        events = buf.feed(b"\x00" * 1)
        assert [(g, h) for g, h, _ in events] == [(0, 0)]
        events = buf.feed(b"\x01" * 2048)
        assert [(g, h) for g, h, _ in events] == [(0, 1)]
        assert events[0][2] == b"\x01" * 2048
        assert buf.generation == 1
        assert buf.fill_cursor == 0

    def test_large_feed_emits_all_halves_in_order(self):
        buf = DoubleBuffer()
        data = bytes(range(256)) * 40  # 10240 bytes = 5 halves
        events = buf.feed(data)
        assert [(g, h) for g, h, _ in events] == \
            [(0, 0), (0, 1), (1, 0), (1, 1), (2, 0)]
        assert b"".join(e[2] for e in events) == data

    def test_partial_drain(self):
        buf = DoubleBuffer()
        buf.feed(b"\xab" * 100)
        assert buf.drain_partial() == b"\xab" * 100


class TestHalfTiming:
    def test_half_fill_time_48k(self):
        assert half_fill_time_s(FMT48) == pytest.approx(2048 / 192000)

    def test_zero_drops_when_writer_keeps_up(self):
        lat = WriterLatencyModel(0.005)
        kept, dropped = simulate_half_timing(1000, FMT48, lat.stream(1))
        assert dropped == 0 and all(kept)

    def test_drops_when_writer_is_slow(self):
        lat = WriterLatencyModel(0.015)
        kept, dropped = simulate_half_timing(1000, FMT48, lat.stream(1))
        assert dropped > 0
        assert sum(kept) + dropped == 1000

    @given(st.floats(0.0001, 0.0106))
    @settings(max_examples=30)
    def test_lossless_iff_latency_below_half_fill(self, latency_s):
        lat = WriterLatencyModel(latency_s)
        _, dropped = simulate_half_timing(400, FMT48, lat.stream(1))
        assert dropped == 0

    @given(st.floats(0.0112, 0.05))
    @settings(max_examples=30)
    def test_drops_iff_latency_above_half_fill(self, latency_s):
        lat = WriterLatencyModel(latency_s)
        _, dropped = simulate_half_timing(400, FMT48, lat.stream(1))
        assert dropped > 0

    def test_final_halves_have_no_overwrite_deadline(self):
        # a 2-half stream is never re-entered, so even a glacial writer keeps it
        lat = WriterLatencyModel(10.0)
        kept, dropped = simulate_half_timing(2, FMT48, lat.stream(1))
        assert dropped == 0 and kept == [True, True]


class TestRunSession:
    def test_zero_drop_output_is_bit_identical_to_source(self):
        make = lambda: ToneSource(1000.0, 0.5)
        session = run_session(make(), FMT48, 1.0, WriterLatencyModel(0.005), start=T0)
        assert session.dropped_halves == 0
        expected = capture_oracle(make, FMT48, 1.0)
        for f, exp in zip(session.files, expected):
            data = f.read_bytes()
            assert data[44:] == exp
            fmt, size = parse_wav_header(data[:44])
            assert fmt == FMT48 and size == len(exp)

    def test_slow_writer_drops_and_shortens_output(self):
        make = lambda: ToneSource(1000.0, 0.5)
        session = run_session(make(), FMT48, 1.0, WriterLatencyModel(0.015), start=T0)
        assert session.dropped_halves > 0
        expected = capture_oracle(make, FMT48, 1.0)
        for f, exp in zip(session.files, expected):
            assert f.data_bytes < len(exp)
            assert f.data_bytes == len(exp) - (session.dropped_halves // 2) * HALF_BYTES

    def test_ten_second_file_size(self):
        session = run_session(SilenceSource(), FMT48, 10.0,
                              WriterLatencyModel(0.005), start=T0)
        for f in session.files:
            assert f.total_bytes == 1_920_044

    def test_8k_sixty_seconds_file_size(self):
        fmt = AudioFormat(8000, 16, 2)
        session = run_session(SilenceSource(), fmt, 60.0,
                              WriterLatencyModel(0.005), start=T0)
        for f in session.files:
            assert f.total_bytes == 1_920_044

    def test_channel_routing_never_mixes_interfaces(self):
        session = run_session(ConstantPerChannelSource(), FMT48, 0.25,
                              WriterLatencyModel(0.001), start=T0)
        c = [round(v * 32767) for v in (0.1, 0.2, 0.3, 0.4)]
        a = bytes_to_samples(session.files[0].read_bytes()[44:], FMT48)
        b = bytes_to_samples(session.files[1].read_bytes()[44:], FMT48)
        assert set(np.unique(a[:, 0])) == {c[0]}
        assert set(np.unique(a[:, 1])) == {c[1]}
        assert set(np.unique(b[:, 0])) == {c[2]}
        assert set(np.unique(b[:, 1])) == {c[3]}

    def test_24_bit_zero_drop_round_trip(self):
        fmt = AudioFormat(48000, 24, 2)
        make = lambda: ToneSource(2500.0, 0.8)
        session = run_session(make(), fmt, 0.5, WriterLatencyModel(0.001), start=T0)
        assert session.dropped_halves == 0
        frames = round(0.5 * 48000)
        src_block = quantize(make().read(frames, 48000), 24)
        a = bytes_to_samples(session.files[0].read_bytes()[44:], fmt)
        assert np.array_equal(a, src_block[:, 0:2])

    def test_stdlib_wave_parses_emitted_file(self):
        session = run_session(SilenceSource(), FMT48, 0.5,
                              WriterLatencyModel(0.001), start=T0)
        reader = wave.open(io.BytesIO(session.files[0].read_bytes()))
        assert reader.getframerate() == 48000
        assert reader.getnchannels() == 2
        assert reader.getsampwidth() == 2
        assert reader.getnframes() == 24000

    def test_gate_shrinks_file_and_logs_regions(self):
        # 2 s alternating 0.5 s silence / 0.5 s tone
        class AlternatingSource(AudioSource):
            def _render(self, start, n, rate):
                k = np.arange(start, start + n)
                tone = 0.5 * np.sin(2 * np.pi * 1000.0 * k / rate)
                on = ((k // (rate // 2)) % 2) == 1
                return np.repeat((tone * on)[:, None], N_CHANNELS, axis=1)

        cfg = replace(factory_defaults(),
                      silence_gate=GateConfig(enabled=True, threshold=0.1))
        gated = run_session(AlternatingSource(), FMT48, 2.0,
                            WriterLatencyModel(0.001), config=cfg, start=T0)
        plain = run_session(AlternatingSource(), FMT48, 2.0,
                            WriterLatencyModel(0.001), start=T0)
        ratio = gated.files[0].data_bytes / plain.files[0].data_bytes
        assert 0.45 <= ratio <= 0.55
        regions = gated.files[0].kept_regions_s
        assert regions, "kept regions must be logged when gating"
        kept_time = sum(b - a for a, b in regions)
        assert kept_time == pytest.approx(1.0, abs=0.06)

    def test_disabled_dsp_passes_bytes_untouched(self):
        cfg = factory_defaults()  # gate and bandpass disabled by default
        make = lambda: ToneSource(4000.0, 0.5)
        session = run_session(make(), FMT48, 0.5, WriterLatencyModel(0.001),
                              config=cfg, start=T0)
        expected = capture_oracle(make, FMT48, 0.5)
        assert session.files[0].read_bytes()[44:] == expected[0]

    def test_zero_duration_rejected(self):
        with pytest.raises(ValueError):
            run_session(SilenceSource(), FMT48, 0.0, WriterLatencyModel(0.001))


class TestFinalizeSession:
    def test_names_and_placement(self):
        session = run_session(SilenceSource(), FMT48, 0.5,
                              WriterLatencyModel(0.001), start=T0)
        sd = SdCardArray()
        results = finalize_session(session, sd)
        assert [r.accepted for r in results] == [True, True]
        assert session.files[0].name == "REC_20260601_060000_I2S1.wav"
        assert session.files[1].name == "REC_20260601_060000_I2S2.wav"
        assert sd.cards[0].used_bytes == session.total_bytes

    def test_names_differ_only_in_interface_suffix(self):
        a = session_file_name(T0, 1)
        b = session_file_name(T0, 2)
        assert a.replace("I2S1", "I2S2") == b

    def test_room_for_one_file_switches_or_fills(self):
        session = run_session(SilenceSource(), FMT48, 0.5,
                              WriterLatencyModel(0.001), start=T0)
        size = session.files[0].total_bytes
        sd = SdCardArray([SdCard(capacity_bytes=size + 10),
                          SdCard(capacity_bytes=size * 4),
                          SdCard(capacity_bytes=0), SdCard(capacity_bytes=0)])
        results = finalize_session(session, sd)
        assert results[0].card_index == 0
        assert results[1].card_index == 1 and results[1].switched

    def test_storage_full_stops_placement(self):
        session = run_session(SilenceSource(), FMT48, 0.5,
                              WriterLatencyModel(0.001), start=T0)
        sd = SdCardArray([SdCard(capacity_bytes=10) for _ in range(4)])
        results = finalize_session(session, sd)
        assert len(results) == 1 and results[0].storage_full
        assert sd.total_used_bytes == 0

"""Config validation and storage arithmetic."""

import io
import math
from datetime import time

import pytest
from hypothesis import given, strategies as st

from arusim.model import (
    AudioFormat,
    ConfigValidationError,
    DailySchedule,
    DeviceConfig,
    GainSettings,
    HourlySchedule,
    bytes_per_second,
    capacity_files,
    config_violations,
    factory_defaults,
    parse_time_of_day,
    session_file_bytes,
    validate_config,
)


def cfg_with(**kwargs) -> DeviceConfig:
    from dataclasses import replace
    return replace(factory_defaults(), **kwargs)


class TestValidateConfig:
    def test_midrange_config_is_valid(self):
        cfg = cfg_with(format=AudioFormat(48000, 16, 2),
                       gains=GainSettings(pga_gain_db=30.0))
        assert validate_config(cfg) == cfg

    def test_sample_rate_below_minimum(self):
        cfg = cfg_with(format=AudioFormat(sample_rate_hz=4000))
        violations = config_violations(cfg)
        assert len(violations) == 1
        v = violations[0]
        assert v.field == "format.sample_rate_hz"
        assert v.value == 4000
        assert "8000" in v.requirement

    def test_pga_gain_off_step(self):
        cfg = cfg_with(gains=GainSettings(pga_gain_db=30.1))
        (v,) = config_violations(cfg)
        assert v.field == "gains.pga_gain_db"
        assert "0.375" in v.requirement
        assert v.value == 30.1

    def test_every_violation_reported_not_just_first(self):
        cfg = cfg_with(format=AudioFormat(sample_rate_hz=4000, bit_depth=12),
                       gains=GainSettings(pga_gain_db=-1.0, preamp_gain_db=99.0),
                       battery_floor_percent=150.0)
        fields = {v.field for v in config_violations(cfg)}
        assert fields == {"format.sample_rate_hz", "format.bit_depth",
                          "gains.pga_gain_db", "gains.preamp_gain_db",
                          "battery_floor_percent"}

    def test_validation_error_carries_all_violations(self):
        cfg = cfg_with(format=AudioFormat(sample_rate_hz=4000, bit_depth=12))
        with pytest.raises(ConfigValidationError) as err:
            validate_config(cfg)
        assert len(err.value.violations) == 2

    def test_bandpass_band_checked_only_when_enabled(self):
        from arusim.model import BandpassConfig
        bad_band = BandpassConfig(enabled=False, low_hz=5000.0, high_hz=2000.0)
        assert config_violations(cfg_with(bandpass=bad_band)) == []
        enabled = BandpassConfig(enabled=True, low_hz=5000.0, high_hz=2000.0)
        (v,) = config_violations(cfg_with(bandpass=enabled))
        assert v.field == "bandpass"

    def test_hourly_schedule_rules(self):
        ok = HourlySchedule((time(5, 30), time(12, 0), time(19, 45)), 15)
        assert config_violations(cfg_with(schedule=ok)) == []
        overlap = HourlySchedule((time(5, 0), time(5, 10)), 15)
        (v,) = config_violations(cfg_with(schedule=overlap))
        assert v.field == "schedule.wake_times"
        empty = HourlySchedule((), 15)
        (v,) = config_violations(cfg_with(schedule=empty))
        assert v.field == "schedule.wake_times"

    def test_daily_schedule_requires_sunrise_before_sunset(self):
        bad = DailySchedule(time(6, 0), time(6, 0))
        (v,) = config_violations(cfg_with(schedule=bad))
        assert v.field == "schedule.sunrise"

    def test_validate_is_idempotent(self):
        cfg = factory_defaults()
        assert validate_config(validate_config(cfg)) == cfg

    @given(st.integers(min_value=0, max_value=160))
    def test_pga_steps_on_grid_accepted(self, steps):
        cfg = cfg_with(gains=GainSettings(pga_gain_db=steps * 0.375))
        assert config_violations(cfg) == []


class TestSizeArithmetic:
    # oracle: count the samples in one emitted second and sum their bytes
    def _brute_bytes_per_second(self, fmt: AudioFormat) -> int:
        per_frame = fmt.channels_per_file * (fmt.bit_depth // 8)
        return sum(per_frame for _ in range(fmt.sample_rate_hz))

    @pytest.mark.parametrize("fmt,expected", [
        (AudioFormat(48000, 16, 2), 192_000),
        (AudioFormat(8000, 16, 2), 32_000),
        (AudioFormat(48000, 24, 2), 288_000),
    ])
    def test_bytes_per_second(self, fmt, expected):
        assert bytes_per_second(fmt) == expected
        assert bytes_per_second(fmt) == self._brute_bytes_per_second(fmt)

    def test_session_file_bytes_600s(self):
        assert session_file_bytes(AudioFormat(48000, 16, 2), 600) == 115_200_044

    def test_session_file_bytes_60s_8k(self):
        assert session_file_bytes(AudioFormat(8000, 16, 2), 60) == 1_920_044

    def test_session_file_bytes_matches_emitted_wav(self):
        # oracle: the byte length of an actually encoded file
        import numpy as np
        from arusim.wav import WavStreamWriter, samples_to_bytes
        fmt = AudioFormat(8000, 16, 2)
        duration = 3
        sink = io.BytesIO()
        w = WavStreamWriter(sink, fmt)
        frames = np.zeros((fmt.sample_rate_hz * duration, 2), dtype=np.int32)
        w.write(samples_to_bytes(frames, fmt.bit_depth))
        assert w.finalize() == session_file_bytes(fmt, duration)
        assert len(sink.getvalue()) == session_file_bytes(fmt, duration)

    def test_zero_duration_rejected(self):
        with pytest.raises(ValueError):
            session_file_bytes(AudioFormat(), 0)

    def test_capacity_no_overhead(self):
        # oracle: floor(128e9 / 115,200,044)
        assert capacity_files(128 * 10**9, AudioFormat(48000, 16, 2), 600, 0.0) == 1111

    def test_capacity_with_default_overhead(self):
        assert capacity_files(128 * 10**9, AudioFormat(48000, 16, 2), 600, 0.017) == 1092

    def test_capacity_zero_storage(self):
        assert capacity_files(0, AudioFormat(), 600, 0.0) == 0

    def test_capacity_overhead_bounds(self):
        with pytest.raises(ValueError):
            capacity_files(1, AudioFormat(), 600, 1.0)
        with pytest.raises(ValueError):
            capacity_files(1, AudioFormat(), 600, -0.1)

    @given(rate=st.integers(8000, 192000), depth=st.sampled_from([16, 24]),
           duration=st.integers(1, 3600))
    def test_file_size_monotone(self, rate, depth, duration):
        fmt = AudioFormat(rate, depth, 2)
        base = session_file_bytes(fmt, duration)
        assert session_file_bytes(AudioFormat(rate + 1, depth, 2), duration) > base
        assert session_file_bytes(fmt, duration + 1) > base
        if depth == 16:
            assert session_file_bytes(AudioFormat(rate, 24, 2), duration) > base

    @given(total=st.integers(0, 10**12), overhead=st.floats(0.0, 0.5),
           duration=st.integers(1, 1200))
    def test_capacity_floor_bracket(self, total, overhead, duration):
        fmt = AudioFormat(48000, 16, 2)
        n = capacity_files(total, fmt, duration, overhead)
        sfb = session_file_bytes(fmt, duration)
        usable = total * (1.0 - overhead)
        assert n * sfb <= usable < (n + 1) * sfb


def test_parse_time_of_day():
    assert parse_time_of_day("06:00") == time(6, 0)
    assert parse_time_of_day("19:45:30") == time(19, 45, 30)
    with pytest.raises(ValueError):
        parse_time_of_day("6")

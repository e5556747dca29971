"""WAV header layout, stream writer, and sample packing."""

import io
import struct
import wave

import numpy as np
import pytest
from hypothesis import given, strategies as st

from arusim.model import AudioFormat
from arusim.wav import (
    WavStreamWriter,
    bytes_to_samples,
    encode_wav_header,
    parse_wav_header,
    read_wav,
    samples_to_bytes,
)


class TestHeader:
    def test_field_layout_48k(self):
        h = encode_wav_header(AudioFormat(48000, 16, 2), 0)
        assert len(h) == 44
        assert h[0:4] == b"RIFF"
        assert struct.unpack_from("<I", h, 4)[0] == 36  # riff size with no data
        assert h[8:12] == b"WAVE"
        assert h[12:16] == b"fmt "
        assert struct.unpack_from("<I", h, 16)[0] == 16
        assert struct.unpack_from("<H", h, 20)[0] == 1
        assert struct.unpack_from("<H", h, 22)[0] == 2
        assert struct.unpack_from("<I", h, 24)[0] == 48000
        assert struct.unpack_from("<I", h, 28)[0] == 192000  # byte rate
        assert struct.unpack_from("<H", h, 32)[0] == 4       # block align
        assert struct.unpack_from("<H", h, 34)[0] == 16
        assert h[36:40] == b"data"
        assert struct.unpack_from("<I", h, 40)[0] == 0

    def test_byte_rate_8k(self):
        h = encode_wav_header(AudioFormat(8000, 16, 2), 0)
        assert struct.unpack_from("<I", h, 28)[0] == 32000

    def test_large_data_chunk_sizes(self):
        h = encode_wav_header(AudioFormat(48000, 16, 2), 115_200_000)
        assert struct.unpack_from("<I", h, 40)[0] == 115_200_000
        assert struct.unpack_from("<I", h, 4)[0] == 115_200_036

    def test_stdlib_wave_reads_our_output(self):
        # oracle: an independent standards-conformant reader
        fmt = AudioFormat(48000, 16, 2)
        sink = io.BytesIO()
        w = WavStreamWriter(sink, fmt)
        frames = np.arange(96, dtype=np.int32).reshape(-1, 2) - 48
        w.write(samples_to_bytes(frames, 16))
        w.finalize()
        sink.seek(0)
        with wave.open(sink) as reader:
            assert reader.getframerate() == 48000
            assert reader.getnchannels() == 2
            assert reader.getsampwidth() == 2
            assert reader.getnframes() == 48

    @given(rate=st.integers(8000, 192000), depth=st.sampled_from([16, 24]),
           data=st.integers(0, 2**31 - 45))
    def test_header_round_trip(self, rate, depth, data):
        fmt = AudioFormat(rate, depth, 2)
        parsed_fmt, parsed_len = parse_wav_header(encode_wav_header(fmt, data))
        assert parsed_fmt == fmt
        assert parsed_len == data

    def test_negative_data_bytes_rejected(self):
        with pytest.raises(ValueError):
            encode_wav_header(AudioFormat(), -1)

    def test_parse_rejects_non_wav(self):
        with pytest.raises(ValueError):
            parse_wav_header(b"\x00" * 44)


class TestSamplePacking:
    def test_16_bit_little_endian(self):
        frames = np.array([[1, -2], [32767, -32768]], dtype=np.int32)
        assert samples_to_bytes(frames, 16) == \
            b"\x01\x00\xfe\xff\xff\x7f\x00\x80"

    def test_24_bit_packed_3_bytes(self):
        frames = np.array([[1, -1], [8388607, -8388608]], dtype=np.int32)
        raw = samples_to_bytes(frames, 24)
        assert raw == b"\x01\x00\x00\xff\xff\xff\xff\xff\x7f\x00\x00\x80"

    @given(st.lists(st.integers(-(2**23), 2**23 - 1), min_size=2, max_size=64)
           .filter(lambda v: len(v) % 2 == 0))
    def test_24_bit_round_trip(self, values):
        frames = np.array(values, dtype=np.int32).reshape(-1, 2)
        fmt = AudioFormat(48000, 24, 2)
        back = bytes_to_samples(samples_to_bytes(frames, 24), fmt)
        assert np.array_equal(back, frames)

    def test_read_wav_file(self, tmp_path):
        fmt = AudioFormat(8000, 16, 2)
        frames = (np.arange(32, dtype=np.int32).reshape(-1, 2) * 100) - 800
        p = tmp_path / "t.wav"
        with open(p, "wb") as fh:
            w = WavStreamWriter(fh, fmt)
            w.write(samples_to_bytes(frames, 16))
            w.finalize()
        got_fmt, got = read_wav(p)
        assert got_fmt == fmt
        assert np.array_equal(got, frames)


def test_stream_writer_patches_sizes_on_finalize():
    fmt = AudioFormat(8000, 16, 2)
    sink = io.BytesIO()
    w = WavStreamWriter(sink, fmt)
    w.write(b"\x00" * 400)
    w.write(b"\x00" * 44)
    assert w.finalize() == 44 + 444
    parsed_fmt, data_len = parse_wav_header(sink.getvalue()[:44])
    assert data_len == 444
    assert parsed_fmt == fmt
    with pytest.raises(RuntimeError):
        w.write(b"x")

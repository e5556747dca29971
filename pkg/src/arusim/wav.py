"""Canonical 44-byte PCM WAV encoding and decoding.

The header layout is fixed little-endian:
"RIFF", riff_size, "WAVE", "fmt ", 16, audio_format=1, channels, sample_rate,
byte_rate, block_align, bits_per_sample, "data", data_size.

16-bit samples are int16 LE; 24-bit samples are packed 3-byte LE PCM.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from .model import WAV_HEADER_BYTES, AudioFormat

_HEADER_STRUCT = struct.Struct("<4sI4s4sIHHIIHH4sI")
assert _HEADER_STRUCT.size == WAV_HEADER_BYTES


def encode_wav_header(fmt: AudioFormat, data_bytes: int) -> bytes:
    """Bit-exact canonical PCM header for ``data_bytes`` of sample data."""
    if data_bytes < 0:
        raise ValueError(f"data_bytes must be >= 0, got {data_bytes}")
    byte_rate = fmt.sample_rate_hz * fmt.block_align
    return _HEADER_STRUCT.pack(
        b"RIFF",
        36 + data_bytes,
        b"WAVE",
        b"fmt ",
        16,
        1,  # PCM
        fmt.channels_per_file,
        fmt.sample_rate_hz,
        byte_rate,
        fmt.block_align,
        fmt.bit_depth,
        b"data",
        data_bytes,
    )


def parse_wav_header(header: bytes) -> tuple[AudioFormat, int]:
    """Recover (format, data_size) from a canonical header; strict on layout."""
    if len(header) < WAV_HEADER_BYTES:
        raise ValueError(f"header must be {WAV_HEADER_BYTES} bytes, got {len(header)}")
    (riff, riff_size, wave, fmt_tag, fmt_size, audio_format, channels,
     sample_rate, byte_rate, block_align, bits, data_tag, data_size) = \
        _HEADER_STRUCT.unpack(header[:WAV_HEADER_BYTES])
    if riff != b"RIFF" or wave != b"WAVE" or fmt_tag != b"fmt " or data_tag != b"data":
        raise ValueError("not a canonical PCM WAV header")
    if fmt_size != 16 or audio_format != 1:
        raise ValueError(f"unsupported fmt chunk (size={fmt_size}, format={audio_format})")
    fmt = AudioFormat(sample_rate_hz=sample_rate, bit_depth=bits, channels_per_file=channels)
    if byte_rate != sample_rate * fmt.block_align or block_align != fmt.block_align:
        raise ValueError("header rate fields inconsistent")
    if riff_size != 36 + data_size:
        raise ValueError(f"riff_size {riff_size} inconsistent with data_size {data_size}")
    return fmt, data_size


class WavStreamWriter:
    """Incremental WAV writer over any seekable binary file object.

    Writes a placeholder header up front, streams data, and patches the two
    size fields on finalize so partial sessions still end up with accurate
    chunk sizes.
    """

    def __init__(self, sink: BinaryIO, fmt: AudioFormat):
        self._sink = sink
        self._fmt = fmt
        self._data_bytes = 0
        self._finalized = False
        sink.write(encode_wav_header(fmt, 0))

    @property
    def data_bytes(self) -> int:
        return self._data_bytes

    @property
    def total_bytes(self) -> int:
        return WAV_HEADER_BYTES + self._data_bytes

    def write(self, data: bytes) -> None:
        if self._finalized:
            raise RuntimeError("writer already finalized")
        self._sink.write(data)
        self._data_bytes += len(data)

    def finalize(self) -> int:
        """Patch header sizes; returns the final file size in bytes."""
        if not self._finalized:
            self._sink.seek(0)
            self._sink.write(encode_wav_header(self._fmt, self._data_bytes))
            self._sink.seek(0, io.SEEK_END)
            self._finalized = True
        return self.total_bytes


def samples_to_bytes(samples: np.ndarray, bit_depth: int) -> bytes:
    """Interleave integer samples (frames x channels) into PCM bytes."""
    flat = np.ascontiguousarray(samples).reshape(-1)
    if bit_depth == 16:
        return flat.astype("<i2").tobytes()
    if bit_depth == 24:
        as32 = flat.astype("<i4")
        raw = as32.view(np.uint8).reshape(-1, 4)
        return np.ascontiguousarray(raw[:, :3]).tobytes()
    raise ValueError(f"unsupported bit depth {bit_depth}")


def bytes_to_samples(data: bytes, fmt: AudioFormat) -> np.ndarray:
    """Inverse of samples_to_bytes; returns int32 array (frames x channels)."""
    if fmt.bit_depth == 16:
        flat = np.frombuffer(data, dtype="<i2").astype(np.int32)
    elif fmt.bit_depth == 24:
        raw = np.frombuffer(data, dtype=np.uint8)
        raw = raw[: len(raw) - len(raw) % 3].reshape(-1, 3)
        padded = np.zeros((raw.shape[0], 4), dtype=np.uint8)
        padded[:, :3] = raw
        flat = padded.view("<i4").reshape(-1)
        flat = (flat << 8) >> 8  # sign-extend 24 -> 32
    else:
        raise ValueError(f"unsupported bit depth {fmt.bit_depth}")
    frames = len(flat) // fmt.channels_per_file
    return flat[: frames * fmt.channels_per_file].reshape(frames, fmt.channels_per_file)


def read_wav(path: Union[str, Path]) -> tuple[AudioFormat, np.ndarray]:
    """Read a canonical PCM WAV file into (format, int32 frames x channels)."""
    raw = Path(path).read_bytes()
    fmt, data_size = parse_wav_header(raw[:WAV_HEADER_BYTES])
    data = raw[WAV_HEADER_BYTES:WAV_HEADER_BYTES + data_size]
    return fmt, bytes_to_samples(data, fmt)

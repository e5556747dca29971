"""Deterministic four-channel audio sources standing in for the microphones.

Every source renders normalized float samples in [-1, 1] as a pure function
of absolute frame index, so reads are phase-continuous, seekable and
reproducible.  Quantization to the configured bit depth happens at the
capture boundary (``audio_read``) exactly as the ADC would.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..model import AudioFormat

N_CHANNELS = 4
_NOISE_BLOCK = 4096  # frames per independently seeded noise block


class AudioSource:
    """Base: tracks a frame cursor; subclasses render from absolute indices."""

    channels = N_CHANNELS

    def __init__(self):
        self._pos = 0
        self.exhausted = False

    @property
    def position(self) -> int:
        return self._pos

    def seek(self, frame: int) -> None:
        if frame < 0:
            raise ValueError("cannot seek before the start")
        self._pos = frame

    def read(self, n_frames: int, sample_rate_hz: int) -> np.ndarray:
        """Next ``n_frames`` x 4 float block; advances the cursor."""
        if n_frames <= 0:
            raise ValueError(f"n_frames must be > 0, got {n_frames}")
        block = self._render(self._pos, n_frames, sample_rate_hz)
        self._pos += n_frames
        return block

    def _render(self, start: int, n: int, rate: int) -> np.ndarray:
        raise NotImplementedError


class SilenceSource(AudioSource):
    def _render(self, start, n, rate):
        return np.zeros((n, N_CHANNELS))


class ToneSource(AudioSource):
    """Pure sine on all four channels."""

    def __init__(self, freq_hz: float, amplitude: float):
        super().__init__()
        if not (0.0 <= amplitude <= 1.0):
            raise ValueError("amplitude must be in [0, 1]")
        self.freq_hz = freq_hz
        self.amplitude = amplitude

    def _render(self, start, n, rate):
        k = np.arange(start, start + n, dtype=np.float64)
        samples = self.amplitude * np.sin(2.0 * np.pi * self.freq_hz * k / rate)
        return np.repeat(samples[:, None], N_CHANNELS, axis=1)


class NoiseSource(AudioSource):
    """Uniform white noise; seeded per 4096-frame block so seeks stay cheap."""

    def __init__(self, amplitude: float, seed: int):
        super().__init__()
        if not (0.0 <= amplitude <= 1.0):
            raise ValueError("amplitude must be in [0, 1]")
        self.amplitude = amplitude
        self.seed = seed

    def _block(self, index: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, index]))
        return self.amplitude * rng.uniform(-1.0, 1.0, size=(_NOISE_BLOCK, N_CHANNELS))

    def _render(self, start, n, rate):
        out = np.empty((n, N_CHANNELS))
        filled = 0
        while filled < n:
            pos = start + filled
            block_idx, offset = divmod(pos, _NOISE_BLOCK)
            take = min(n - filled, _NOISE_BLOCK - offset)
            out[filled:filled + take] = self._block(block_idx)[offset:offset + take]
            filled += take
        return out


class FilePlaybackSource(AudioSource):
    """Replay a recorded WAV; channels tile up to 4; past EOF pads silence."""

    def __init__(self, path: Union[str, Path]):
        super().__init__()
        self.path = Path(path)
        self._data: Optional[np.ndarray] = None

    def _load(self) -> np.ndarray:
        if self._data is None:
            from ..wav import read_wav
            fmt, samples = read_wav(self.path)
            scale = float(2 ** (fmt.bit_depth - 1) - 1)
            floats = samples.astype(np.float64) / scale
            reps = int(np.ceil(N_CHANNELS / floats.shape[1]))
            self._data = np.tile(floats, (1, reps))[:, :N_CHANNELS]
        return self._data

    def _render(self, start, n, rate):
        data = self._load()
        out = np.zeros((n, N_CHANNELS))
        end = min(start + n, len(data))
        if start < len(data):
            out[: end - start] = data[start:end]
        if start + n > len(data):
            self.exhausted = True
        return np.clip(out, -1.0, 1.0)


@dataclass(frozen=True)
class Segment:
    """One timed entry of a source script: child playback begins at start_s."""

    start_s: float
    source: AudioSource


class MixtureSource(AudioSource):
    """Sum of timed segments; each child's own clock starts at its start_s."""

    def __init__(self, segments: list[Segment]):
        super().__init__()
        self.segments = list(segments)

    def _render(self, start, n, rate):
        out = np.zeros((n, N_CHANNELS))
        for seg in self.segments:
            seg_start = round(seg.start_s * rate)
            lo = max(start, seg_start)
            hi = start + n
            if lo >= hi:
                continue
            seg.source.seek(lo - seg_start)
            out[lo - start:] += seg.source.read(hi - lo, rate)
        return np.clip(out, -1.0, 1.0)


def quantize(block: np.ndarray, bit_depth: int) -> np.ndarray:
    """Symmetric scaling to signed integers, the way the converter would."""
    if bit_depth not in (16, 24):
        raise ValueError(f"unsupported bit depth {bit_depth}")
    scale = float(2 ** (bit_depth - 1) - 1)
    clipped = np.clip(block, -1.0, 1.0)
    return np.round(clipped * scale).astype(np.int32)


def audio_read(source: AudioSource, n_frames: int, fmt: AudioFormat) -> np.ndarray:
    """Capture n_frames x 4 quantized samples from a source."""
    return quantize(source.read(n_frames, fmt.sample_rate_hz), fmt.bit_depth)

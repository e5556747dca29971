"""Onboard audio processing: bandpass filtering, silence gating, spectrogram.

All processing runs on normalized float samples in [-1, 1]; quantization back
to integer PCM happens only when the recording pipeline encodes WAV data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import signal as _signal

# Default on-device band: covers typical bird-call energy, user-overridable.
# 8 poles (4 biquads) keeps stopband rejection at 100 Hz / 20 kHz beyond 40 dB.
DEFAULT_BAND_LOW_HZ = 1000.0
DEFAULT_BAND_HIGH_HZ = 8000.0
DEFAULT_BANDPASS_ORDER = 8


@dataclass
class BiquadCascade:
    """Second-order sections (b0, b1, b2, a0=1, a1, a2) with streaming state."""

    sos: np.ndarray
    state: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def sections(self) -> int:
        return len(self.sos)

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots([1.0, a1, a2]) for _, _, _, _, a1, a2 in self.sos])

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0))

    def reset(self) -> None:
        self.state = None


def design_bandpass(low_hz: float, high_hz: float, sample_rate_hz: int,
                    order: int = DEFAULT_BANDPASS_ORDER) -> BiquadCascade:
    """Butterworth bandpass with ``order`` poles as order/2 cascaded biquads.

    Edge frequencies sit at the -3 dB points.
    """
    nyquist = sample_rate_hz / 2.0
    if not (0.0 < low_hz < high_hz < nyquist):
        raise ValueError(
            f"need 0 < low_hz < high_hz < {nyquist} (sample_rate/2), "
            f"got ({low_hz}, {high_hz})")
    if order <= 0 or order % 2:
        raise ValueError(f"order must be a positive even number, got {order}")
    sos = _signal.butter(order // 2, [low_hz, high_hz], btype="bandpass",
                         fs=sample_rate_hz, output="sos")
    cascade = BiquadCascade(sos=sos)
    if not cascade.is_stable():
        raise ValueError("designed cascade is unstable; band too extreme "
                         f"({low_hz}, {high_hz}) at {sample_rate_hz} Hz")
    return cascade


def filter_apply(cascade: BiquadCascade, samples: np.ndarray) -> np.ndarray:
    """Run samples through the cascade; delay state carries across calls.

    Accepts mono (n,) or multichannel (n, ch) blocks; the channel count is
    fixed by the first call until reset().
    """
    x = np.asarray(samples, dtype=np.float64)
    mono = x.ndim == 1
    if mono:
        x = x[:, None]
    if cascade.state is None:
        cascade.state = np.zeros((cascade.sections, 2, x.shape[1]))
    elif cascade.state.shape[2] != x.shape[1]:
        raise ValueError(
            f"stream has {cascade.state.shape[2]} channels, block has {x.shape[1]}; "
            "reset() before switching")
    y, cascade.state = _signal.sosfilt(cascade.sos, x, axis=0, zi=cascade.state)
    return y[:, 0] if mono else y


@dataclass(frozen=True)
class FrameGate:
    """Amplitude threshold gate over fixed-length frames."""

    frame_len: int
    threshold: float
    metric: str = "peak"  # or "rms"

    def __post_init__(self):
        if self.frame_len <= 0:
            raise ValueError(f"frame_len must be > 0, got {self.frame_len}")
        if not (0.0 <= self.threshold <= 1.0):
            raise ValueError(f"threshold must be in [0, 1], got {self.threshold}")
        if self.metric not in ("peak", "rms"):
            raise ValueError(f"metric must be 'peak' or 'rms', got {self.metric!r}")

    def measure(self, frame: np.ndarray) -> float:
        if frame.size == 0:
            return 0.0
        if self.metric == "peak":
            return float(np.max(np.abs(frame)))
        return float(np.sqrt(np.mean(np.square(frame))))


def gate_frames(gate: FrameGate, samples: np.ndarray) -> tuple[np.ndarray, list[bool]]:
    """Split into consecutive frames, keep those at or above the threshold.

    The trailing partial frame (if any) is always kept.  Returns the
    concatenated kept samples and the per-frame decision mask (partial frame
    included as its final entry).
    """
    x = np.asarray(samples)
    n = len(x)
    full = n // gate.frame_len
    kept_parts = []
    mask: list[bool] = []
    for i in range(full):
        frame = x[i * gate.frame_len:(i + 1) * gate.frame_len]
        keep = gate.measure(frame) >= gate.threshold
        mask.append(keep)
        if keep:
            kept_parts.append(frame)
    if n % gate.frame_len:
        mask.append(True)
        kept_parts.append(x[full * gate.frame_len:])
    if kept_parts:
        kept = np.concatenate(kept_parts)
    else:
        kept = x[:0]
    return kept, mask


class StreamingGate:
    """Incremental gate_frames for block-at-a-time pipelines.

    Buffers up to one frame of history; flush() emits the final partial frame
    (always kept).  Decisions come back as (frame_index, kept) pairs so the
    caller can log kept-region timestamps.
    """

    def __init__(self, gate: FrameGate):
        self.gate = gate
        self._tail: Optional[np.ndarray] = None
        self._frame_index = 0

    def feed(self, block: np.ndarray) -> tuple[np.ndarray, list[tuple[int, bool]]]:
        x = np.asarray(block)
        if self._tail is not None and len(self._tail):
            x = np.concatenate([self._tail, x])
        n = len(x)
        full = n // self.gate.frame_len
        kept_parts = []
        decisions: list[tuple[int, bool]] = []
        for i in range(full):
            frame = x[i * self.gate.frame_len:(i + 1) * self.gate.frame_len]
            keep = self.gate.measure(frame) >= self.gate.threshold
            decisions.append((self._frame_index, keep))
            self._frame_index += 1
            if keep:
                kept_parts.append(frame)
        self._tail = x[full * self.gate.frame_len:]
        kept = np.concatenate(kept_parts) if kept_parts else x[:0]
        return kept, decisions

    def flush(self) -> tuple[np.ndarray, list[tuple[int, bool]]]:
        tail = self._tail
        self._tail = None
        if tail is None or not len(tail):
            return np.zeros((0,)), []
        decision = [(self._frame_index, True)]
        self._frame_index += 1
        return tail, decision


@dataclass
class Spectrogram:
    window_len: int
    hop: int
    sample_rate_hz: int
    magnitudes: np.ndarray  # (n_columns, window_len // 2 + 1)

    @property
    def freqs_hz(self) -> np.ndarray:
        return np.arange(self.magnitudes.shape[1]) * self.sample_rate_hz / self.window_len

    @property
    def times_s(self) -> np.ndarray:
        starts = np.arange(self.magnitudes.shape[0]) * self.hop
        return (starts + self.window_len / 2.0) / self.sample_rate_hz


def spectrogram(samples: np.ndarray, window_len: int, hop: int,
                sample_rate_hz: int) -> Spectrogram:
    """Hann-windowed short-time Fourier magnitudes.

    Bin spacing is sample_rate / window_len; column c covers samples
    [c*hop, c*hop + window_len).
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("spectrogram expects a mono signal")
    if window_len <= 0 or window_len & (window_len - 1):
        raise ValueError(f"window_len must be a power of two, got {window_len}")
    if not (0 < hop <= window_len):
        raise ValueError(f"hop must be in 1..window_len, got {hop}")
    if len(x) < window_len:
        raise ValueError(f"need at least window_len={window_len} samples, got {len(x)}")
    window = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(window_len) / window_len))
    n_cols = (len(x) - window_len) // hop + 1
    mags = np.empty((n_cols, window_len // 2 + 1))
    for c in range(n_cols):
        frame = x[c * hop:c * hop + window_len]
        mags[c] = np.abs(np.fft.rfft(frame * window))
    return Spectrogram(window_len, hop, sample_rate_hz, mags)

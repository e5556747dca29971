"""The acquisition path: double-buffered capture, per-interface WAV streams,
and the two-stereo-files-per-session rule.

Each of the two digital audio interfaces carries one stereo pair (channels
1+2 on interface 1, channels 3+4 on interface 2) into its own 4096-byte
double buffer.  A half becomes writable the moment it fills; the transfer
engine keeps filling the other half and wraps around.  If the writer has not
picked a half up by the time the engine wraps back onto it, that half is
overwritten and counted as dropped — the overrun the double-buffer technique
exists to prevent.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import dsp as _dsp
from .hw.audio import AudioSource, quantize
from .hw.storage import SdCardArray, WriteResult
from .model import AudioFormat, BandpassConfig, DeviceConfig, GateConfig, bytes_per_second
from .wav import WavStreamWriter, samples_to_bytes

BUFFER_BYTES = 4096
HALF_BYTES = BUFFER_BYTES // 2
SOURCE_CHUNK_FRAMES = 65_536  # render granularity; keeps memory flat


class DoubleBuffer:
    """4096-byte capture buffer with half-complete / full-complete interrupts.

    feed() accepts arbitrary chunks and returns one entry per interrupt:
    (generation, half_index, bytes).  generation counts complete fills of the
    whole buffer; half_index 0 is the lower half.
    """

    def __init__(self):
        self.storage = bytearray(BUFFER_BYTES)
        self.fill_cursor = 0
        self.generation = 0

    def feed(self, data: bytes) -> list[tuple[int, int, bytes]]:
        out = []
        view = memoryview(data)
        while len(view):
            space = HALF_BYTES - (self.fill_cursor % HALF_BYTES)
            take = min(space, len(view))
            start = self.fill_cursor
            self.storage[start:start + take] = view[:take]
            self.fill_cursor += take
            view = view[take:]
            if self.fill_cursor == HALF_BYTES:
                out.append((self.generation, 0, bytes(self.storage[:HALF_BYTES])))
            elif self.fill_cursor == BUFFER_BYTES:
                out.append((self.generation, 1, bytes(self.storage[HALF_BYTES:])))
                self.fill_cursor = 0
                self.generation += 1
        return out

    def drain_partial(self) -> Optional[bytes]:
        """Remaining bytes of an unfinished half when capture stops."""
        offset = self.fill_cursor % HALF_BYTES
        if offset == 0:
            return None
        base = 0 if self.fill_cursor < HALF_BYTES else HALF_BYTES
        return bytes(self.storage[base:base + offset])


@dataclass
class WriterLatencyModel:
    """Seconds the storage writer spends on each 2048-byte half.

    Fixed when ``jitter_s`` is zero, otherwise uniform in
    [per_half_write_time_s, per_half_write_time_s + jitter_s], seeded and
    independent per interface.
    """

    per_half_write_time_s: float
    jitter_s: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.per_half_write_time_s < 0:
            raise ValueError("per_half_write_time_s must be >= 0")
        if self.jitter_s < 0:
            raise ValueError("jitter_s must be >= 0")

    def stream(self, interface: int):
        if self.jitter_s == 0.0:
            while True:
                yield self.per_half_write_time_s
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, interface]))
        while True:
            yield self.per_half_write_time_s + rng.uniform(0.0, self.jitter_s)


@dataclass
class CapturedFile:
    """One finished per-interface WAV stream plus its gate bookkeeping."""

    interface: int  # 1 or 2
    format: AudioFormat
    data_bytes: int
    total_bytes: int
    name: Optional[str] = None
    path: Optional[Path] = None
    data: Optional[bytes] = None  # populated for in-memory sinks
    kept_regions_s: list = field(default_factory=list)  # [(start_s, end_s)]

    def read_bytes(self) -> bytes:
        if self.data is not None:
            return self.data
        if self.path is not None:
            return Path(self.path).read_bytes()
        raise ValueError("file was not materialized")


@dataclass
class RecordingSession:
    start: datetime
    duration_s: float
    files: list  # exactly 2 CapturedFile
    dropped_halves: int = 0
    energy_mah: float = 0.0
    aborted: bool = False
    storage_results: list = field(default_factory=list)

    @property
    def total_bytes(self) -> int:
        return sum(f.total_bytes for f in self.files)


def half_fill_time_s(fmt: AudioFormat) -> float:
    """Seconds to fill one 2048-byte half of a per-interface stream."""
    return HALF_BYTES / bytes_per_second(fmt)


def simulate_half_timing(n_full_halves: int, fmt: AudioFormat, latencies,
                         has_partial_tail: bool = False) -> tuple[list[bool], int]:
    """Which full halves survive the fill/write race.

    Half k fills at (k+1)*T; the transfer engine re-enters its slot at
    (k+2)*T, but only if the stream actually extends into half k+2.  The
    writer snapshots a half when it starts writing it, one half at a time,
    FIFO; a half whose write has not started by slot re-entry is overwritten
    and dropped.  Returns (kept mask, dropped count).
    """
    t_half = half_fill_time_s(fmt)
    kept = []
    dropped = 0
    writer_free = 0.0
    for k in range(n_full_halves):
        slot_reused = (k + 2) < n_full_halves or \
            ((k + 2) == n_full_halves and has_partial_tail)
        start = max((k + 1) * t_half, writer_free)
        if slot_reused and start >= (k + 2) * t_half:
            kept.append(False)
            dropped += 1
            continue
        kept.append(True)
        writer_free = start + next(latencies)
    return kept, dropped


class _StreamDsp:
    """Optional per-interface processing between capture and WAV encode.

    Dequantizes, applies the bandpass and/or gate on floats, and re-quantizes
    at the end of the chain; byte streams pass through untouched when both
    stages are disabled so zero-drop output stays bit-identical to capture.
    """

    def __init__(self, fmt: AudioFormat, bandpass: Optional[BandpassConfig],
                 gate: Optional[GateConfig]):
        self.fmt = fmt
        self.scale = float(2 ** (fmt.bit_depth - 1) - 1)
        self.cascade = None
        if bandpass is not None and bandpass.enabled:
            self.cascade = _dsp.design_bandpass(bandpass.low_hz, bandpass.high_hz,
                                                fmt.sample_rate_hz)
        self.gate = None
        self.frame_len = 0
        if gate is not None and gate.enabled:
            self.frame_len = max(1, round(0.050 * fmt.sample_rate_hz))
            self.gate = _dsp.StreamingGate(
                _dsp.FrameGate(self.frame_len, gate.threshold, "peak"))
        self.enabled = self.cascade is not None or self.gate is not None
        self._byte_tail = b""
        self.decisions: list[tuple[int, bool]] = []

    def process(self, raw: bytes) -> bytes:
        if not self.enabled:
            return raw
        data = self._byte_tail + raw
        bpf = self.fmt.block_align
        usable = len(data) - len(data) % bpf
        self._byte_tail = data[usable:]
        if not usable:
            return b""
        from .wav import bytes_to_samples
        frames = bytes_to_samples(data[:usable], self.fmt)
        floats = frames.astype(np.float64) / self.scale
        if self.cascade is not None:
            floats = _dsp.filter_apply(self.cascade, floats)
        if self.gate is not None:
            kept, decisions = self.gate.feed(floats)
            self.decisions.extend(decisions)
            floats = kept
        if not len(floats):
            return b""
        return samples_to_bytes(quantize(floats, self.fmt.bit_depth), self.fmt.bit_depth)

    def flush(self) -> bytes:
        if not self.enabled or self.gate is None:
            return b""
        kept, decisions = self.gate.flush()
        self.decisions.extend(decisions)
        if not len(kept):
            return b""
        return samples_to_bytes(quantize(kept, self.fmt.bit_depth), self.fmt.bit_depth)

    def kept_regions(self) -> list[tuple[float, float]]:
        """Merged [start_s, end_s) spans of kept frames in session time."""
        if self.gate is None:
            return []
        spans = []
        frame_s = self.frame_len / self.fmt.sample_rate_hz
        for idx, kept in self.decisions:
            if not kept:
                continue
            start = idx * frame_s
            if spans and abs(spans[-1][1] - start) < 1e-9:
                spans[-1][1] = start + frame_s
            else:
                spans.append([start, start + frame_s])
        return [(a, b) for a, b in spans]


def run_session(source: AudioSource, fmt: AudioFormat, duration_s: float,
                latency: WriterLatencyModel,
                config: Optional[DeviceConfig] = None,
                start: datetime = datetime(2026, 1, 1),
                sink_factory: Optional[Callable[[int], io.IOBase]] = None,
                ) -> RecordingSession:
    """Capture one session: two stereo WAV streams through double buffers.

    ``sink_factory(interface)`` supplies the seekable binary sink per
    interface; in-memory buffers are used when omitted.  DSP stages come from
    ``config`` (bandpass first, then the silence gate) and default to off.
    """
    if duration_s <= 0:
        raise ValueError(f"duration_s must be > 0, got {duration_s}")
    total_frames = round(duration_s * fmt.sample_rate_hz)
    if total_frames <= 0:
        raise ValueError("duration too short for even one frame")

    sinks = []
    writers = []
    buffers = []
    dsps = []
    for interface in (1, 2):
        sink = sink_factory(interface) if sink_factory else io.BytesIO()
        sinks.append(sink)
        writers.append(WavStreamWriter(sink, fmt))
        buffers.append(DoubleBuffer())
        dsps.append(_StreamDsp(
            fmt,
            config.bandpass if config else None,
            config.silence_gate if config else None,
        ))

    stream_bytes = total_frames * fmt.block_align
    n_full_halves = stream_bytes // HALF_BYTES
    has_partial = stream_bytes % HALF_BYTES > 0
    kept_masks = []
    dropped_total = 0
    for interface in (1, 2):
        kept, dropped = simulate_half_timing(
            n_full_halves, fmt, latency.stream(interface), has_partial)
        kept_masks.append(kept)
        dropped_total += dropped

    half_seq = [0, 0]
    produced = 0
    while produced < total_frames:
        n = min(SOURCE_CHUNK_FRAMES, total_frames - produced)
        block = quantize(source.read(n, fmt.sample_rate_hz), fmt.bit_depth)
        produced += n
        for idx in range(2):
            pair = block[:, 2 * idx:2 * idx + 2]
            raw = samples_to_bytes(pair, fmt.bit_depth)
            for _, _, half in buffers[idx].feed(raw):
                k = half_seq[idx]
                half_seq[idx] += 1
                if kept_masks[idx][k]:
                    writers[idx].write(dsps[idx].process(half))

    files = []
    for idx in range(2):
        partial = buffers[idx].drain_partial()
        if partial is not None:
            writers[idx].write(dsps[idx].process(partial))
        writers[idx].write(dsps[idx].flush())
        total = writers[idx].finalize()
        sink = sinks[idx]
        captured = CapturedFile(
            interface=idx + 1,
            format=fmt,
            data_bytes=writers[idx].data_bytes,
            total_bytes=total,
            kept_regions_s=dsps[idx].kept_regions(),
        )
        if isinstance(sink, io.BytesIO):
            captured.data = sink.getvalue()
        else:
            captured.path = Path(getattr(sink, "name"))
            sink.close()
        files.append(captured)

    return RecordingSession(start=start, duration_s=duration_s, files=files,
                            dropped_halves=dropped_total)


def plan_session_sizes(fmt: AudioFormat, duration_s: float,
                       latency: WriterLatencyModel) -> tuple[list[int], int]:
    """Sizes a session would produce, without rendering any audio.

    Valid only when no content-dependent stage (silence gate) is enabled.
    Returns (per-interface total file bytes, dropped halves across both).
    Must agree byte-for-byte with run_session; property-tested against it.
    """
    total_frames = round(duration_s * fmt.sample_rate_hz)
    stream_bytes = total_frames * fmt.block_align
    n_full = stream_bytes // HALF_BYTES
    partial = stream_bytes % HALF_BYTES
    sizes = []
    dropped_total = 0
    for interface in (1, 2):
        kept, dropped = simulate_half_timing(n_full, fmt,
                                             latency.stream(interface), partial > 0)
        data = sum(kept) * HALF_BYTES + partial
        sizes.append(44 + data)
        dropped_total += dropped
    return sizes, dropped_total


def session_file_name(start: datetime, interface: int) -> str:
    """Sortable, collision-free name encoding the two-interface split."""
    return f"REC_{start.strftime('%Y%m%d_%H%M%S')}_I2S{interface}.wav"


def finalize_session(session: RecordingSession, sd: SdCardArray) -> list[WriteResult]:
    """Name both files and place them on the card array.

    Returns one WriteResult per file in interface order; a storage_full result
    means that file (and any after it) was not stored and the device must stop
    scheduling sessions.
    """
    results = []
    for f in session.files:
        f.name = session_file_name(session.start, f.interface)
        res = sd.write_file(f.name, f.total_bytes)
        results.append(res)
        if res.storage_full:
            break
    session.storage_results = results
    return results

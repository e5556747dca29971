"""Figure rendering for the CLI report path: waveform + spectrogram panels
for recorded files, and energy/storage traces for run ledgers.

matplotlib is imported lazily with the Agg backend so headless runs and test
environments never touch a display.
"""

from __future__ import annotations

from datetime import datetime
from pathlib import Path
from typing import Union

import numpy as np

from .dsp import spectrogram
from .wav import read_wav


def _plt():
    import matplotlib
    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt
    return plt


def render_recording_figure(wav_path: Union[str, Path], png_path: Union[str, Path],
                            window_len: int = 1024, hop: int = 256,
                            channel: int = 0) -> Path:
    """Waveform over a spectrogram for one recorded file."""
    plt = _plt()
    fmt, samples = read_wav(wav_path)
    scale = float(2 ** (fmt.bit_depth - 1) - 1)
    mono = samples[:, channel].astype(np.float64) / scale
    t = np.arange(len(mono)) / fmt.sample_rate_hz

    fig, (ax_wave, ax_spec) = plt.subplots(
        2, 1, figsize=(10, 6), sharex=True,
        gridspec_kw={"height_ratios": [1, 2]})
    ax_wave.plot(t, mono, linewidth=0.4, color="tab:blue")
    ax_wave.set_ylabel("amplitude")
    ax_wave.set_ylim(-1.05, 1.05)
    ax_wave.set_title(Path(wav_path).name)

    spec = spectrogram(mono, window_len, hop, fmt.sample_rate_hz)
    power_db = 20.0 * np.log10(np.maximum(spec.magnitudes.T, 1e-10))
    ax_spec.imshow(power_db, origin="lower", aspect="auto",
                   extent=[0, t[-1] if len(t) else 0,
                           0, fmt.sample_rate_hz / 2 / 1000.0],
                   cmap="magma")
    ax_spec.set_xlabel("time [s]")
    ax_spec.set_ylabel("frequency [kHz]")

    out = Path(png_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def render_energy_figure(ledger, png_path: Union[str, Path]) -> Path:
    """Battery charge vs time from a run ledger."""
    plt = _plt()
    trace = ledger.energy_trace
    times = [datetime.fromisoformat(r["ts"]) for r in trace]
    charge = [r["charge_mah"] for r in trace]

    fig, ax = plt.subplots(figsize=(10, 4))
    ax.plot(times, charge, color="tab:green")
    ax.set_ylabel("battery charge [mAh]")
    ax.set_xlabel("virtual time")
    ax.grid(True, alpha=0.3)
    for s in ledger.sessions:
        start = datetime.fromisoformat(s["ts"])
        ax.axvline(start, color="tab:red", alpha=0.25, linewidth=0.8)
    fig.autofmt_xdate()

    out = Path(png_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def render_storage_figure(ledger, png_path: Union[str, Path]) -> Path:
    """Per-card usage over time from a run ledger."""
    plt = _plt()
    trace = ledger.storage_trace
    fig, ax = plt.subplots(figsize=(10, 4))
    if trace:
        times = [datetime.fromisoformat(r["ts"]) for r in trace]
        n_cards = len(trace[0]["cards"])
        for i in range(n_cards):
            ax.step(times, [r["cards"][i] / 1e9 for r in trace],
                    where="post", label=f"card {i}")
        ax.legend(loc="upper left")
        fig.autofmt_xdate()
    ax.set_ylabel("used [GB]")
    ax.set_xlabel("virtual time")
    ax.grid(True, alpha=0.3)

    out = Path(png_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out

"""HTTP service the operator UI talks to.

Three surfaces: a status snapshot (poll), packet submission carrying the
bit-exact wire frames as hex, and a server-sent-event stream of ledger
records and telemetry.  Virtual time only moves when /api/advance is called
or when a realtime ticker is enabled, so tests and the UI can step the world
deterministically.
"""

from __future__ import annotations

import asyncio
import threading
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import __version__
from .sim import Scenario, Simulator

EVENT_POLL_S = 0.05


class FrameRequest(BaseModel):
    frame_hex: str


class AdvanceRequest(BaseModel):
    seconds: float


class DeviceService:
    """Single-owner wrapper: every mutation of the world goes through the lock."""

    def __init__(self, sim: Simulator, realtime_factor: float = 0.0):
        self.sim = sim
        self.lock = threading.Lock()
        self.realtime_factor = realtime_factor
        self._ticker: Optional[threading.Thread] = None
        self._stop = threading.Event()

    def start(self) -> None:
        with self.lock:
            self.sim.start()
        if self.realtime_factor > 0 and self._ticker is None:
            self._ticker = threading.Thread(target=self._tick_loop, daemon=True)
            self._ticker.start()

    def shutdown(self) -> None:
        self._stop.set()

    def _tick_loop(self) -> None:
        import time as wall
        period = 0.1
        while not self._stop.wait(period):
            with self.lock:
                self.sim.advance(period * self.realtime_factor)

    def status(self) -> dict:
        with self.lock:
            return self.sim.status_snapshot()

    def advance(self, seconds: float) -> dict:
        if seconds <= 0:
            raise ValueError("seconds must be > 0")
        with self.lock:
            first_seq = self.sim.advance(seconds)
            return {
                "time": self.sim.now.isoformat(),
                "new_records": len(self.sim.ledger.records) - first_seq,
            }

    def submit_frame(self, frame_hex: str) -> dict:
        try:
            raw = bytes.fromhex(frame_hex)
        except ValueError as exc:
            raise ValueError(f"frame_hex is not valid hex: {exc}") from exc
        with self.lock:
            acks = self.sim.submit_frame(raw)
        return {
            "acks": [
                {"ok": a.ok, "request_id": int(a.request_id),
                 "errors": [str(e) for e in a.errors], "status": a.status}
                for a in acks
            ],
            "frames_hex": [a.to_frame().hex() for a in acks],
        }

    def records_since(self, seq: int) -> list[dict]:
        with self.lock:
            return list(self.sim.ledger.records[seq:])

    def last_session_audio(self):
        with self.lock:
            record = self.sim._last_session
            if record is None:
                return None, None
            fmt = self.sim.config.format
        return record, fmt


def create_app(service: DeviceService,
               frontend_dir: Optional[Path] = None) -> FastAPI:
    app = FastAPI(title="recorder-sim", version=__version__)
    service.start()

    @app.get("/api/status")
    def status():
        return service.status()

    @app.post("/api/advance")
    def advance(req: AdvanceRequest):
        try:
            return service.advance(req.seconds)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/api/packet")
    def packet(req: FrameRequest):
        try:
            return service.submit_frame(req.frame_hex)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.get("/api/events")
    async def events():
        async def stream():
            import json
            seq = 0
            while True:
                records = service.records_since(seq)
                for r in records:
                    yield f"event: record\ndata: {json.dumps(r, sort_keys=True)}\n\n"
                seq += len(records)
                status = service.status()
                yield f"event: status\ndata: {json.dumps(status, sort_keys=True)}\n\n"
                await asyncio.sleep(EVENT_POLL_S)

        return StreamingResponse(stream(), media_type="text/event-stream")

    @app.get("/api/last-session/spectrogram")
    def last_session_spectrogram():
        record, fmt = service.last_session_audio()
        if record is None:
            return JSONResponse({"available": False})
        # the most recent session's first file, when its bytes are reachable
        from .dsp import spectrogram
        from .wav import bytes_to_samples
        session_files = record.get("files", [])
        if not session_files:
            return JSONResponse({"available": False})
        sim = service.sim
        name = session_files[0]["name"]
        data = None
        if sim.out_dir is not None:
            p = sim.out_dir / "sessions" / name
            if p.exists():
                data = p.read_bytes()[44:]
        if data is None or len(data) < fmt.block_align:
            return JSONResponse({"available": False})
        samples = bytes_to_samples(data, fmt)
        mono = samples[:, 0].astype(np.float64) / float(2 ** (fmt.bit_depth - 1) - 1)
        window = 1024
        if len(mono) < window:
            return JSONResponse({"available": False})
        hop = max(window, len(mono) // 400)  # cap the column count for transport
        spec = spectrogram(mono, window, hop, fmt.sample_rate_hz)
        mags = spec.magnitudes
        step = max(1, mags.shape[1] // 256)
        return {
            "available": True,
            "file": name,
            "sample_rate_hz": fmt.sample_rate_hz,
            "bin_hz": fmt.sample_rate_hz / window,
            "times_s": [round(t, 4) for t in spec.times_s.tolist()],
            "magnitudes_db": np.round(
                20.0 * np.log10(np.maximum(mags[:, ::step], 1e-10)), 1).tolist(),
            "waveform": mono[:: max(1, len(mono) // 2000)].round(4).tolist(),
        }

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True),
                  name="frontend")

    return app


def serve(scenario: Scenario, port: int, out_dir: Optional[Path] = None,
          realtime_factor: float = 0.0, frontend_dir: Optional[Path] = None,
          host: str = "127.0.0.1") -> None:
    """Run the UI-facing service until interrupted."""
    import uvicorn

    sim = Simulator(scenario, out_dir)
    service = DeviceService(sim, realtime_factor=realtime_factor)
    app = create_app(service, frontend_dir=frontend_dir)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        service.shutdown()

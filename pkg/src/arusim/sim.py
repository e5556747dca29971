"""Composition root: a deterministic virtual-time event loop wiring the
scheduler, capture pipeline, virtual hardware and config protocol together,
plus the scenario description that drives it.

One logical owner advances the simulation.  Everything externally visible
lands in the run ledger as plain dicts, serialized one record per line, and
two runs of the same scenario are byte-identical.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Optional, Union

import yaml

from .hw import (
    EnergyState,
    FilePlaybackSource,
    MixtureSource,
    NoiseSource,
    SdCard,
    SdCardArray,
    Segment,
    SilenceSource,
    ToneSource,
    VirtualEeprom,
    VirtualRtc,
)
from .model import DeviceConfig, DeviceState, config_violations, factory_defaults
from .pipeline import (
    CapturedFile,
    RecordingSession,
    WriterLatencyModel,
    finalize_session,
    plan_session_sizes,
    run_session,
    session_file_name,
)
from .protocol import (
    Ack,
    PacketId,
    apply_packet,
    decode_packet,
    load_config,
    persist_config,
    profile_from_dict,
    profile_import,
    profile_to_dict,
)
from .scheduler import StateMachine, WakeEntry, next_wake
from .wav import WAV_HEADER_BYTES, WavStreamWriter


class ScenarioError(ValueError):
    pass


def parse_duration_s(value: Union[int, float, str]) -> float:
    """Accept plain seconds or '<n>h' / '<n>m' / '<n>s' strings."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip().lower()
    mult = {"h": 3600.0, "m": 60.0, "s": 1.0}.get(text[-1:], None)
    try:
        if mult is None:
            return float(text)
        return float(text[:-1]) * mult
    except ValueError as exc:
        raise ScenarioError(f"bad duration {value!r}") from exc


_SCENARIO_KEYS = {"seed", "start_time", "duration", "boot_mode", "config",
                  "profile", "irradiance", "audio", "faults", "emit_audio",
                  "battery", "storage"}
_FAULT_KEYS = {"writer_latency_ms", "power_cut_at"}
_AUDIO_KINDS = {"silence", "tone", "noise", "file"}


@dataclass
class Scenario:
    start_time: datetime
    duration_s: float
    seed: int = 0
    boot_mode: str = "recording"
    config: DeviceConfig = field(default_factory=factory_defaults)
    irradiance: Union[float, list] = 0.0
    audio_segments: list = field(default_factory=list)
    writer_latency: WriterLatencyModel = field(
        default_factory=lambda: WriterLatencyModel(0.005))
    power_cut_offsets_s: list = field(default_factory=list)
    emit_audio: bool = True
    battery: dict = field(default_factory=dict)
    card_capacities: Optional[list] = None

    def __post_init__(self):
        if self.duration_s < 0:
            raise ScenarioError("duration must be >= 0")
        if self.boot_mode not in ("recording", "config"):
            raise ScenarioError(f"boot_mode must be recording|config, "
                                f"got {self.boot_mode!r}")
        if isinstance(self.irradiance, list) and len(self.irradiance) != 24:
            raise ScenarioError("irradiance list must have 24 hourly entries")
        violations = config_violations(self.config)
        if violations:
            raise ScenarioError("invalid config: "
                                + "; ".join(str(v) for v in violations))

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Optional[Path] = None) -> "Scenario":
        if not isinstance(doc, dict):
            raise ScenarioError("scenario must be a mapping")
        unknown = set(doc) - _SCENARIO_KEYS
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
        try:
            start = doc["start_time"]
            start = start if isinstance(start, datetime) \
                else datetime.fromisoformat(str(start))
            duration = parse_duration_s(doc["duration"])
        except KeyError as exc:
            raise ScenarioError(f"scenario missing required key {exc}") from exc

        if "config" in doc and doc["config"] is not None:
            config = profile_from_dict(doc["config"])
        elif "profile" in doc and doc["profile"] is not None:
            path = Path(doc["profile"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            config = profile_import(path.read_text())
        else:
            config = factory_defaults()

        faults = doc.get("faults") or {}
        unknown = set(faults) - _FAULT_KEYS
        if unknown:
            raise ScenarioError(f"unknown fault keys: {sorted(unknown)}")
        latency_spec = faults.get("writer_latency_ms", 5.0)
        seed = int(doc.get("seed", 0))
        if isinstance(latency_spec, dict):
            base = float(latency_spec.get("base", 5.0))
            jitter = float(latency_spec.get("jitter", 0.0))
        else:
            base, jitter = float(latency_spec), 0.0
        latency = WriterLatencyModel(base / 1000.0, jitter / 1000.0, seed=seed)

        segments = []
        for i, seg in enumerate(doc.get("audio") or []):
            kind = seg.get("kind")
            if kind not in _AUDIO_KINDS:
                raise ScenarioError(f"audio segment {i}: unknown kind {kind!r}")
            segments.append(dict(seg))

        battery = dict(doc.get("battery") or {})
        storage = doc.get("storage") or {}
        cards = storage.get("cards") if isinstance(storage, dict) else None

        return cls(
            start_time=start,
            duration_s=duration,
            seed=seed,
            boot_mode=doc.get("boot_mode", "recording"),
            config=config,
            irradiance=doc.get("irradiance", 0.0),
            audio_segments=segments,
            writer_latency=latency,
            power_cut_offsets_s=[parse_duration_s(t)
                                 for t in faults.get("power_cut_at", [])],
            emit_audio=bool(doc.get("emit_audio", True)),
            battery=battery,
            card_capacities=cards,
        )

    @classmethod
    def from_yaml(cls, text: str, base_dir: Optional[Path] = None) -> "Scenario":
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ScenarioError(f"unparseable scenario: {exc}") from exc
        return cls.from_dict(doc, base_dir)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "Scenario":
        p = Path(path)
        return cls.from_yaml(p.read_text(), base_dir=p.parent)


@dataclass
class RunLedger:
    """Everything a run produced, in one chronological record stream."""

    records: list = field(default_factory=list)

    def add(self, record: dict) -> dict:
        record["seq"] = len(self.records)
        self.records.append(record)
        return record

    def of_type(self, kind: str) -> list:
        return [r for r in self.records if r["type"] == kind]

    @property
    def transitions(self) -> list:
        return self.of_type("transition")

    @property
    def sessions(self) -> list:
        return self.of_type("session")

    @property
    def energy_trace(self) -> list:
        return self.of_type("energy")

    @property
    def storage_trace(self) -> list:
        return self.of_type("storage")

    @property
    def anomalies(self) -> list:
        return self.of_type("anomaly")

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def transitions_log(self) -> str:
        lines = []
        for t in self.transitions:
            actions = ",".join(t["actions"]) if t["actions"] else "-"
            lines.append(f"{t['ts']} | {t['from']} | {t['event']} | "
                         f"{t['to']} | {actions}")
        return "\n".join(lines) + ("\n" if lines else "")

    def gate_sidecar(self) -> str:
        lines = []
        for s in self.sessions:
            for f in s["files"]:
                for a, b in f.get("kept_regions_s", []):
                    lines.append(f"{f['name']} | {a:.6f} | {b:.6f}")
        return "\n".join(lines) + ("\n" if lines else "")


class Simulator:
    """Single-owner world: advancing time is the only way anything happens."""

    def __init__(self, scenario: Scenario, out_dir: Optional[Path] = None):
        self.scenario = scenario
        self.out_dir = Path(out_dir) if out_dir else None
        self.end_time = scenario.start_time + timedelta(seconds=scenario.duration_s)

        self.rtc = VirtualRtc(scenario.start_time)
        self.eeprom = VirtualEeprom()
        self.energy = self._build_energy(scenario.battery)
        self.sd = self._build_sd(scenario.card_capacities)
        self.machine = StateMachine()
        self.ledger = RunLedger()
        self.config = scenario.config
        self._script = self._build_script()
        self._pending_entry: Optional[WakeEntry] = None
        self._session_start: Optional[datetime] = None
        self._session_end: Optional[datetime] = None
        self._cuts = [scenario.start_time + timedelta(seconds=s)
                      for s in sorted(scenario.power_cut_offsets_s)]
        self._last_session: Optional[dict] = None
        self._consumed_mah = 0.0
        self._solar_in_mah = 0.0
        self._started = False

        if self.out_dir is not None:
            (self.out_dir / "sessions").mkdir(parents=True, exist_ok=True)

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _build_energy(overrides: dict) -> EnergyState:
        energy = EnergyState()
        if "capacity_mah" in overrides:
            energy.battery_capacity_mah = float(overrides["capacity_mah"])
            energy.battery_charge_mah = energy.battery_capacity_mah
        if "charge_mah" in overrides:
            energy.battery_charge_mah = float(overrides["charge_mah"])
        if "panel_watts" in overrides:
            energy.panel_watts = float(overrides["panel_watts"])
        if "max_charge_current_ma" in overrides:
            energy.max_charge_current_ma = float(overrides["max_charge_current_ma"])
        for name, ma in (overrides.get("draw_ma") or {}).items():
            state = DeviceState(name)
            energy.draw_table[state] = float(ma)
        return energy

    @staticmethod
    def _build_sd(capacities: Optional[list]) -> SdCardArray:
        if capacities is None:
            return SdCardArray()
        return SdCardArray([SdCard(capacity_bytes=int(c)) for c in capacities])

    def _build_script(self):
        segments = []
        for i, seg in enumerate(self.scenario.audio_segments):
            kind = seg["kind"]
            at = parse_duration_s(seg.get("at", 0))
            if kind == "silence":
                src = SilenceSource()
            elif kind == "tone":
                src = ToneSource(float(seg["freq_hz"]), float(seg["amplitude"]))
            elif kind == "noise":
                src = NoiseSource(float(seg["amplitude"]),
                                  int(seg.get("seed", self.scenario.seed * 1000 + i)))
            else:
                src = FilePlaybackSource(seg["path"])
            segments.append(Segment(at, src))
        if not segments:
            return SilenceSource()
        return MixtureSource(segments)

    # -- protocol-facing surface (device hooks) --------------------------------

    @property
    def state(self) -> DeviceState:
        return self.machine.state

    @property
    def now(self) -> datetime:
        return self.rtc.now

    def set_rtc(self, at: datetime) -> None:
        self._event("rtc_set", {"to": at.isoformat()})
        self.rtc.set_time(at)
        if self.machine.state in (DeviceState.SLEEP, DeviceState.LOW_BATTERY):
            self._arm_next_alarm()

    def request_forced_sleep(self) -> None:
        self._apply_step(self.machine.step("forced_sleep"))

    def factory_reset(self) -> None:
        self.eeprom.erase()
        self.config = factory_defaults()
        self._apply_step(self.machine.step("factory_reset"),
                         ignore={"clear_eeprom", "restore_defaults"})

    def status_snapshot(self) -> dict:
        return serve_status(self)

    def submit_frame(self, data: bytes) -> list[Ack]:
        """Feed raw protocol bytes; apply every complete frame; return acks."""
        acks = []
        buf = data
        while buf:
            res = decode_packet(buf, eof=True)
            if res.packet is None:
                break
            buf = buf[res.consumed:]
            ack = apply_packet(self, res.packet)
            acks.append(ack)
            self._event("packet", {
                "packet_id": int(res.packet.packet_id),
                "ok": ack.ok,
                "errors": [str(e) for e in ack.errors],
            })
            mutating = ack.ok and res.packet.packet_id in (
                PacketId.SET_AUDIO_FORMAT, PacketId.SET_GAINS,
                PacketId.SET_SCHEDULE, PacketId.SET_DSP,
                PacketId.SET_FULL_PROFILE)
            if mutating and self.machine.state == DeviceState.CONFIG_MODE:
                self._apply_step(self.machine.step("config_received"),
                                 ignore={"persist_config"})
        return acks

    # -- the event loop ---------------------------------------------------------

    def start(self) -> None:
        """Boot the device: provision EEPROM, then run the boot transition."""
        if self._started:
            return
        self._started = True
        persist_config(self.eeprom, self.config)  # operator provisioning
        stored = load_config(self.eeprom)
        self.config = stored if stored is not None else factory_defaults()
        self._trace_energy()
        self._apply_step(self.machine.step(
            "boot", jumper_config=self.scenario.boot_mode == "config"))

    def run(self) -> RunLedger:
        self.start()
        if self.scenario.duration_s > 0:
            self.advance(self.scenario.duration_s)
        self._trace_energy()
        self._summary()
        if self.out_dir is not None:
            self.write_outputs()
        return self.ledger

    def advance(self, seconds: float) -> int:
        """Advance virtual time; returns the first new ledger seq processed."""
        self.start()
        first_seq = len(self.ledger.records)
        target_end = self.rtc.now + timedelta(seconds=seconds)
        guard = 0
        while self.rtc.now < target_end:
            self._step_once(target_end)
            guard += 1
            if guard > 10_000_000:
                raise RuntimeError("event loop failed to make progress")
        return first_seq

    def _step_once(self, end: datetime) -> None:
        now = self.rtc.now
        if self._cuts and self._cuts[0] <= now:
            self._cuts.pop(0)
            self._power_cut()
            return
        targets = [end]
        if self.rtc.alarm is not None:
            targets.append(self.rtc.alarm)
        if self._session_end is not None:
            targets.append(self._session_end)
        targets.append(self._next_hour(now))
        if self._cuts:
            targets.append(self._cuts[0])
        target = min(t for t in targets if t > now)

        dt = (target - now).total_seconds()
        used, battery_event = self.energy.advance(
            self.machine.state, self._irradiance(now), dt,
            self.config.battery_floor_percent)
        draw = self.energy.draw_table[self.machine.state]
        self._consumed_mah += draw * used / 3600.0

        event_time = min(now + timedelta(seconds=used), target)
        fired = self.rtc.advance_to(event_time)

        if battery_event is not None:
            self._trace_energy()
            self._handle_battery_event(battery_event)
        if fired is not None:
            # processed after any same-instant battery crossing so the
            # machine sees the post-crossing charge
            self._trace_energy()
            self._event("alarm_fired", {"at": fired.isoformat()})
            res = self.machine.step(
                "alarm_fired",
                charge_percent=self.energy.charge_percent,
                floor_percent=self.config.battery_floor_percent)
            self._apply_step(res)
        if battery_event is not None or fired is not None:
            return  # re-evaluate targets after any state change

        if self._session_end is not None and self.rtc.now >= self._session_end:
            self._trace_energy()
            self._apply_step(self.machine.step("session_done"))

    def _handle_battery_event(self, kind: str) -> None:
        self._event(kind, {"charge_mah": self.energy.battery_charge_mah})
        if kind in ("battery_low", "battery_empty"):
            if self.machine.state in (DeviceState.SLEEP, DeviceState.RECORDING):
                self._apply_step(self.machine.step("battery_low"))
        elif kind == "battery_recovered":
            if self.machine.state == DeviceState.LOW_BATTERY:
                self._apply_step(self.machine.step("battery_recovered"))
        # charge_complete is informational only

    def _power_cut(self) -> None:
        self._anomaly("power cut: device restarting")
        if self._session_start is not None:
            self._finish_session(aborted=True)
        self.machine = StateMachine()
        self.rtc.clear_alarm()
        stored = load_config(self.eeprom)
        self.config = stored if stored is not None else factory_defaults()
        self._apply_step(self.machine.step(
            "boot", jumper_config=self.scenario.boot_mode == "config"))

    # -- actions -----------------------------------------------------------------

    def _apply_step(self, res, ignore=frozenset()) -> None:
        for t in res.transitions:
            self.ledger.add({
                "type": "transition",
                "ts": self.rtc.now.isoformat(),
                "from": t.from_state.value,
                "event": t.event,
                "to": t.to_state.value,
                "actions": list(t.actions),
            })
        if res.anomaly:
            self._anomaly(res.anomaly)
        for action in res.actions:
            if action in ignore:
                continue
            self._execute(action)

    def _execute(self, action: str) -> None:
        if action == "arm_alarm":
            self._arm_next_alarm()
        elif action == "start_session":
            self._begin_session()
        elif action == "finalize_session":
            self._finish_session(aborted=False)
        elif action == "abort_session":
            self._finish_session(aborted=True)
        elif action == "persist_config":
            persist_config(self.eeprom, self.config)
        elif action == "clear_eeprom":
            self.eeprom.erase()
        elif action == "restore_defaults":
            self.config = factory_defaults()
        elif action == "skip_session":
            self._event("session_skipped", {
                "charge_percent": self.energy.charge_percent})
        elif action in ("finalize_partial", "log_low_battery"):
            pass  # folded into abort handling / battery event records
        else:
            self._anomaly(f"unknown action {action!r}")

    def _arm_next_alarm(self) -> None:
        entry = next_wake(self.config.schedule, self.rtc.now)
        if entry is None:
            self.rtc.clear_alarm()
            self._pending_entry = None
            self._anomaly("no wake entries today or tomorrow; alarm not armed")
            return
        self._pending_entry = entry
        self.rtc.set_alarm(entry.wake_at)
        self._event("alarm_armed", {"at": entry.wake_at.isoformat(),
                                    "duration_s": entry.duration_s})

    def _begin_session(self) -> None:
        entry = self._pending_entry
        duration = entry.duration_s if entry else 600
        self._session_start = self.rtc.now
        self._session_end = self.rtc.now + timedelta(seconds=duration)

    def _finish_session(self, aborted: bool) -> None:
        start, end = self._session_start, self._session_end
        self._session_start = None
        self._session_end = None
        if start is None:
            return
        duration = (self.rtc.now - start).total_seconds()
        fmt = self.config.format
        frames = round(duration * fmt.sample_rate_hz)
        gate_on = self.config.silence_gate.enabled or self.config.bandpass.enabled

        if frames <= 0:
            session = self._empty_session(start)
        elif not self.scenario.emit_audio and not gate_on:
            sizes, dropped = plan_session_sizes(fmt, duration,
                                                self.scenario.writer_latency)
            files = [CapturedFile(interface=i + 1, format=fmt,
                                  data_bytes=sizes[i] - WAV_HEADER_BYTES,
                                  total_bytes=sizes[i])
                     for i in range(2)]
            session = RecordingSession(start=start, duration_s=duration,
                                       files=files, dropped_halves=dropped)
        else:
            offset_s = max(0.0, (start - self.scenario.start_time).total_seconds())
            self._script.seek(round(offset_s * fmt.sample_rate_hz))
            sink_factory = None
            if self.out_dir is not None and self.scenario.emit_audio:
                def sink_factory(interface):
                    name = session_file_name(start, interface)
                    return open(self.out_dir / "sessions" / name, "w+b")
            session = run_session(self._script, fmt, duration,
                                  self.scenario.writer_latency,
                                  config=self.config, start=start,
                                  sink_factory=sink_factory)

        session.aborted = aborted
        session.energy_mah = self.energy.draw_table[DeviceState.RECORDING] \
            * duration / 3600.0
        results = finalize_session(session, self.sd)

        record = {
            "type": "session",
            "ts": start.isoformat(),
            "duration_s": duration,
            "aborted": aborted,
            "dropped_halves": session.dropped_halves,
            "energy_mah": session.energy_mah,
            "files": [],
        }
        storage_full = False
        for i, f in enumerate(session.files):
            placed = results[i] if i < len(results) else None
            entry = {
                "name": f.name or session_file_name(start, f.interface),
                "interface": f.interface,
                "bytes": f.total_bytes,
                "data_bytes": f.data_bytes,
                "card": placed.card_index if placed and placed.accepted else None,
            }
            if f.kept_regions_s:
                entry["kept_regions_s"] = [[a, b] for a, b in f.kept_regions_s]
            record["files"].append(entry)
            if placed is not None and placed.switched:
                self._event("card_switched", {"from": placed.switched_from,
                                              "to": placed.card_index})
            if placed is None or placed.storage_full:
                storage_full = True
        self._last_session = self.ledger.add(record)
        self._trace_storage()

        if storage_full:
            self._event("storage_full", {"free_bytes": self.sd.total_free_bytes})
            self._apply_step(self.machine.step("storage_full"))
            self.rtc.clear_alarm()

    def _empty_session(self, start: datetime) -> RecordingSession:
        files = []
        for interface in (1, 2):
            sink = io.BytesIO()
            WavStreamWriter(sink, self.config.format).finalize()
            files.append(CapturedFile(interface=interface, format=self.config.format,
                                      data_bytes=0, total_bytes=WAV_HEADER_BYTES,
                                      data=sink.getvalue()))
        return RecordingSession(start=start, duration_s=0.0, files=files)

    # -- bookkeeping ----------------------------------------------------------------

    def _irradiance(self, at: datetime) -> float:
        profile = self.scenario.irradiance
        if isinstance(profile, list):
            return float(profile[at.hour])
        return float(profile)

    @staticmethod
    def _next_hour(t: datetime) -> datetime:
        return t.replace(minute=0, second=0, microsecond=0) + timedelta(hours=1)

    def _trace_energy(self) -> None:
        self.ledger.add({
            "type": "energy",
            "ts": self.rtc.now.isoformat(),
            "charge_mah": self.energy.battery_charge_mah,
            "state": self.machine.state.value,
        })

    def _trace_storage(self) -> None:
        self.ledger.add({
            "type": "storage",
            "ts": self.rtc.now.isoformat(),
            "used_bytes": self.sd.total_used_bytes,
            "cards": [c.used_bytes for c in self.sd.cards],
            "active_card": self.sd.active_index,
        })

    def _event(self, kind: str, detail: dict) -> None:
        self.ledger.add({"type": "event", "ts": self.rtc.now.isoformat(),
                         "event": kind, **detail})

    def _anomaly(self, message: str) -> None:
        self.ledger.add({"type": "anomaly", "ts": self.rtc.now.isoformat(),
                         "message": message})

    def _summary(self) -> None:
        solar_in = self.energy.battery_charge_mah \
            - self._initial_charge() + self._consumed_mah
        self.ledger.add({
            "type": "summary",
            "ts": self.rtc.now.isoformat(),
            "consumed_mah": self._consumed_mah,
            "solar_in_mah": solar_in,
            "final_charge_mah": self.energy.battery_charge_mah,
            "sessions": len(self.ledger.sessions),
            "files": self.sd.file_count(),
            "storage_used_bytes": self.sd.total_used_bytes,
            "final_state": self.machine.state.value,
        })

    def _initial_charge(self) -> float:
        for r in self.ledger.records:
            if r["type"] == "energy":
                return r["charge_mah"]
        return self.energy.battery_charge_mah

    def write_outputs(self) -> None:
        # session WAVs were streamed straight into sessions/ during the run
        out = self.out_dir
        (out / "ledger.jsonl").write_text(self.ledger.to_jsonl())
        (out / "transitions.log").write_text(self.ledger.transitions_log())
        sidecar = self.ledger.gate_sidecar()
        if sidecar:
            (out / "gate_sidecar.log").write_text(sidecar)


def serve_status(sim: Simulator) -> dict:
    """Snapshot for the operator UI; safe at any event boundary."""
    return {
        "time": sim.rtc.now.isoformat(),
        "state": sim.machine.state.value,
        "charge_mah": sim.energy.battery_charge_mah,
        "charge_percent": sim.energy.charge_percent,
        "battery_capacity_mah": sim.energy.battery_capacity_mah,
        "cards": sim.sd.snapshot(),
        "storage_used_bytes": sim.sd.total_used_bytes,
        "storage_capacity_bytes": sim.sd.total_capacity_bytes,
        "next_alarm": sim.rtc.alarm.isoformat() if sim.rtc.alarm else None,
        "config": profile_to_dict(sim.config),
        "last_session": sim._last_session,
        "session_count": len(sim.ledger.sessions),
        "anomaly_count": len(sim.ledger.anomalies),
    }


def run_scenario(scenario: Scenario, out_dir: Optional[Union[str, Path]] = None,
                 ) -> RunLedger:
    """Run a scenario start to finish; writes outputs when out_dir is given."""
    sim = Simulator(scenario, Path(out_dir) if out_dir else None)
    return sim.run()

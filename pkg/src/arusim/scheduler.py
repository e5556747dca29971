"""Wake planning and the device's operational state machine.

Daily mode wakes at every whole hour from sunrise through sunset inclusive
(a 06:00-18:00 window gives 13 sessions; inclusivity maximizes dawn/dusk
coverage and is documented because it changes daily energy use by ~8%).
Hourly mode wakes at explicit times for a configured duration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta
from typing import Optional

from .model import DailySchedule, DeviceState, HourlySchedule, Schedule

DAILY_SESSION_SECONDS = 600


@dataclass(frozen=True)
class WakeEntry:
    wake_at: datetime
    duration_s: int


@dataclass(frozen=True)
class WakePlan:
    entries: tuple[WakeEntry, ...]

    def __post_init__(self):
        for a, b in zip(self.entries, self.entries[1:]):
            if a.wake_at >= b.wake_at:
                raise ValueError("wake entries must be strictly increasing")
            if a.wake_at + timedelta(seconds=a.duration_s) > b.wake_at:
                raise ValueError(f"sessions overlap: {a} then {b}")


def plan_daily(sunrise: time, sunset: time, day: date) -> WakePlan:
    """One 600 s session at every whole hour h with sunrise <= h <= sunset."""
    if not sunrise < sunset:
        raise ValueError(f"need sunrise < sunset, got {sunrise} .. {sunset}")
    first = sunrise.hour if sunrise.minute == 0 and sunrise.second == 0 \
        else sunrise.hour + 1
    last = sunset.hour
    entries = tuple(
        WakeEntry(datetime.combine(day, time(h, 0)), DAILY_SESSION_SECONDS)
        for h in range(first, last + 1)
    )
    return WakePlan(entries)


def plan_hourly(wake_times: tuple[time, ...], session_minutes: int,
                day: date) -> WakePlan:
    """One entry per configured wake time with the configured duration."""
    if not wake_times:
        raise ValueError("wake_times must be nonempty")
    if session_minutes < 1:
        raise ValueError("session_minutes must be >= 1")
    entries = tuple(
        WakeEntry(datetime.combine(day, t), session_minutes * 60)
        for t in wake_times
    )
    return WakePlan(entries)  # overlap/order enforced by WakePlan


def plan_for_day(schedule: Schedule, day: date) -> WakePlan:
    if isinstance(schedule, DailySchedule):
        return plan_daily(schedule.sunrise, schedule.sunset, day)
    if isinstance(schedule, HourlySchedule):
        return plan_hourly(schedule.wake_times, schedule.session_minutes, day)
    raise TypeError(f"unknown schedule type {type(schedule).__name__}")


def next_alarm(plan: WakePlan, now: datetime) -> Optional[datetime]:
    """Smallest wake time strictly after now, or None if the day is spent."""
    for entry in plan.entries:
        if entry.wake_at > now:
            return entry.wake_at
    return None


def next_wake(schedule: Schedule, now: datetime) -> Optional[WakeEntry]:
    """Today's next entry, else the first entry of tomorrow's plan."""
    for day_offset in (0, 1):
        day = now.date() + timedelta(days=day_offset)
        plan = plan_for_day(schedule, day)
        for entry in plan.entries:
            if entry.wake_at > now:
                return entry
    return None


# -- state machine ----------------------------------------------------------

EVENTS = frozenset({
    "boot", "config_received", "alarm_fired", "session_done", "battery_low",
    "battery_recovered", "storage_full", "forced_sleep", "factory_reset",
})


@dataclass(frozen=True)
class Transition:
    from_state: DeviceState
    event: str
    to_state: DeviceState
    actions: tuple[str, ...]


@dataclass
class StepResult:
    state: DeviceState
    transitions: tuple[Transition, ...]
    anomaly: Optional[str] = None

    @property
    def actions(self) -> tuple[str, ...]:
        out: list[str] = []
        for t in self.transitions:
            out.extend(t.actions)
        return tuple(out)


@dataclass
class StateMachine:
    """Flowchart logic: given (state, event, context), what happens next.

    Side effects are returned as action names for the event loop to execute:
    arm_alarm, start_session, finalize_session, abort_session, skip_session,
    persist_config, clear_eeprom.  Undefined (state, event) pairs are explicit
    no-ops reported as anomalies, never silent transitions.
    """

    state: DeviceState = DeviceState.BOOT

    def step(self, event: str, *, jumper_config: bool = False,
             charge_percent: float = 100.0, floor_percent: float = 10.0,
             mode_switch: bool = False) -> StepResult:
        if event not in EVENTS:
            raise ValueError(f"unknown event {event!r}")
        s = self.state

        if event == "forced_sleep":
            actions = ("abort_session", "finalize_partial", "arm_alarm") \
                if s == DeviceState.RECORDING else ("arm_alarm",)
            return self._go(event, DeviceState.SLEEP, actions)

        if event == "storage_full":
            actions = ("abort_session",) if s == DeviceState.RECORDING else ()
            return self._go(event, DeviceState.STORAGE_FULL, actions)

        if event == "boot":
            if s != DeviceState.BOOT:
                return self._anomaly(event)
            if jumper_config:
                return self._go(event, DeviceState.CONFIG_MODE, ())
            return self._go(event, DeviceState.SLEEP, ("arm_alarm",))

        if event == "config_received":
            if s != DeviceState.CONFIG_MODE:
                return self._anomaly(event)
            if mode_switch:
                return self._go(event, DeviceState.SLEEP,
                                ("persist_config", "arm_alarm"))
            return self._go(event, DeviceState.CONFIG_MODE, ("persist_config",))

        if event == "alarm_fired":
            if s == DeviceState.SLEEP:
                if charge_percent >= floor_percent:
                    return self._go(event, DeviceState.RECORDING, ("start_session",))
                # skipped sessions are not rescheduled; the plan proceeds
                return self._go(event, DeviceState.LOW_BATTERY,
                                ("skip_session", "log_low_battery", "arm_alarm"))
            if s == DeviceState.LOW_BATTERY:
                return self._go(event, DeviceState.LOW_BATTERY,
                                ("skip_session", "arm_alarm"))
            return self._anomaly(event)

        if event == "session_done":
            if s != DeviceState.RECORDING:
                return self._anomaly(event)
            t1 = Transition(s, event, DeviceState.WRITING, ("finalize_session",))
            t2 = Transition(DeviceState.WRITING, event, DeviceState.SLEEP,
                            ("arm_alarm",))
            self.state = DeviceState.SLEEP
            return StepResult(self.state, (t1, t2))

        if event == "battery_low":
            if s == DeviceState.SLEEP:
                return self._go(event, DeviceState.LOW_BATTERY, ())
            if s == DeviceState.RECORDING:
                return self._go(event, DeviceState.LOW_BATTERY,
                                ("abort_session", "finalize_partial"))
            return self._anomaly(event)

        if event == "battery_recovered":
            if s == DeviceState.LOW_BATTERY:
                return self._go(event, DeviceState.SLEEP, ("arm_alarm",))
            return self._anomaly(event)

        if event == "factory_reset":
            if s == DeviceState.CONFIG_MODE:
                return self._go(event, DeviceState.CONFIG_MODE,
                                ("clear_eeprom", "restore_defaults"))
            return self._anomaly(event)

        return self._anomaly(event)

    def _go(self, event: str, to: DeviceState, actions: tuple) -> StepResult:
        t = Transition(self.state, event, to, tuple(actions))
        self.state = to
        return StepResult(to, (t,))

    def _anomaly(self, event: str) -> StepResult:
        return StepResult(self.state, (),
                          anomaly=f"event {event!r} ignored in state {self.state.value}")

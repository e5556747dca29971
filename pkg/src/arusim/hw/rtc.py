"""Virtual real-time clock with a single reprogrammable alarm."""

from __future__ import annotations

from datetime import datetime
from typing import Optional


class VirtualRtc:
    """Monotonic virtual clock; one alarm slot, as on the real part.

    Reprogramming before the alarm fires replaces it.  An alarm at time A
    fires during the first advance that reaches or passes A, exactly once,
    and the fire timestamp is A itself (not the step boundary).
    """

    def __init__(self, now: datetime):
        self._now = now
        self._alarm: Optional[datetime] = None

    @property
    def now(self) -> datetime:
        return self._now

    @property
    def alarm(self) -> Optional[datetime]:
        return self._alarm

    def set_time(self, at: datetime) -> None:
        """Operator clock adjustment; the alarm slot is left as programmed."""
        self._now = at

    def set_alarm(self, at: datetime) -> None:
        if at < self._now:
            raise ValueError(f"alarm {at.isoformat()} is in the past "
                             f"(now {self._now.isoformat()})")
        self._alarm = at

    def clear_alarm(self) -> None:
        self._alarm = None

    def advance_to(self, at: datetime) -> Optional[datetime]:
        """Move the clock forward; returns the alarm timestamp if it fired."""
        if at < self._now:
            raise ValueError("time cannot move backwards")
        self._now = at
        if self._alarm is not None and self._alarm <= at:
            fired = self._alarm
            self._alarm = None
            return fired
        return None

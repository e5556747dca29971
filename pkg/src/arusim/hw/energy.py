"""Battery and solar charger model.

Charge is tracked in mAh at a fixed nominal pack voltage (all published
figures for the unit are currents at 7.2 V).  The charger is power-path:
panel current feeds the system load first and the remainder charges the
battery, constant-current up to 95% state of charge, then limited by a linear
taper that reaches zero at 100%.  Inside the taper window charge-vs-time is
exponential toward full.  Integration is piecewise closed-form, so threshold
crossings are timestamped exactly rather than at step boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from ..model import DeviceState

# Measured draws: 200 mA while recording, 179 mA otherwise.  The sleep figure
# is pessimistic (it is the whole non-recording envelope) and configurable.
RECORDING_DRAW_MA = 200.0
IDLE_DRAW_MA = 179.0


def default_draw_table() -> dict[DeviceState, float]:
    return {
        DeviceState.BOOT: IDLE_DRAW_MA,
        DeviceState.CONFIG_MODE: IDLE_DRAW_MA,
        DeviceState.SLEEP: IDLE_DRAW_MA,
        DeviceState.RECORDING: RECORDING_DRAW_MA,
        DeviceState.WRITING: RECORDING_DRAW_MA,
        DeviceState.STORAGE_FULL: IDLE_DRAW_MA,
        DeviceState.LOW_BATTERY: IDLE_DRAW_MA,
    }


@dataclass
class EnergyState:
    battery_capacity_mah: float = 10_400.0
    battery_charge_mah: float = 10_400.0
    nominal_voltage_v: float = 7.2
    panel_watts: float = 10.0
    max_charge_current_ma: float = 2_000.0
    draw_table: dict = field(default_factory=default_draw_table)
    taper_start_soc: float = 0.95
    charge_complete_soc: float = 0.999
    # crossing side-memories so threshold events fire exactly once per crossing
    _complete_latched: Optional[bool] = field(default=None, init=False, repr=False)
    _below_floor: Optional[bool] = field(default=None, init=False, repr=False)
    _floor_used: Optional[float] = field(default=None, init=False, repr=False)

    @property
    def state_of_charge(self) -> float:
        return self.battery_charge_mah / self.battery_capacity_mah

    @property
    def charge_percent(self) -> float:
        return self.state_of_charge * 100.0

    def cc_current_ma(self, irradiance_fraction: float) -> float:
        """Bulk (constant-current) charge current before any taper."""
        raw = self.panel_watts * irradiance_fraction / self.nominal_voltage_v * 1000.0
        return min(raw, self.max_charge_current_ma)

    def solar_charge_current(self, irradiance_fraction: float,
                             state_of_charge: Optional[float] = None) -> float:
        """Deliverable charge current at the given irradiance and state of charge."""
        soc = self.state_of_charge if state_of_charge is None else state_of_charge
        cc = self.cc_current_ma(irradiance_fraction)
        if soc <= self.taper_start_soc:
            return cc
        span = 1.0 - self.taper_start_soc
        return cc * max(0.0, (1.0 - soc) / span)

    def advance(self, state: DeviceState, irradiance_fraction: float,
                max_dt_s: float, floor_percent: float) -> tuple[float, Optional[str]]:
        """Integrate charge for up to ``max_dt_s`` seconds of one device state.

        Stops early at the first externally visible crossing and returns
        (elapsed_seconds, event) where event is one of None, "battery_low",
        "battery_recovered", "battery_empty", "charge_complete".  Callers loop
        until the full interval is consumed.
        """
        if max_dt_s <= 0:
            raise ValueError(f"max_dt_s must be > 0, got {max_dt_s}")
        draw = self.draw_table[state]
        cc = self.cc_current_ma(irradiance_fraction)
        cap = self.battery_capacity_mah
        taper_q = self.taper_start_soc * cap
        complete_q = self.charge_complete_soc * cap
        floor_q = floor_percent / 100.0 * cap
        if self._complete_latched is None:
            self._complete_latched = self.battery_charge_mah >= complete_q
        if self._below_floor is None or self._floor_used != floor_q:
            self._below_floor = self.battery_charge_mah < floor_q
            self._floor_used = floor_q

        elapsed = 0.0
        zero_steps = 0
        while elapsed < max_dt_s:
            remaining = max_dt_s - elapsed
            q = self.battery_charge_mah
            if q < taper_q:
                self._complete_latched = False  # auto-restart hysteresis
            step, event = self._step(q, cc, draw, remaining,
                                     taper_q, complete_q, floor_q, cap)
            elapsed += step
            if event is not None:
                return elapsed, event
            # a zero-length step is only legal while switching regimes
            zero_steps = zero_steps + 1 if step <= 0.0 else 0
            if zero_steps > 4:
                raise RuntimeError("energy integrator stalled without progress")
        return max_dt_s, None

    # -- regime dispatch ---------------------------------------------------

    def _step(self, q, cc, draw, remaining, taper_q, complete_q, floor_q, cap):
        taper_enabled = taper_q < cap
        if cc > draw and taper_enabled:
            alpha = cc / (cap - taper_q)          # mA per mAh of headroom
            charge_knee = cap - (cc - draw) / alpha
            if q >= charge_knee:
                return self._step_exponential(q, alpha, remaining,
                                              complete_q, floor_q, cap)
            return self._step_linear(q, cc - draw, remaining, charge_knee,
                                     complete_q, floor_q, cap)
        return self._step_linear(q, cc - draw, remaining, None,
                                 complete_q, floor_q, cap)

    def _floor_targets_up(self, q, floor_q):
        if self._below_floor and q <= floor_q:
            return [(floor_q, "battery_recovered")]
        return []

    def _step_linear(self, q, net_ma, remaining, silent_up, complete_q, floor_q, cap):
        rate = net_ma / 3600.0  # mAh per second
        if rate > 0:
            cands = self._floor_targets_up(q, floor_q)
            if not self._complete_latched and q < complete_q:
                cands.append((complete_q, "charge_complete"))
            top = silent_up if silent_up is not None else cap
            cands = [(t, e) for t, e in cands if t <= top]
            if silent_up is not None and q < silent_up:
                cands.append((silent_up, "_silent"))
            if not cands:
                self.battery_charge_mah = min(q + rate * remaining, cap)
                return remaining, None
            target, event = min(cands, key=lambda te: te[0])
        elif rate < 0:
            cands = []
            if not self._below_floor and q >= floor_q and floor_q > 0.0:
                cands.append((floor_q, "battery_low"))
            if q > 0.0:
                cands.append((0.0, "battery_empty"))
            if not cands:
                self.battery_charge_mah = max(q + rate * remaining, 0.0)
                return remaining, None
            target, event = max(cands, key=lambda te: te[0])
        else:
            return remaining, None
        t_hit = (target - q) / rate
        if t_hit > remaining:
            self.battery_charge_mah = min(max(q + rate * remaining, 0.0), cap)
            return remaining, None
        self.battery_charge_mah = target
        return t_hit, self._stamp(event)

    def _step_exponential(self, q, alpha, remaining, complete_q, floor_q, cap):
        # battery current is the taper limit alpha*(cap - q): exponential to full
        k = alpha / 3600.0
        headroom = cap - q
        if headroom <= 0.0:
            self.battery_charge_mah = cap
            return remaining, None
        cands = self._floor_targets_up(q, floor_q)
        if not self._complete_latched and q < complete_q:
            cands.append((complete_q, "charge_complete"))
        cands = [(t, e) for t, e in cands if q <= t < cap]
        if not cands:
            self.battery_charge_mah = cap - headroom * math.exp(-k * remaining)
            return remaining, None
        target, event = min(cands, key=lambda te: te[0])
        if target == q:
            t_hit = 0.0
        else:
            t_hit = math.log(headroom / (cap - target)) / k
        if t_hit > remaining:
            self.battery_charge_mah = cap - headroom * math.exp(-k * remaining)
            return remaining, None
        self.battery_charge_mah = target
        return t_hit, self._stamp(event)

    def _stamp(self, event: str) -> Optional[str]:
        if event == "_silent":
            return None
        if event == "battery_low" or event == "battery_empty":
            self._below_floor = True
            return event
        if event == "battery_recovered":
            self._below_floor = False
            return event
        if event == "charge_complete":
            if self._complete_latched:
                return None
            self._complete_latched = True
            return event
        return event

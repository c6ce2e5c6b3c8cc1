"""Four-level device power model, DRX idle cycles and battery lifetime."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

from .errors import ValidationError

__all__ = [
    "RadioState",
    "PowerModel",
    "DrxConfig",
    "EnergyLedger",
    "NegativeDuration",
    "InvalidConfig",
    "ZeroConsumption",
    "dbm_to_mw",
    "accrue",
    "idle_cycle_energy",
    "battery_lifetime",
    "MS_PER_DAY",
]

MS_PER_DAY = 86_400_000


class NegativeDuration(ValueError):
    pass


class InvalidConfig(ValidationError):
    pass


class ZeroConsumption(ValueError):
    pass


class RadioState(str, Enum):
    INACTIVE = "inactive"
    IDLE = "idle"
    RX = "rx"
    TX = "tx"


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


@dataclass(frozen=True)
class PowerModel:
    """Power draw per radio state, in mW.

    The defaults are illustrative. Transmit draw is ``p_tx_base_mw`` plus the
    radiated power divided by ``pa_efficiency``; 23 dBm gives about 250 mW.
    """

    p_inactive_mw: float = 0.01
    p_idle_mw: float = 1.0
    p_rx_mw: float = 50.0
    p_tx_base_mw: float = 50.0
    pa_efficiency: float = 1.0

    def __post_init__(self):
        for name in ("p_inactive_mw", "p_idle_mw", "p_rx_mw", "p_tx_base_mw"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"power.{name}", "must be >= 0")
        if not self.pa_efficiency > 0:
            raise InvalidConfig("power.pa_efficiency", "must be > 0")
        if not (self.p_inactive_mw <= self.p_idle_mw <= self.p_rx_mw <= self.p_tx_base_mw):
            warnings.warn("power levels are not ordered inactive <= idle <= rx <= tx", stacklevel=3)

    def tx_mw(self, tx_power_dbm: float) -> float:
        return self.p_tx_base_mw + dbm_to_mw(tx_power_dbm) / self.pa_efficiency

    def power_mw(self, state: RadioState, tx_power_dbm: float | None = None) -> float:
        if state is RadioState.TX:
            if tx_power_dbm is None:
                raise ValueError("Tx accrual needs a transmit power")
            return self.tx_mw(tx_power_dbm)
        if state is RadioState.RX:
            return self.p_rx_mw
        if state is RadioState.IDLE:
            return self.p_idle_mw
        return self.p_inactive_mw


@dataclass(frozen=True)
class DrxConfig:
    """Idle-mode paging cycle: listen for ``on_duration_ms`` every ``paging_cycle_ms``.

    ``enabled`` switches idle-mode accounting on in the simulator; the closed
    forms below ignore it.
    """

    paging_cycle_ms: int = 2560
    on_duration_ms: int = 10
    wakeup_overhead_mj: float = 2.0
    enabled: bool = False

    def __post_init__(self):
        if self.paging_cycle_ms < 1 or self.on_duration_ms < 1:
            raise InvalidConfig("drx.paging_cycle_ms", "paging cycle and on-duration must be positive")
        if self.on_duration_ms > self.paging_cycle_ms:
            raise InvalidConfig("drx.on_duration_ms", "must not exceed paging_cycle_ms")
        if self.wakeup_overhead_mj < 0:
            raise InvalidConfig("drx.wakeup_overhead_mj", "must be >= 0")


@dataclass
class EnergyLedger:
    """Accumulated energy (mJ) per radio state, plus wake-up overheads."""

    power: PowerModel = field(default_factory=PowerModel)
    inactive: float = 0.0
    idle: float = 0.0
    rx: float = 0.0
    tx: float = 0.0
    wakeup: float = 0.0
    trace: list | None = None

    @property
    def total(self) -> float:
        return self.inactive + self.idle + self.rx + self.tx + self.wakeup

    def as_dict(self) -> dict[str, float]:
        return {
            "inactive": self.inactive,
            "idle": self.idle,
            "rx": self.rx,
            "tx": self.tx,
            "wakeup": self.wakeup,
        }


def accrue(
    ledger: EnergyLedger,
    state: RadioState,
    duration_ms: float,
    tx_power_dbm: float | None = None,
    now: int | None = None,
) -> EnergyLedger:
    """Add ``power(state) * duration`` to the ledger (mW * ms = uJ, stored as mJ)."""
    if duration_ms < 0:
        raise NegativeDuration(f"duration {duration_ms} ms")
    if duration_ms == 0:
        return ledger
    mj = ledger.power.power_mw(state, tx_power_dbm) * duration_ms * 1e-3
    setattr(ledger, state.value, getattr(ledger, state.value) + mj)
    if ledger.trace is not None:
        ledger.trace.append((now, state.value, duration_ms))
    return ledger


def _cycle_energy(drx: DrxConfig, power: PowerModel) -> float:
    on = drx.on_duration_ms
    off = drx.paging_cycle_ms - on
    return (on * power.p_rx_mw + off * power.p_inactive_mw) * 1e-3 + drx.wakeup_overhead_mj


def idle_cycle_energy(drx: DrxConfig, power: PowerModel, horizon_ms: float) -> float:
    """Idle-mode energy (mJ) over ``horizon_ms``, each cycle opening with its on-duration.

    A trailing partial cycle pays its wake-up and as much on-duration as fits.
    """
    if horizon_ms < drx.paging_cycle_ms:
        raise InvalidConfig("horizon_ms", f"{horizon_ms} ms is shorter than one paging cycle")
    cycles = math.floor(horizon_ms / drx.paging_cycle_ms)
    rem = horizon_ms - cycles * drx.paging_cycle_ms
    energy = cycles * _cycle_energy(drx, power)
    if rem > 0:
        on = min(rem, drx.on_duration_ms)
        energy += (on * power.p_rx_mw + (rem - on) * power.p_inactive_mw) * 1e-3
        energy += drx.wakeup_overhead_mj
    return energy


def battery_lifetime(daily_energy_mj: float, battery_mj: float) -> float:
    """Days until ``battery_mj`` is exhausted at ``daily_energy_mj`` per day."""
    if not daily_energy_mj > 0:
        raise ZeroConsumption("daily energy must be positive")
    return battery_mj / daily_energy_mj

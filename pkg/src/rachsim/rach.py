"""PRACH four-step random access: device state machine and eNB opportunity logic.

A device walks Inactive -> (PreBackoff) -> AwaitingOpportunity -> WaitingRar ->
SendingMsg3 -> WaitingMsg4 -> Succeeded, falling back to AwaitingOpportunity
after a uniform backoff on every failed attempt and ending in Failed once
``max_preamble_tx`` preambles have been spent.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import NamedTuple, Sequence

from .energy import EnergyLedger, RadioState
from .errors import check
from .kernel import Event, EventKind, RngStream
from .traffic import PriorityClass

__all__ = [
    "DetectionModel",
    "CollisionModel",
    "RetxMode",
    "PrachConfig",
    "EabConfig",
    "RachState",
    "Device",
    "Outcome",
    "OpportunityResult",
    "Transition",
    "IllegalTransition",
    "InvalidPreamble",
    "ModeNotEnabled",
    "eab_gate",
    "select_preamble",
    "enb_process_opportunity",
    "msg1_retx_decision",
    "retx_probability",
    "advance_device",
    "preamble_tx_power_dbm",
    "clean_access_delay",
    "clean_access_energy",
]


class IllegalTransition(RuntimeError):
    """An event reached a device in a state where it cannot occur."""


class InvalidPreamble(ValueError):
    pass


class ModeNotEnabled(RuntimeError):
    pass


class DetectionModel(str, Enum):
    RAMPING_EXPONENTIAL = "ramping_exponential"
    ALWAYS_DETECTED = "always_detected"


class CollisionModel(str, Enum):
    COLLIDE_AT_MSG3 = "collide_at_msg3"
    DESTROYED_AT_MSG1 = "destroyed_at_msg1"


class RetxMode(str, Enum):
    FIXED = "fixed"
    ENB_BROADCAST = "enb_broadcast"
    LOCAL_ESTIMATE = "local_estimate"


@dataclass(frozen=True)
class PrachConfig:
    """Random-access parameters; defaults follow the TR 37.868 evaluation setup.

    Timers are in subframes. ``rar_grant_capacity_per_opportunity = 0`` means
    unlimited. Persistent-probability mode is on when ``msg1_retx_probability``
    is set or ``retx_probability_mode`` is not ``fixed``.
    """

    num_preambles: int = 54
    prach_period_sf: int = 5
    backoff_indicator_ms: int = 20
    pre_backoff_ms: int = 0
    max_preamble_tx: int = 10
    rar_response_delay_sf: int = 3
    rar_window_sf: int = 5
    msg2_to_msg3_delay_sf: int = 5
    msg4_delay_sf: int = 5
    contention_resolution_timer_sf: int = 48
    grant_delay_sf: int = 4
    power_ramping_step_db: float = 2.0
    preamble_initial_power_dbm: float = 10.0
    max_tx_power_dbm: float = 23.0
    detection_model: DetectionModel = DetectionModel.RAMPING_EXPONENTIAL
    collision_model: CollisionModel = CollisionModel.COLLIDE_AT_MSG3
    msg1_retx_probability: float | None = None
    retx_probability_mode: RetxMode = RetxMode.FIXED
    retx_backlog_estimate: int = 0
    retx_probability_scale: float = 1.0
    rar_grant_capacity_per_opportunity: int = 0
    preamble_split: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "detection_model", DetectionModel(self.detection_model))
        object.__setattr__(self, "collision_model", CollisionModel(self.collision_model))
        object.__setattr__(self, "retx_probability_mode", RetxMode(self.retx_probability_mode))
        check(self.num_preambles >= 1, "prach.num_preambles", "must be >= 1")
        check(self.prach_period_sf >= 1, "prach.prach_period_sf", "must be >= 1")
        check(self.backoff_indicator_ms >= 0, "prach.backoff_indicator_ms", "must be >= 0")
        check(self.pre_backoff_ms >= 0, "prach.pre_backoff_ms", "must be >= 0")
        check(self.max_preamble_tx >= 1, "prach.max_preamble_tx", "must be >= 1")
        for key in ("rar_response_delay_sf", "rar_window_sf", "msg2_to_msg3_delay_sf",
                    "msg4_delay_sf", "contention_resolution_timer_sf", "grant_delay_sf"):
            check(getattr(self, key) >= 1, f"prach.{key}", "must be >= 1")
        check(self.contention_resolution_timer_sf >= self.msg4_delay_sf,
              "prach.contention_resolution_timer_sf", "must be >= msg4_delay_sf")
        check(self.power_ramping_step_db >= 0, "prach.power_ramping_step_db", "must be >= 0")
        if self.msg1_retx_probability is not None:
            check(0 < self.msg1_retx_probability <= 1, "prach.msg1_retx_probability", "must lie in (0, 1]")
        check(self.retx_probability_scale > 0, "prach.retx_probability_scale", "must be > 0")
        if self.retx_probability_mode is RetxMode.LOCAL_ESTIMATE:
            check(self.retx_backlog_estimate >= 1, "prach.retx_backlog_estimate",
                  "must be >= 1 in local_estimate mode")
        check(self.rar_grant_capacity_per_opportunity >= 0,
              "prach.rar_grant_capacity_per_opportunity", "must be >= 0 (0 = unlimited)")
        check(0 <= self.preamble_split < 1, "prach.preamble_split", "must lie in [0, 1)")
        if self.preamble_split > 0:
            check(1 <= self.high_priority_preambles < self.num_preambles, "prach.preamble_split",
                  "must leave at least one preamble in each partition")

    @property
    def persistent(self) -> bool:
        return self.msg1_retx_probability is not None or self.retx_probability_mode is not RetxMode.FIXED

    @property
    def high_priority_preambles(self) -> int:
        return int(round(self.preamble_split * self.num_preambles))


@dataclass(frozen=True)
class EabConfig:
    """Access barring gate applied to the first Msg1 of an access procedure."""

    enabled: bool = False
    barring_factor: float = 0.5
    barring_time_ms: int = 4000
    applies_to: frozenset = field(default_factory=lambda: frozenset({PriorityClass.LOW}))

    def __post_init__(self):
        object.__setattr__(self, "applies_to", frozenset(PriorityClass(c) for c in self.applies_to))
        check(0.0 <= self.barring_factor <= 1.0, "eab.barring_factor", "must lie in [0, 1]")
        check(self.barring_time_ms >= 1, "eab.barring_time_ms", "must be >= 1")


class RachState(IntEnum):
    INACTIVE = 0
    BARRED = 1
    PRE_BACKOFF = 2
    AWAITING_OPPORTUNITY = 3
    WAITING_RAR = 4
    SENDING_MSG3 = 5
    WAITING_MSG4 = 6
    SUCCEEDED = 7
    FAILED = 8


RADIO_OF = {
    RachState.INACTIVE: RadioState.INACTIVE,
    RachState.BARRED: RadioState.IDLE,
    RachState.PRE_BACKOFF: RadioState.IDLE,
    RachState.AWAITING_OPPORTUNITY: RadioState.IDLE,
    RachState.WAITING_RAR: RadioState.RX,
    RachState.SENDING_MSG3: RadioState.IDLE,
    RachState.WAITING_MSG4: RadioState.RX,
    RachState.SUCCEEDED: RadioState.INACTIVE,
    RachState.FAILED: RadioState.INACTIVE,
}

_HOLDS_PREAMBLE = (RachState.WAITING_RAR, RachState.SENDING_MSG3, RachState.WAITING_MSG4)


class Device:
    """One M2M terminal: protocol state, counters and energy ledger."""

    __slots__ = (
        "id", "pclass", "population", "stream", "ledger",
        "state", "attempt_n", "preamble", "backoff_until", "activation_time",
        "success_time", "end_time", "state_since", "eab_admitted", "msg4_ok",
        "n_msg1", "n_msg2", "n_msg3", "n_msg4", "procedures", "pending",
        "data_phase", "cobalt_tx", "cobalt_collisions", "path_started",
        "radio", "payload", "acked", "delivered_time",
    )

    def __init__(self, dev_id: int, pclass: PriorityClass, stream: RngStream, ledger: EnergyLedger,
                 population: int = 0):
        self.id = dev_id
        self.pclass = pclass
        self.population = population
        self.stream = stream
        self.ledger = ledger
        self.state = RachState.INACTIVE
        self.attempt_n = 0
        self.preamble: int | None = None
        self.backoff_until: int | None = None
        self.activation_time = -1
        self.success_time: int | None = None
        self.end_time: int | None = None
        self.state_since = 0
        self.eab_admitted = False
        self.msg4_ok = False
        self.n_msg1 = self.n_msg2 = self.n_msg3 = self.n_msg4 = 0
        self.procedures = 0
        self.pending = 0
        self.data_phase = False
        self.cobalt_tx = 0
        self.cobalt_collisions = 0
        self.path_started = -1
        self.radio = RadioState.INACTIVE
        self.payload = False
        self.acked = False
        self.delivered_time: int | None = None

    def start_procedure(self, now: int) -> None:
        self.state = RachState.INACTIVE
        self.attempt_n = 0
        self.preamble = None
        self.backoff_until = None
        self.activation_time = now
        self.success_time = None
        self.end_time = None
        self.eab_admitted = False
        self.msg4_ok = False
        self.n_msg1 = self.n_msg2 = self.n_msg3 = self.n_msg4 = 0
        self.data_phase = False
        self.delivered_time = None
        self.procedures += 1

    def check_invariants(self, max_preamble_tx: int) -> None:
        assert 0 <= self.attempt_n <= max_preamble_tx, (self.id, self.attempt_n)
        assert (self.preamble is not None) == (self.state in _HOLDS_PREAMBLE), (self.id, self.state)
        if self.success_time is not None:
            assert self.success_time >= self.activation_time

    def __repr__(self) -> str:
        return f"Device({self.id}, {self.state.name}, attempt={self.attempt_n})"


# eNB side -------------------------------------------------------------------


class Outcome(IntEnum):
    RAR_GRANTED = 0
    NOT_DETECTED = 1
    COLLISION_DESTROYED = 2


@dataclass
class OpportunityResult:
    outcomes: list[Outcome]
    collided: list[bool]
    used_preambles: int
    collided_preambles: int

    @property
    def successes(self) -> int:
        """Transmissions granted on a singleton preamble."""
        return sum(1 for o, c in zip(self.outcomes, self.collided) if o is Outcome.RAR_GRANTED and not c)


def select_preamble(num_preambles: int, stream: RngStream, offset: int = 0) -> int:
    """Uniform preamble index in ``[offset, offset + num_preambles)``."""
    return offset + stream.draw_uniform(num_preambles)


def enb_process_opportunity(
    transmissions: Sequence[tuple[int, int, int]],
    cfg: PrachConfig,
    stream: RngStream,
) -> OpportunityResult:
    """Resolve one RACH opportunity.

    ``transmissions`` holds ``(device_id, preamble, attempt_n)`` tuples. Singleton
    preambles are detected with probability ``1 - exp(-attempt_n)`` under ramping
    detection. Under CollideAtMsg3 every collider gets a grant (and later fails
    contention resolution); under DestroyedAtMsg1 colliders get nothing. With a
    finite grant capacity, detected preambles are served in index order and the
    rest are reported NotDetected.
    """
    m = cfg.num_preambles
    counts: Counter[int] = Counter()
    attempt_of: dict[int, int] = {}
    for _, pre, attempt in transmissions:
        if not 0 <= pre < m:
            raise InvalidPreamble(f"preamble {pre} outside [0, {m})")
        counts[pre] += 1
        attempt_of[pre] = attempt

    ramping = cfg.detection_model is DetectionModel.RAMPING_EXPONENTIAL
    destroyed = cfg.collision_model is CollisionModel.DESTROYED_AT_MSG1
    detected: dict[int, bool] = {}
    for pre in sorted(counts):
        if counts[pre] > 1:
            detected[pre] = not destroyed
        elif ramping:
            detected[pre] = stream.random() < 1.0 - math.exp(-attempt_of[pre])
        else:
            detected[pre] = True

    cap = cfg.rar_grant_capacity_per_opportunity
    if cap:
        served = [pre for pre in sorted(counts) if detected[pre]]
        for pre in served[cap:]:
            detected[pre] = False

    outcomes = []
    collided = []
    for _, pre, _ in transmissions:
        multi = counts[pre] > 1
        collided.append(multi)
        if multi and destroyed:
            outcomes.append(Outcome.COLLISION_DESTROYED)
        elif detected[pre]:
            outcomes.append(Outcome.RAR_GRANTED)
        else:
            outcomes.append(Outcome.NOT_DETECTED)
    n_coll = sum(1 for c in counts.values() if c > 1)
    return OpportunityResult(outcomes, collided, len(counts), n_coll)


def eab_gate(device: Device, cfg: EabConfig, stream: RngStream) -> int | None:
    """``None`` if admitted, otherwise the barring delay in ms.

    Barred devices wait ``barring_time_ms * (0.7 + 0.6 u)``.
    """
    if not cfg.enabled or device.pclass not in cfg.applies_to or cfg.barring_factor >= 1.0:
        return None
    if stream.random() < cfg.barring_factor:
        return None
    return max(1, int(cfg.barring_time_ms * (0.7 + 0.6 * stream.random())))


def retx_probability(cfg: PrachConfig, backlog: int | None = None) -> float:
    """Transmit probability used in persistent mode (``M / U`` heuristics included)."""
    mode = cfg.retx_probability_mode
    if mode is RetxMode.ENB_BROADCAST:
        if backlog is None:
            raise ValueError("enb_broadcast mode needs the current backlog")
        return min(1.0, cfg.retx_probability_scale * cfg.num_preambles / max(1, backlog))
    if mode is RetxMode.LOCAL_ESTIMATE:
        return min(1.0, cfg.retx_probability_scale * cfg.num_preambles / cfg.retx_backlog_estimate)
    if cfg.msg1_retx_probability is None:
        raise ModeNotEnabled("persistent-probability mode is not configured")
    return cfg.msg1_retx_probability


def msg1_retx_decision(cfg: PrachConfig, stream: RngStream, backlog: int | None = None) -> bool:
    """True to transmit at this opportunity, False to defer by one opportunity."""
    if not cfg.persistent:
        raise ModeNotEnabled("persistent-probability mode is not configured")
    p = retx_probability(cfg, backlog)
    return p >= 1.0 or stream.random() < p


def preamble_tx_power_dbm(cfg: PrachConfig, attempt_n: int) -> float:
    return min(cfg.max_tx_power_dbm, cfg.preamble_initial_power_dbm + (attempt_n - 1) * cfg.power_ramping_step_db)


def clean_access_delay(cfg: PrachConfig) -> int:
    """Activation-to-Msg4 delay for a first-attempt success at an opportunity boundary."""
    return cfg.rar_response_delay_sf + cfg.msg2_to_msg3_delay_sf + cfg.msg4_delay_sf


def clean_access_energy(cfg: PrachConfig, power, with_data: bool = False) -> float:
    """Energy (mJ) of a first-attempt success, optionally followed by the uplink data burst.

    Timeline: Msg1 (1 ms Tx at the initial preamble power), Rx until the RAR,
    idle until Msg3, Msg3 (1 ms Tx at full power), Rx until Msg4; with data,
    Rx for the grant delay and a 1 ms Tx at full power.
    """
    rx, idle = power.p_rx_mw, power.p_idle_mw
    full = power.tx_mw(cfg.max_tx_power_dbm)
    e = power.tx_mw(preamble_tx_power_dbm(cfg, 1)) * 1
    e += rx * (cfg.rar_response_delay_sf - 1)
    e += idle * cfg.msg2_to_msg3_delay_sf
    e += full * 1
    e += rx * (cfg.msg4_delay_sf - 1)
    if with_data:
        e += rx * cfg.grant_delay_sf + full * 1
    return e * 1e-3


# Device side ----------------------------------------------------------------


class Transition(NamedTuple):
    state: RachState
    events: list  # (earliest_time, EventKind); RACH_OPPORTUNITY means "join the next opportunity"
    energy: list  # (RadioState, duration_ms, tx_power_dbm | None)


def _elapsed(device: Device, now: int) -> tuple:
    return (device.radio, max(0, now - device.state_since), None)


def _fail_or_backoff(device: Device, cfg: PrachConfig, now: int, events: list) -> RachState:
    device.preamble = None
    if device.attempt_n >= cfg.max_preamble_tx:
        device.end_time = now
        return RachState.FAILED
    backoff = device.stream.randint(0, cfg.backoff_indicator_ms) if cfg.backoff_indicator_ms else 0
    if backoff:
        device.backoff_until = now + backoff
        events.append((now + backoff, EventKind.BACKOFF_EXPIRY))
    else:
        device.backoff_until = None
        events.append((now, EventKind.RACH_OPPORTUNITY))
    return RachState.AWAITING_OPPORTUNITY


def advance_device(
    device: Device,
    event: Event | EventKind,
    cfg: PrachConfig,
    stream: RngStream | None = None,
    now: int | None = None,
    *,
    eab: EabConfig | None = None,
    backlog: int | None = None,
    outcome: Outcome | None = None,
) -> Transition:
    """Apply one event to ``device`` and return what the kernel must do next.

    The device is mutated in place. For ``RACH_OPPORTUNITY`` the caller collects
    ``device.preamble`` from every device that ended in WaitingRar and resolves
    them together with :func:`enb_process_opportunity`; the per-device verdict
    arrives later as ``RAR_RECEIVED`` or ``RAR_DEADLINE``.
    """
    kind = event.kind if isinstance(event, Event) else EventKind(event)
    if now is None:
        now = event.fire_time if isinstance(event, Event) else 0
    stream = stream or device.stream
    st = device.state
    events: list = []
    energy: list = [_elapsed(device, now)]
    since = now

    if kind is EventKind.DEVICE_ACTIVATION:
        if st not in (RachState.INACTIVE, RachState.SUCCEEDED, RachState.FAILED):
            raise IllegalTransition(f"{device!r} activated while busy")
        device.start_procedure(now)
        if cfg.pre_backoff_ms:
            wait = stream.randint(0, cfg.pre_backoff_ms)
            if wait:
                device.backoff_until = now + wait
                events.append((now + wait, EventKind.BACKOFF_EXPIRY))
                new = RachState.PRE_BACKOFF
            else:
                events.append((now, EventKind.RACH_OPPORTUNITY))
                new = RachState.AWAITING_OPPORTUNITY
        else:
            events.append((now, EventKind.RACH_OPPORTUNITY))
            new = RachState.AWAITING_OPPORTUNITY

    elif kind is EventKind.BACKOFF_EXPIRY or kind is EventKind.BARRING_EXPIRY:
        expected = RachState.BARRED if kind is EventKind.BARRING_EXPIRY else None
        if expected is not None and st is not expected:
            raise IllegalTransition(f"{device!r} got {kind.name}")
        if st not in (RachState.PRE_BACKOFF, RachState.AWAITING_OPPORTUNITY, RachState.BARRED):
            raise IllegalTransition(f"{device!r} got {kind.name}")
        device.backoff_until = None
        events.append((now, EventKind.RACH_OPPORTUNITY))
        new = RachState.AWAITING_OPPORTUNITY

    elif kind is EventKind.RACH_OPPORTUNITY:
        if st is not RachState.AWAITING_OPPORTUNITY:
            raise IllegalTransition(f"{device!r} at an opportunity")
        new = RachState.AWAITING_OPPORTUNITY
        barred_for = None
        if eab is not None and not device.eab_admitted:
            barred_for = eab_gate(device, eab, stream)
            if barred_for is None:
                device.eab_admitted = True
        if barred_for is not None:
            events.append((now + barred_for, EventKind.BARRING_EXPIRY))
            new = RachState.BARRED
        elif cfg.persistent and not msg1_retx_decision(cfg, stream, backlog):
            events.append((now + 1, EventKind.RACH_OPPORTUNITY))
        else:
            device.attempt_n += 1
            device.n_msg1 += 1
            split = cfg.high_priority_preambles
            if split and device.pclass is PriorityClass.HIGH:
                device.preamble = select_preamble(split, stream)
            elif split:
                device.preamble = select_preamble(cfg.num_preambles - split, stream, offset=split)
            else:
                device.preamble = select_preamble(cfg.num_preambles, stream)
            energy.append((RadioState.TX, 1, preamble_tx_power_dbm(cfg, device.attempt_n)))
            since = now + 1
            new = RachState.WAITING_RAR

    elif kind is EventKind.RAR_RECEIVED:
        if st is not RachState.WAITING_RAR:
            raise IllegalTransition(f"{device!r} got a RAR")
        device.n_msg2 += 1
        events.append((now + cfg.msg2_to_msg3_delay_sf, EventKind.MSG3_TX))
        new = RachState.SENDING_MSG3

    elif kind is EventKind.RAR_DEADLINE:
        if st is not RachState.WAITING_RAR:
            raise IllegalTransition(f"{device!r} hit a RAR deadline")
        new = _fail_or_backoff(device, cfg, now, events)

    elif kind is EventKind.MSG3_TX:
        if st is not RachState.SENDING_MSG3:
            raise IllegalTransition(f"{device!r} sending Msg3")
        device.n_msg3 += 1
        energy.append((RadioState.TX, 1, cfg.max_tx_power_dbm))
        since = now + 1
        if outcome is Outcome.RAR_GRANTED or (outcome is None and device.msg4_ok):
            events.append((now + cfg.msg4_delay_sf, EventKind.MSG4_RECEIVED))
        else:
            events.append((now + cfg.contention_resolution_timer_sf, EventKind.MSG4_DEADLINE))
        new = RachState.WAITING_MSG4

    elif kind is EventKind.MSG4_RECEIVED:
        if st is not RachState.WAITING_MSG4:
            raise IllegalTransition(f"{device!r} got Msg4")
        device.n_msg4 += 1
        device.preamble = None
        device.success_time = now
        device.end_time = now
        new = RachState.SUCCEEDED

    elif kind is EventKind.MSG4_DEADLINE:
        if st is not RachState.WAITING_MSG4:
            raise IllegalTransition(f"{device!r} hit the contention resolution timer")
        new = _fail_or_backoff(device, cfg, now, events)

    else:
        raise IllegalTransition(f"{kind.name} is not a RACH event")

    device.state = new
    device.radio = RADIO_OF[new]
    device.state_since = since
    return Transition(new, events, energy)

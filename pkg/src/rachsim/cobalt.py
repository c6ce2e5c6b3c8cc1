"""Contention-based small-data transmission on a reserved PUSCH region.

Devices with a pending payload pick one resource block of the region uniformly
at the next region TTI. A block chosen by exactly one device is delivered and
acknowledged; a block chosen by several is lost for all of them (no capture),
and each collider backs off uniformly in ``[0, retry_backoff_ms]`` before the
next try. After ``max_retries`` collided retries the payload is exhausted and,
if configured, handed to the legacy RACH path.

Signaling is counted as 6 messages for a clean legacy delivery (Msg1-Msg4,
uplink grant, data) and 2 for a clean contention-region delivery (data, ack).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import NamedTuple, Sequence

import numpy as np

from .energy import RadioState
from .errors import ValidationError, check
from .kernel import EventKind
from .rach import Device, IllegalTransition, PrachConfig, Transition

__all__ = [
    "CobaltConfig",
    "CellTag",
    "FrameMap",
    "RegionOverflow",
    "NoPendingData",
    "CobaltOutcome",
    "CobaltResult",
    "Path",
    "DeliveryOutcome",
    "build_frame_map",
    "cobalt_transmit",
    "advance_cobalt",
    "signaling_message_count",
]


class RegionOverflow(ValidationError):
    pass


class NoPendingData(RuntimeError):
    pass


@dataclass(frozen=True)
class CobaltConfig:
    region_rbs_per_tti: int = 4
    tti_period_sf: int = 1
    max_retries: int = 5
    retry_backoff_ms: int = 10
    payload_fits_one_rb: bool = True
    ack_delay_sf: int = 4
    fallback_to_legacy: bool = True
    bandwidth_rbs: int = 25
    pucch_rbs_per_edge: int = 2
    prach_rbs: int = 6

    def __post_init__(self):
        check(self.region_rbs_per_tti >= 1, "cobalt.region_rbs_per_tti", "must be >= 1")
        check(self.tti_period_sf >= 1, "cobalt.tti_period_sf", "must be >= 1")
        check(self.max_retries >= 1, "cobalt.max_retries", "must be >= 1")
        check(self.retry_backoff_ms >= 0, "cobalt.retry_backoff_ms", "must be >= 0")
        check(self.payload_fits_one_rb, "cobalt.payload_fits_one_rb", "multi-RB payloads are not supported")
        check(self.ack_delay_sf >= 1, "cobalt.ack_delay_sf", "must be >= 1")
        free = self.bandwidth_rbs - 2 * self.pucch_rbs_per_edge - self.prach_rbs
        if self.region_rbs_per_tti > free:
            raise RegionOverflow("cobalt.region_rbs_per_tti",
                                 f"{self.region_rbs_per_tti} RBs requested, {free} free")


# Frame map -------------------------------------------------------------------


class CellTag(IntEnum):
    PUSCH_H2H = 0
    PUCCH = 1
    PRACH = 2
    PUSCH_COBALT = 3


@dataclass
class FrameMap:
    """Subframe x resource-block grid of channel tags."""

    grid: np.ndarray

    @property
    def window_sf(self) -> int:
        return self.grid.shape[0]

    @property
    def bandwidth_rbs(self) -> int:
        return self.grid.shape[1]

    def count(self, tag: CellTag) -> int:
        return int(np.count_nonzero(self.grid == tag))

    def counts(self) -> dict[str, int]:
        return {t.name: self.count(t) for t in CellTag}

    def render(self) -> str:
        glyph = {CellTag.PUSCH_H2H: ".", CellTag.PUCCH: "C", CellTag.PRACH: "R", CellTag.PUSCH_COBALT: "M"}
        rows = []
        for rb in range(self.bandwidth_rbs - 1, -1, -1):
            rows.append("".join(glyph[CellTag(v)] for v in self.grid[:, rb]))
        return "\n".join(rows)


def build_frame_map(
    bandwidth_rbs: int,
    prach_cfg: PrachConfig,
    cobalt_cfg: CobaltConfig | None = None,
    *,
    pucch_rbs_per_edge: int = 2,
    prach_rbs: int = 6,
    window_sf: int | None = None,
) -> FrameMap:
    """Lay out PUCCH band edges, periodic PRACH, the contention region and H2H PUSCH.

    PUCCH fills ``pucch_rbs_per_edge`` RBs at each band edge in every subframe.
    PRACH sits just above the lower PUCCH edge in subframes ``t % prach_period == 0``;
    the contention region sits just below the upper PUCCH edge in subframes
    ``t % tti_period == 0``. Everything else is H2H PUSCH.
    """
    region = cobalt_cfg.region_rbs_per_tti if cobalt_cfg is not None else 0
    free = bandwidth_rbs - 2 * pucch_rbs_per_edge - prach_rbs
    if free < 0:
        raise RegionOverflow("bandwidth_rbs", f"{bandwidth_rbs} RBs cannot hold PUCCH and PRACH")
    if region > free:
        raise RegionOverflow("cobalt.region_rbs_per_tti", f"{region} RBs requested, {free} free")
    if window_sf is None:
        window_sf = prach_cfg.prach_period_sf
        if cobalt_cfg is not None:
            window_sf = math.lcm(window_sf, cobalt_cfg.tti_period_sf)
    grid = np.full((window_sf, bandwidth_rbs), CellTag.PUSCH_H2H, dtype=np.int8)
    if pucch_rbs_per_edge:
        grid[:, :pucch_rbs_per_edge] = CellTag.PUCCH
        grid[:, bandwidth_rbs - pucch_rbs_per_edge:] = CellTag.PUCCH
    lo = pucch_rbs_per_edge
    grid[:: prach_cfg.prach_period_sf, lo: lo + prach_rbs] = CellTag.PRACH
    if region:
        hi = bandwidth_rbs - pucch_rbs_per_edge
        grid[:: cobalt_cfg.tti_period_sf, hi - region: hi] = CellTag.PUSCH_COBALT
    return FrameMap(grid)


# Contention-region transmission ---------------------------------------------


class CobaltOutcome(IntEnum):
    DELIVERED = 0
    COLLISION_RETRY = 1
    EXHAUSTED = 2


class CobaltResult(NamedTuple):
    outcome: CobaltOutcome
    rb: int
    at: int | None
    backoff_ms: int | None


def cobalt_transmit(devices: Sequence[Device], cfg: CobaltConfig, now: int) -> dict[int, CobaltResult]:
    """Resolve one region TTI for every device holding a payload.

    Each device draws its RB from its own stream. Delivered results carry the
    delivery subframe (end of the 1 ms transmission); collision results carry the
    drawn retry backoff, or EXHAUSTED when the retry budget is spent.
    """
    picks = []
    for d in devices:
        if not d.payload:
            raise NoPendingData(f"device {d.id} has nothing to send")
        picks.append(d.stream.draw_uniform(cfg.region_rbs_per_tti))
    load = Counter(picks)
    out = {}
    for d, rb in zip(devices, picks):
        if load[rb] == 1:
            out[d.id] = CobaltResult(CobaltOutcome.DELIVERED, rb, now + 1, None)
        elif d.cobalt_collisions + 1 > cfg.max_retries:
            out[d.id] = CobaltResult(CobaltOutcome.EXHAUSTED, rb, None, None)
        else:
            backoff = d.stream.randint(0, cfg.retry_backoff_ms) if cfg.retry_backoff_ms else 0
            out[d.id] = CobaltResult(CobaltOutcome.COLLISION_RETRY, rb, None, backoff)
    return out


def advance_cobalt(
    device: Device,
    kind: EventKind,
    cfg: CobaltConfig,
    now: int,
    *,
    result: CobaltResult | None = None,
    tx_power_dbm: float = 23.0,
) -> Transition:
    """Device side of the contention region, mirroring :func:`rach.advance_device`.

    Returns a :class:`Transition` whose ``state`` field is the device's radio
    state; ``COBALT_OPPORTUNITY`` in ``events`` means "join the next region TTI".
    """
    events: list = []
    energy: list = [(device.radio, max(0, now - device.state_since), None)]
    since = now
    if kind is EventKind.DEVICE_ACTIVATION:
        if device.payload:
            raise IllegalTransition(f"{device!r} already holds a payload")
        device.payload = True
        device.cobalt_tx = 0
        device.cobalt_collisions = 0
        device.acked = False
        device.delivered_time = None
        device.path_started = now
        events.append((now, EventKind.COBALT_OPPORTUNITY))
        radio = RadioState.IDLE
    elif kind is EventKind.COBALT_OPPORTUNITY:
        if result is None:
            raise IllegalTransition("region TTI without a resolution result")
        device.cobalt_tx += 1
        energy.append((RadioState.TX, 1, tx_power_dbm))
        since = now + 1
        device.acked = result.outcome is CobaltOutcome.DELIVERED
        if device.acked:
            device.delivered_time = result.at
        events.append((now + cfg.ack_delay_sf, EventKind.COBALT_ACK))
        radio = RadioState.RX
    elif kind is EventKind.COBALT_ACK:
        if device.acked:
            device.payload = False
            radio = RadioState.INACTIVE
        else:
            device.cobalt_collisions += 1
            if device.cobalt_collisions > cfg.max_retries:
                device.payload = False
                radio = RadioState.INACTIVE
            else:
                backoff = result.backoff_ms if result is not None else 0
                if backoff:
                    events.append((now + backoff, EventKind.BACKOFF_EXPIRY))
                else:
                    events.append((now, EventKind.COBALT_OPPORTUNITY))
                radio = RadioState.IDLE
    elif kind is EventKind.BACKOFF_EXPIRY:
        events.append((now, EventKind.COBALT_OPPORTUNITY))
        radio = RadioState.IDLE
    else:
        raise IllegalTransition(f"{kind.name} is not a contention-region event")
    device.radio = radio
    device.state_since = since
    return Transition(radio, events, energy)


# Signaling -------------------------------------------------------------------


class Path(str, Enum):
    LEGACY_RACH = "legacy"
    COBALT = "cobalt"


@dataclass(frozen=True)
class DeliveryOutcome:
    """Message counters of one completed delivery."""

    msg1: int = 1
    msg2: int = 1
    msg3: int = 1
    msg4: int = 1
    collisions: int = 0


def signaling_message_count(path: Path | str, outcome: DeliveryOutcome = DeliveryOutcome()) -> int:
    """Uplink plus downlink messages spent on one delivery."""
    path = Path(path)
    if path is Path.COBALT:
        return 2 + outcome.collisions
    return outcome.msg1 + outcome.msg2 + outcome.msg3 + outcome.msg4 + 2

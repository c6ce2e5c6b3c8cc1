"""Cell-level simulation: devices, eNB opportunity aggregation and metrics collection."""

from __future__ import annotations

from collections import Counter, defaultdict

import numpy as np

from .cobalt import (
    CobaltOutcome,
    DeliveryOutcome,
    Path,
    advance_cobalt,
    cobalt_transmit,
    signaling_message_count,
)
from .energy import EnergyLedger, RadioState
from .kernel import Event, EventKind, Kernel, RngStream
from .rach import (
    CollisionModel,
    DetectionModel,
    Device,
    Outcome,
    RachState,
    Transition,
    advance_device,
    clean_access_delay,
    enb_process_opportunity,
    preamble_tx_power_dbm,
    retx_probability,
)
from .report import MetricsReport, build_report
from .scenario import Mode, Scenario
from .traffic import next_data_arrival, sample_activation_times

__all__ = ["Simulation", "simulate", "CELL_STREAM", "DEVICE_STREAM", "TRAFFIC_STREAM", "ARRIVAL_STREAM"]

CELL_STREAM = 0
DEVICE_STREAM = 1
TRAFFIC_STREAM = 2
# recurring arrivals get their own per-device stream so that the offered
# traffic is identical whichever access path (legacy or contention region) runs
ARRIVAL_STREAM = 3

_PER_DEVICE_RACH = frozenset({
    EventKind.RAR_RECEIVED, EventKind.RAR_DEADLINE, EventKind.MSG3_TX, EventKind.MSG4_RECEIVED,
    EventKind.MSG4_DEADLINE, EventKind.BARRING_EXPIRY,
})


class Simulation:
    """One seeded run of a :class:`Scenario`.

    Events addressed to several devices at once carry a list of ids; the
    devices are processed in list order, which is deterministic.
    """

    def __init__(self, scenario: Scenario, seed: int | None = None, trace: bool = False,
                 slot_synchronous: bool = True):
        self.sc = scenario
        self.seed = scenario.seed if seed is None else int(seed)
        self.trace = trace
        self.kernel = Kernel()
        self.cell = RngStream(self.seed, (CELL_STREAM,))
        self.cfg = scenario.prach
        self.eab = scenario.eab if scenario.eab.enabled else None
        self.drx_on = scenario.drx.enabled
        self.mode = scenario.mode
        self.devices: list[Device] = []
        self.models = []
        self._rach_buckets: dict[int, list[Device]] = {}
        self._rach_done = -1
        self._cobalt_buckets: dict[int, list[Device]] = {}
        self._cobalt_done = -1
        self._batches: dict[tuple[int, EventKind], Event] = {}
        self._cobalt_results: dict[int, object] = {}
        self._tx_cache: dict[float, float] = {}
        self._arrivals: dict[int, RngStream] = {}

        # metrics
        self.records: list[tuple] = []  # (device, class, success, delay, msg1, end_time)
        self.deliveries: list[tuple] = []  # (device, path, latency, signaling)
        self.payloads = 0
        self.cobalt_exhausted = 0
        self.opp_log: list[tuple] = []  # (t, contenders, transmitters, successes, used, collided)
        self.cobalt_log: list[tuple] = []  # (t, transmitters, delivered, used_rbs, collided_rbs)
        self.backlog_log: list[tuple] = []
        self._active = 0
        self._end = scenario.duration_sf
        self._slot_span = self._slot_synchronous_span() if slot_synchronous else None
        self._slot_mw: dict | None = None
        self._ramp_mw: dict[int, float] = {}
        self._build()

    # setup ----------------------------------------------------------------

    def _build(self) -> None:
        sc = self.sc
        k = self.kernel
        dev_id = 0
        for pi, pop in enumerate(sc.populations):
            model = pop.traffic
            self.models.append(model)
            stream = RngStream(self.seed, (TRAFFIC_STREAM, pi))
            if sc.mode is Mode.ANALYTIC_COMPARE:
                times = np.zeros(pop.n, dtype=np.int64)
            else:
                times = sample_activation_times(model, pop.n, stream)
            groups: dict[int, list[int]] = defaultdict(list)
            for t in times.tolist():
                d = Device(dev_id, pop.pclass, None, EnergyLedger(sc.power, trace=[] if self.trace else None), pi)
                self.devices.append(d)
                groups[t].append(dev_id)
                dev_id += 1
            for t in sorted(groups):
                k.at(t, EventKind.DEVICE_ACTIVATION, groups[t])
        if self.drx_on and self.devices:
            k.at(0, EventKind.PAGING_OCCASION, None)
        if sc.measure_period_sf:
            k.at(0, EventKind.MEASUREMENT_TICK, None)

    # scheduling helpers ---------------------------------------------------

    def _stream(self, d: Device) -> RngStream:
        if d.stream is None:
            d.stream = RngStream(self.seed, (DEVICE_STREAM, d.id))
        return d.stream

    def _defer(self, t: int, kind: EventKind, dev_id: int) -> None:
        """Schedule a per-device event, folding it into a pending batch for the same (t, kind)."""
        if t > self.kernel.now:
            ev = self._batches.get((t, kind))
            if ev is not None:
                ev.target.append(dev_id)
                return
            ev = self.kernel.at(t, kind, [dev_id])
            self._batches[(t, kind)] = ev
        else:
            self.kernel.at(t, kind, [dev_id])

    def _join_rach(self, d: Device, earliest: int) -> None:
        period = self.cfg.prach_period_sf
        t = -(-earliest // period) * period
        if t <= self._rach_done:
            t = self._rach_done + period
        bucket = self._rach_buckets.get(t)
        if bucket is None:
            self._rach_buckets[t] = [d]
            self.kernel.at(t, EventKind.RACH_OPPORTUNITY, None)
        else:
            bucket.append(d)

    def _join_cobalt(self, d: Device, earliest: int) -> None:
        period = self.sc.cobalt.tti_period_sf
        t = -(-earliest // period) * period
        if t <= self._cobalt_done:
            t = self._cobalt_done + period
        bucket = self._cobalt_buckets.get(t)
        if bucket is None:
            self._cobalt_buckets[t] = [d]
            self.kernel.at(t, EventKind.COBALT_OPPORTUNITY, None)
        else:
            bucket.append(d)

    def _accrue(self, d: Device, radio: RadioState, dur: int, dbm, now: int) -> None:
        if dur <= 0 or (radio is RadioState.INACTIVE and not self.drx_on):
            return
        ledger = d.ledger
        mj = ledger.power.power_mw(radio, dbm) * dur * 1e-3
        if radio is RadioState.TX:
            ledger.tx += mj
        elif radio is RadioState.RX:
            ledger.rx += mj
        elif radio is RadioState.IDLE:
            ledger.idle += mj
        else:
            ledger.inactive += mj
        if ledger.trace is not None:
            ledger.trace.append((now, radio.value, dur))

    def _apply(self, d: Device, tr: Transition, now: int) -> None:
        for radio, dur, dbm in tr.energy:
            self._accrue(d, radio, dur, dbm, now)
        for t, kind in tr.events:
            if kind is EventKind.RACH_OPPORTUNITY:
                self._join_rach(d, t)
            elif kind is EventKind.COBALT_OPPORTUNITY:
                self._join_cobalt(d, t)
            else:
                self._defer(t, kind, d.id)

    # dispatch -------------------------------------------------------------

    def dispatch(self, ev: Event) -> None:
        kind = ev.kind
        now = ev.fire_time
        if self._batches.get((now, kind)) is ev:
            del self._batches[(now, kind)]
        if kind is EventKind.RACH_OPPORTUNITY:
            self._on_rach_opportunity(now)
        elif kind in _PER_DEVICE_RACH:
            for i in ev.target:
                self._rach_step(self.devices[i], kind, now)
        elif kind is EventKind.BACKOFF_EXPIRY:
            for i in ev.target:
                d = self.devices[i]
                if d.payload:
                    self._apply(d, advance_cobalt(d, kind, self.sc.cobalt, now), now)
                else:
                    self._rach_step(d, kind, now)
        elif kind is EventKind.DEVICE_ACTIVATION:
            for i in ev.target:
                self._on_activation(self.devices[i], now)
        elif kind is EventKind.DATA_TX:
            for i in ev.target:
                self._on_data_tx(self.devices[i], now)
        elif kind is EventKind.COBALT_OPPORTUNITY:
            self._on_cobalt_opportunity(now)
        elif kind is EventKind.COBALT_ACK:
            for i in ev.target:
                self._on_cobalt_ack(self.devices[i], now)
        elif kind is EventKind.PAGING_OCCASION:
            self._on_paging(now)
        elif kind is EventKind.MEASUREMENT_TICK:
            self.backlog_log.append((now, self._active))
            # stop sampling once nothing is in progress and nothing else is queued
            if self._active or len(self.kernel):
                self.kernel.at(now + self.sc.measure_period_sf, EventKind.MEASUREMENT_TICK, None)

    def _rach_step(self, d: Device, kind: EventKind, now: int) -> None:
        tr = advance_device(d, kind, self.cfg, d.stream, now)
        self._apply(d, tr, now)
        if tr.state is RachState.SUCCEEDED:
            self._on_success(d, now)
        elif tr.state is RachState.FAILED:
            self._on_failure(d, now)

    # handlers ---------------------------------------------------------------

    def _on_activation(self, d: Device, now: int) -> None:
        self._stream(d)
        model = self.models[d.population]
        self.payloads += self.mode in (Mode.CONNECTED_MODE, Mode.COBALT)
        if not model.one_shot and self.mode is not Mode.ANALYTIC_COMPARE:
            arrivals = self._arrivals.get(d.id)
            if arrivals is None:
                arrivals = self._arrivals[d.id] = RngStream(self.seed, (ARRIVAL_STREAM, d.id))
            nxt = next_data_arrival(model, now, arrivals)
            if nxt <= self.sc.duration_sf:
                self._defer(nxt, EventKind.DEVICE_ACTIVATION, d.id)
        if self._busy(d):
            d.pending += 1
            return
        self._start(d, now)

    def _busy(self, d: Device) -> bool:
        return d.payload or d.data_phase or d.state not in (
            RachState.INACTIVE, RachState.SUCCEEDED, RachState.FAILED)

    def _start(self, d: Device, now: int) -> None:
        self._active += 1
        if self.mode is Mode.COBALT:
            self._apply(d, advance_cobalt(d, EventKind.DEVICE_ACTIVATION, self.sc.cobalt, now), now)
            return
        tr = advance_device(d, EventKind.DEVICE_ACTIVATION, self.cfg, d.stream, now)
        d.path_started = now
        self._apply(d, tr, now)

    def _finish(self, d: Device, now: int) -> None:
        self._active -= 1
        if d.pending:
            d.pending -= 1
            self._start(d, now)

    def _on_success(self, d: Device, now: int) -> None:
        self.records.append((d.id, d.pclass, True, now - d.activation_time, d.n_msg1, now))
        if self.mode is Mode.CONNECTED_MODE or d.data_phase or self.mode is Mode.COBALT:
            d.data_phase = True
            d.radio = RadioState.RX
            d.state_since = now
            self._defer(now + self.cfg.grant_delay_sf, EventKind.DATA_TX, d.id)
            return
        if self.mode is Mode.ANALYTIC_COMPARE and self.sc.saturated:
            self._active -= 1
            self._start(d, now)
            return
        self._finish(d, now)

    def _on_failure(self, d: Device, now: int) -> None:
        self.records.append((d.id, d.pclass, False, now - d.activation_time, d.n_msg1, now))
        d.data_phase = False
        self._finish(d, now)

    def _on_data_tx(self, d: Device, now: int) -> None:
        tr = Transition(d.state, [], [(d.radio, max(0, now - d.state_since), None),
                                     (RadioState.TX, 1, self.cfg.max_tx_power_dbm)])
        self._apply(d, tr, now)
        d.radio = RadioState.INACTIVE
        d.state_since = now + 1
        d.data_phase = False
        d.delivered_time = now + 1
        outcome = DeliveryOutcome(d.n_msg1, d.n_msg2, d.n_msg3, d.n_msg4)
        signaling = signaling_message_count(Path.LEGACY_RACH, outcome) + d.cobalt_tx
        self.deliveries.append((d.id, Path.LEGACY_RACH, now + 1 - d.path_started, signaling))
        d.cobalt_tx = 0
        self._finish(d, now)

    def _on_rach_opportunity(self, now: int) -> None:
        if self._slot_span is not None and now + self._slot_span <= self._end:
            self._resolve_slot(now)
            return
        bucket = self._rach_buckets.pop(now, [])
        self._rach_done = now
        backlog = len(bucket)
        cfg = self.cfg
        eab = self.eab
        txs = []
        tx_devs = []
        for d in bucket:
            tr = advance_device(d, EventKind.RACH_OPPORTUNITY, cfg, d.stream, now, eab=eab, backlog=backlog)
            self._apply(d, tr, now)
            if tr.state is RachState.WAITING_RAR:
                txs.append((d.id, d.preamble, d.attempt_n))
                tx_devs.append(d)
        if not txs:
            self.opp_log.append((now, backlog, 0, 0, 0, 0))
            return
        res = enb_process_opportunity(txs, cfg, self.cell)
        granted = []
        lost = []
        successes = 0
        for d, out, coll in zip(tx_devs, res.outcomes, res.collided):
            if out is Outcome.RAR_GRANTED:
                d.msg4_ok = not coll
                successes += not coll
                granted.append(d.id)
            else:
                lost.append(d.id)
        if granted:
            self.kernel.at(now + cfg.rar_response_delay_sf, EventKind.RAR_RECEIVED, granted)
        if lost:
            self.kernel.at(now + cfg.rar_response_delay_sf + cfg.rar_window_sf, EventKind.RAR_DEADLINE, lost)
        self.opp_log.append((now, backlog, len(txs), successes, res.used_preambles, res.collided_preambles))


    # slot-synchronous resolution -------------------------------------------

    def _slot_synchronous_span(self) -> int | None:
        """Handshake span if every opportunity can be resolved in one step, else None.

        This holds in analytic-comparable runs: colliders are lost at Msg1,
        singletons are always detected, retries need no backoff draw and the
        whole handshake ends before the next opportunity. The outcome of each
        opportunity then depends only on the Msg1 draws, and the follow-up
        timeline is fixed, so :meth:`_resolve_slot` applies it directly with
        the same per-device state changes, energy accruals and ordering as
        the event-by-event path.
        """
        sc, cfg = self.sc, self.cfg
        if sc.mode is not Mode.ANALYTIC_COMPARE or self.eab is not None or self.drx_on:
            return None
        if not (cfg.persistent and cfg.collision_model is CollisionModel.DESTROYED_AT_MSG1
                and cfg.detection_model is DetectionModel.ALWAYS_DETECTED):
            return None
        if cfg.backoff_indicator_ms or cfg.pre_backoff_ms or cfg.rar_grant_capacity_per_opportunity:
            return None
        if cfg.high_priority_preambles or sc.measure_period_sf % cfg.prach_period_sf:
            return None
        span = max(clean_access_delay(cfg), cfg.rar_response_delay_sf + cfg.rar_window_sf)
        return span if span < cfg.prach_period_sf else None

    def _book(self, d: Device, radio: RadioState, dur: int, mw: float, now: int) -> None:
        """Lean :meth:`_accrue` for the slot-synchronous path (power already looked up)."""
        led = d.ledger
        mj = mw * dur * 1e-3
        if radio is RadioState.TX:
            led.tx += mj
        elif radio is RadioState.RX:
            led.rx += mj
        elif radio is RadioState.IDLE:
            led.idle += mj
        else:
            led.inactive += mj
        if led.trace is not None:
            led.trace.append((now, radio.value, dur))

    def _resolve_slot(self, now: int) -> None:
        cfg = self.cfg
        mw = self._slot_mw
        if mw is None:
            power = self.sc.power
            mw = self._slot_mw = {r: power.power_mw(r) for r in (RadioState.IDLE, RadioState.RX, RadioState.INACTIVE)}
        book = self._book
        ramp = self._ramp_mw
        bucket = self._rach_buckets.pop(now, [])
        self._rach_done = now
        nxt: list[Device] = []
        backlog = len(bucket)
        p = retx_probability(cfg, backlog)
        m = cfg.num_preambles
        tx_devs = []
        for d in bucket:
            dur = now - d.state_since
            if dur > 0:
                book(d, d.radio, dur, mw[d.radio], now)
            if p < 1.0 and not d.stream.random() < p:
                d.state_since = now
                nxt.append(d)
                continue
            d.attempt_n += 1
            d.n_msg1 += 1
            d.preamble = d.stream.py.randrange(m)  # select_preamble without the call overhead
            tx_mw = ramp.get(d.attempt_n)
            if tx_mw is None:
                tx_mw = ramp[d.attempt_n] = self._tx_mw(preamble_tx_power_dbm(cfg, d.attempt_n))
            book(d, RadioState.TX, 1, tx_mw, now)
            d.state = RachState.WAITING_RAR
            d.radio = RadioState.RX
            d.state_since = now + 1
            tx_devs.append(d)
        if tx_devs:
            # singletons are always detected and colliders lost, so the eNB draws nothing
            counts = Counter(d.preamble for d in tx_devs)
            won = [d for d in tx_devs if counts[d.preamble] == 1]
            lost = [d for d in tx_devs if counts[d.preamble] > 1]
            collided = sum(1 for c in counts.values() if c > 1)
            self.opp_log.append((now, backlog, len(tx_devs), len(won), len(counts), collided))
        else:
            won = lost = []
            self.opp_log.append((now, backlog, 0, 0, 0, 0))

        t_lost = now + cfg.rar_response_delay_sf + cfg.rar_window_sf
        t_rar = now + cfg.rar_response_delay_sf
        t_msg3 = t_rar + cfg.msg2_to_msg3_delay_sf
        t_done = t_msg3 + cfg.msg4_delay_sf
        msg3_mw = self._tx_mw(cfg.max_tx_power_dbm)
        rx_mw, idle_mw = mw[RadioState.RX], mw[RadioState.IDLE]
        for d in won:
            d.msg4_ok = True
            d.n_msg2 += 1
            d.n_msg3 += 1
            d.n_msg4 += 1
            led = d.ledger
            if led.trace is None:
                # same arithmetic as _book, without the dispatch
                if t_rar > d.state_since:
                    led.rx += rx_mw * (t_rar - d.state_since) * 1e-3
                led.idle += idle_mw * (t_msg3 - t_rar) * 1e-3
                led.tx += msg3_mw * 1 * 1e-3
                if t_done > t_msg3 + 1:
                    led.rx += rx_mw * (t_done - (t_msg3 + 1)) * 1e-3
                continue
            if t_rar > d.state_since:
                book(d, RadioState.RX, t_rar - d.state_since, rx_mw, t_rar)
            book(d, RadioState.IDLE, t_msg3 - t_rar, idle_mw, t_msg3)
            book(d, RadioState.TX, 1, msg3_mw, t_msg3)
            if t_done > t_msg3 + 1:
                book(d, RadioState.RX, t_done - (t_msg3 + 1), rx_mw, t_done)
        # the deadline event was queued before Msg4 was, so it goes first on a tie
        if t_lost <= t_done:
            self._slot_lost(lost, t_lost, nxt, mw[RadioState.RX])
            self._slot_won(won, t_done, nxt)
        else:
            self._slot_won(won, t_done, nxt)
            self._slot_lost(lost, t_lost, nxt, mw[RadioState.RX])
        if nxt:
            t = now + cfg.prach_period_sf
            bucket = self._rach_buckets.get(t)
            if bucket is None:
                self._rach_buckets[t] = nxt
                self.kernel.at(t, EventKind.RACH_OPPORTUNITY, None)
            else:
                bucket.extend(nxt)

    def _tx_mw(self, dbm: float) -> float:
        mw = self._tx_cache.get(dbm)
        if mw is None:
            mw = self._tx_cache[dbm] = self.sc.power.power_mw(RadioState.TX, dbm)
        return mw

    def _slot_won(self, won: list[Device], t: int, nxt: list[Device]) -> None:
        restart = self.sc.saturated
        records = self.records
        for d in won:
            d.preamble = None
            d.success_time = d.end_time = t
            records.append((d.id, d.pclass, True, t - d.activation_time, d.n_msg1, t))
            if restart:
                # same as _start: a fresh procedure joins the next opportunity
                d.start_procedure(t)
                d.state = RachState.AWAITING_OPPORTUNITY
                d.radio = RadioState.IDLE
                d.state_since = t
                d.path_started = t
                nxt.append(d)
            else:
                d.state = RachState.SUCCEEDED
                d.radio = RadioState.INACTIVE
                d.state_since = t
                self._finish(d, t)

    def _slot_lost(self, lost: list[Device], t: int, nxt: list[Device], rx_mw: float) -> None:
        cfg = self.cfg
        for d in lost:
            if t > d.state_since:
                self._book(d, RadioState.RX, t - d.state_since, rx_mw, t)
            d.preamble = None
            d.state_since = t
            if d.attempt_n >= cfg.max_preamble_tx:
                d.end_time = t
                d.state = RachState.FAILED
                d.radio = RadioState.INACTIVE
                self._on_failure(d, t)
            else:
                d.backoff_until = None
                d.state = RachState.AWAITING_OPPORTUNITY
                d.radio = RadioState.IDLE
                nxt.append(d)

    def _on_cobalt_opportunity(self, now: int) -> None:
        bucket = self._cobalt_buckets.pop(now, [])
        self._cobalt_done = now
        if not bucket:
            return
        cfg = self.sc.cobalt
        results = cobalt_transmit(bucket, cfg, now)
        rbs = Counter(r.rb for r in results.values())
        delivered = 0
        for d in bucket:
            r = results[d.id]
            self._cobalt_results[d.id] = r
            delivered += r.outcome is CobaltOutcome.DELIVERED
            tr = advance_cobalt(d, EventKind.COBALT_OPPORTUNITY, cfg, now, result=r,
                                tx_power_dbm=self.cfg.max_tx_power_dbm)
            self._apply(d, tr, now)
        self.cobalt_log.append((now, len(bucket), delivered, len(rbs), sum(1 for c in rbs.values() if c > 1)))

    def _on_cobalt_ack(self, d: Device, now: int) -> None:
        cfg = self.sc.cobalt
        r = self._cobalt_results.pop(d.id)
        tr = advance_cobalt(d, EventKind.COBALT_ACK, cfg, now, result=r)
        self._apply(d, tr, now)
        if d.acked:
            self.deliveries.append((d.id, Path.COBALT, d.delivered_time - d.path_started,
                                    signaling_message_count(Path.COBALT, DeliveryOutcome(collisions=d.cobalt_collisions))))
            d.cobalt_tx = 0
            self._finish(d, now)
        elif not d.payload:
            self.cobalt_exhausted += 1
            if cfg.fallback_to_legacy:
                started = d.path_started
                spent = d.cobalt_tx
                tr = advance_device(d, EventKind.DEVICE_ACTIVATION, self.cfg, d.stream, now)
                d.path_started = started
                d.cobalt_tx = spent
                d.data_phase = True
                self._apply(d, tr, now)
            else:
                d.cobalt_tx = 0
                self._finish(d, now)

    def _on_paging(self, now: int) -> None:
        drx = self.sc.drx
        end = self.sc.duration_sf
        on = min(drx.on_duration_ms, end - now)
        for d in self.devices:
            if d.radio is not RadioState.INACTIVE or d.state_since > now:
                continue
            led = d.ledger
            led.inactive += (now - d.state_since) * led.power.p_inactive_mw * 1e-3
            led.rx += on * led.power.p_rx_mw * 1e-3
            led.wakeup += drx.wakeup_overhead_mj
            if led.trace is not None:
                led.trace.append((now, "paging", on))
            d.state_since = now + on
        nxt = now + drx.paging_cycle_ms
        if nxt < end:
            self.kernel.at(nxt, EventKind.PAGING_OCCASION, None)

    # run ------------------------------------------------------------------

    def run_until(self, end: int | None = None) -> MetricsReport:
        end = self.sc.duration_sf if end is None else int(end)
        self._end = end
        self.kernel.run_until(end, self.dispatch)
        self._close_ledgers(end)
        return build_report(self, end)

    def _close_ledgers(self, end: int) -> None:
        for d in self.devices:
            dur = end - d.state_since
            if dur <= 0:
                continue
            if d.radio is RadioState.INACTIVE and not self.drx_on:
                continue
            led = d.ledger
            mw = led.power.power_mw(d.radio, self.cfg.max_tx_power_dbm)
            setattr(led, d.radio.value, getattr(led, d.radio.value) + mw * dur * 1e-3)
            d.state_since = end


def simulate(scenario: Scenario, seed: int | None = None, trace: bool = False, end: int | None = None) -> MetricsReport:
    """Run ``scenario`` to its horizon (or ``end``) and return the report."""
    return Simulation(scenario, seed=seed, trace=trace).run_until(end)

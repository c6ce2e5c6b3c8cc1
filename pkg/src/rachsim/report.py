"""Per-run metrics and their CSV/JSON serialisation.

Column order is fixed by :data:`COLUMNS`; see the metrics dictionary in the
README for the meaning of every column.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Sequence

import numpy as np

from .scenario import Mode, dump_scenario, flatten_scenario

if TYPE_CHECKING:
    from .simulator import Simulation

__all__ = ["MetricsReport", "COLUMNS", "build_report", "emit_report", "report_rows", "IoError"]


class IoError(OSError):
    pass


COLUMNS = (
    "scenario",
    "seed",
    "mode",
    "devices",
    "activations",
    "successes",
    "failures",
    "censored",
    "access_success_probability",
    "success_probability_high",
    "success_probability_low",
    "collision_probability",
    "access_delay_mean_ms",
    "access_delay_p50_ms",
    "access_delay_p95_ms",
    "access_delay_p99_ms",
    "preamble_tx_hist",
    "msg1_transmissions",
    "opportunities",
    "energy_mean_mj",
    "energy_p95_mj",
    "energy_total_mj",
    "payloads",
    "delivered",
    "signaling_per_payload",
    "energy_per_payload_mj",
    "delivery_latency_mean_ms",
    "delivery_latency_p95_ms",
    "cobalt_delivered",
    "cobalt_exhausted",
    "cobalt_collision_probability",
    "slot_success_mean",
    "slot_success_se",
    "drain_slots",
    "mean_delay_slots",
    "events_processed",
)

NAN = float("nan")


@dataclass
class MetricsReport:
    """Aggregates of one run. Only the fields in :data:`COLUMNS` are serialised as rows."""

    scenario: str = ""
    seed: int = 0
    mode: str = ""
    devices: int = 0
    activations: int = 0
    successes: int = 0
    failures: int = 0
    censored: int = 0
    access_success_probability: float = NAN
    success_probability_high: float = NAN
    success_probability_low: float = NAN
    collision_probability: float = NAN
    access_delay_mean_ms: float = NAN
    access_delay_p50_ms: float = NAN
    access_delay_p95_ms: float = NAN
    access_delay_p99_ms: float = NAN
    preamble_tx_hist: dict = field(default_factory=dict)
    msg1_transmissions: int = 0
    opportunities: int = 0
    energy_mean_mj: float = NAN
    energy_p95_mj: float = NAN
    energy_total_mj: float = 0.0
    payloads: int = 0
    delivered: int = 0
    signaling_per_payload: float = NAN
    energy_per_payload_mj: float = NAN
    delivery_latency_mean_ms: float = NAN
    delivery_latency_p95_ms: float = NAN
    cobalt_delivered: int = 0
    cobalt_exhausted: int = 0
    cobalt_collision_probability: float = NAN
    slot_success_mean: float = NAN
    slot_success_se: float = NAN
    drain_slots: float = NAN
    mean_delay_slots: float = NAN
    events_processed: int = 0

    header: dict = field(default_factory=dict, repr=False)
    point: dict = field(default_factory=dict)
    delays: np.ndarray | None = field(default=None, repr=False)
    device_energy: np.ndarray | None = field(default=None, repr=False)
    ledger_totals: dict = field(default_factory=dict, repr=False)
    opp_log: list = field(default_factory=list, repr=False)
    backlog_log: list = field(default_factory=list, repr=False)
    device_records: list | None = field(default=None, repr=False)

    def row(self) -> dict[str, Any]:
        return {c: getattr(self, c) for c in COLUMNS}

    def check_invariants(self) -> None:
        assert self.successes + self.failures + self.censored == self.activations
        for name in ("access_success_probability", "collision_probability",
                     "success_probability_high", "success_probability_low"):
            v = getattr(self, name)
            assert math.isnan(v) or 0.0 <= v <= 1.0, (name, v)
        q = [self.access_delay_p50_ms, self.access_delay_p95_ms, self.access_delay_p99_ms]
        if not any(math.isnan(x) for x in q):
            assert q[0] <= q[1] <= q[2]
        if self.ledger_totals:
            parts = sum(v for k, v in self.ledger_totals.items() if k != "total")
            assert math.isclose(parts, self.ledger_totals["total"], rel_tol=1e-12, abs_tol=1e-12)


def _ratio(a: float, b: float) -> float:
    return a / b if b else NAN


def _pct(x: np.ndarray, q: float) -> float:
    return float(np.percentile(x, q)) if len(x) else NAN


def build_report(sim: "Simulation", end: int) -> MetricsReport:
    sc = sim.sc
    rep = MetricsReport(scenario=sc.name, seed=sim.seed, mode=sc.mode.value, devices=len(sim.devices))
    rep.events_processed = sim.kernel.processed
    rep.header = {"scenario": flatten_scenario(_with_seed(sc, sim.seed)),
                  "scenario_toml": dump_scenario(_with_seed(sc, sim.seed)),
                  "end_sf": end}

    recs = sim.records
    rep.activations = sum(d.procedures for d in sim.devices)
    rep.successes = sum(1 for r in recs if r[2])
    rep.failures = len(recs) - rep.successes
    rep.censored = rep.activations - rep.successes - rep.failures
    rep.access_success_probability = _ratio(rep.successes, rep.successes + rep.failures)
    for cls_name in ("high", "low"):
        ok = sum(1 for r in recs if r[1].value == cls_name and r[2])
        n = sum(1 for r in recs if r[1].value == cls_name)
        setattr(rep, f"success_probability_{cls_name}", _ratio(ok, n))
    delays = np.array([r[3] for r in recs if r[2]], dtype=float)
    rep.delays = delays
    if len(delays):
        rep.access_delay_mean_ms = float(delays.mean())
        rep.access_delay_p50_ms = _pct(delays, 50)
        rep.access_delay_p95_ms = _pct(delays, 95)
        rep.access_delay_p99_ms = _pct(delays, 99)
    hist: dict[int, int] = {}
    for r in recs:
        hist[r[4]] = hist.get(r[4], 0) + 1
    rep.preamble_tx_hist = dict(sorted(hist.items()))

    opp = sim.opp_log
    rep.opportunities = len(opp)
    rep.msg1_transmissions = sum(o[2] for o in opp)
    used = sum(o[4] for o in opp)
    rep.collision_probability = _ratio(sum(o[5] for o in opp), used)

    energy = np.array([d.ledger.total for d in sim.devices], dtype=float)
    rep.device_energy = energy
    if len(energy):
        rep.energy_mean_mj = float(energy.mean())
        rep.energy_p95_mj = _pct(energy, 95)
    rep.energy_total_mj = float(energy.sum())
    totals = {k: float(sum(getattr(d.ledger, k) for d in sim.devices))
              for k in ("inactive", "idle", "rx", "tx", "wakeup")}
    totals["total"] = rep.energy_total_mj
    rep.ledger_totals = totals

    if sc.mode in (Mode.CONNECTED_MODE, Mode.COBALT):
        rep.payloads = sim.payloads
        dl = sim.deliveries
        rep.delivered = len(dl)
        rep.signaling_per_payload = _ratio(sum(x[3] for x in dl), len(dl))
        rep.energy_per_payload_mj = _ratio(rep.energy_total_mj, len(dl))
        lat = np.array([x[2] for x in dl], dtype=float)
        if len(lat):
            rep.delivery_latency_mean_ms = float(lat.mean())
            rep.delivery_latency_p95_ms = _pct(lat, 95)
    if sc.mode is Mode.COBALT:
        rep.cobalt_delivered = sum(1 for x in sim.deliveries if x[1].value == "cobalt")
        rep.cobalt_exhausted = sim.cobalt_exhausted
        clog = sim.cobalt_log
        rep.cobalt_collision_probability = _ratio(sum(c[4] for c in clog), sum(c[3] for c in clog))

    if sc.mode is Mode.ANALYTIC_COMPARE and opp:
        period = sc.prach.prach_period_sf
        frac = np.array([o[3] / o[1] for o in opp if o[1]], dtype=float)
        if len(frac):
            rep.slot_success_mean = float(frac.mean())
            rep.slot_success_se = float(frac.std(ddof=1) / math.sqrt(len(frac))) if len(frac) > 1 else NAN
        if not sc.saturated and rep.successes == rep.activations and rep.activations:
            first = opp[0][0]
            last = max(o[0] for o in opp if o[3])
            rep.drain_slots = float((last - first) // period + 1)
            lag = sc.prach.rar_response_delay_sf + sc.prach.msg2_to_msg3_delay_sf + sc.prach.msg4_delay_sf
            slots = (delays - lag) // period + 1
            rep.mean_delay_slots = float(slots.mean())

    rep.opp_log = list(opp)
    rep.backlog_log = list(sim.backlog_log)
    if sim.trace:
        rep.device_records = [
            {"id": d.id, "class": d.pclass.value, "state": d.state.name, "attempts": d.attempt_n,
             "activation": d.activation_time, "success": d.success_time, "procedures": d.procedures,
             "energy_mj": d.ledger.total, **{f"energy_{k}_mj": v for k, v in d.ledger.as_dict().items()}}
            for d in sim.devices
        ]
    return rep


def _with_seed(sc, seed):
    from dataclasses import replace

    return sc if sc.seed == seed else replace(sc, seed=seed)


# Serialisation ----------------------------------------------------------------


def _cell(v: Any) -> str:
    if isinstance(v, dict):
        return ";".join(f"{k}:{n}" for k, n in v.items())
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _jsonable(v: Any) -> Any:
    if isinstance(v, float) and math.isnan(v):
        return None
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def report_rows(reports: Sequence[MetricsReport]) -> tuple[list[str], list[dict]]:
    axes: list[str] = []
    for r in reports:
        for k in r.point:
            if k not in axes:
                axes.append(k)
    columns = (["point"] + axes if axes else []) + list(COLUMNS)
    rows = []
    for r in reports:
        if r.devices == 0 and not r.point:
            continue
        row = {}
        if axes:
            row["point"] = r.point.get("point", "")
            for k in axes:
                if k != "point":
                    row[k] = r.point.get(k, "")
        row.update(r.row())
        rows.append(row)
    columns = [c for c in columns if c != "point" or axes]
    if "point" in axes:
        columns.remove("point")
        columns.insert(0, "point")
    seen = set()
    columns = [c for c in columns if not (c in seen or seen.add(c))]
    return columns, rows


def emit_report(
    report: MetricsReport | Sequence[MetricsReport],
    fmt: str = "csv",
    path: str | os.PathLike | None = None,
) -> str:
    """Serialise one report (or a sweep's list of reports) and write it to ``path``.

    The effective scenario of the first report is echoed as a header: ``# ``
    prefixed TOML lines in CSV, a ``header`` object in JSON. A run with no
    devices yields a header-only CSV. Returns the serialised text.
    """
    reports = [report] if isinstance(report, MetricsReport) else list(report)
    columns, rows = report_rows(reports)
    header = reports[0].header if reports else {}
    if fmt == "csv":
        buf = io.StringIO()
        for line in header.get("scenario_toml", "").splitlines():
            buf.write(f"# {line}\n" if line else "#\n")
        w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _cell(v) for k, v in row.items()})
        text = buf.getvalue()
    elif fmt == "json":
        doc = {"header": header, "columns": columns,
               "rows": [{k: _jsonable(v) for k, v in row.items()} for row in rows]}
        traced = [r.device_records for r in reports if r.device_records is not None]
        if traced:
            doc["devices"] = traced[0] if len(reports) == 1 else traced
        text = json.dumps(_jsonable(doc), indent=2) + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        try:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise IoError(str(exc)) from exc
    return text

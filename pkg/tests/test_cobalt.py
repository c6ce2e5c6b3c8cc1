import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from rachsim import load_scenario_text, simulate
from rachsim.cobalt import (
    CellTag,
    CobaltConfig,
    CobaltOutcome,
    DeliveryOutcome,
    NoPendingData,
    RegionOverflow,
    build_frame_map,
    cobalt_transmit,
    signaling_message_count,
)
from rachsim.energy import EnergyLedger
from rachsim.kernel import RngStream
from rachsim.rach import Device, PrachConfig
from rachsim.traffic import PriorityClass


def _devs(n, seed=1):
    out = []
    for i in range(n):
        d = Device(i, PriorityClass.LOW, RngStream(seed, (1, i)), EnergyLedger())
        d.payload = True
        out.append(d)
    return out


def test_pure_legacy_map():
    fm = build_frame_map(25, PrachConfig(), None)
    assert fm.count(CellTag.PUSCH_COBALT) == 0
    assert fm.count(CellTag.PUSCH_H2H) == 125 - 20 - 6


def test_region_overflow():
    with pytest.raises(RegionOverflow):
        build_frame_map(25, PrachConfig(), CobaltConfig(region_rbs_per_tti=4), prach_rbs=20)
    with pytest.raises(RegionOverflow):
        CobaltConfig(region_rbs_per_tti=16)


@settings(max_examples=60)
@given(st.integers(12, 100), st.integers(1, 10), st.integers(1, 4), st.integers(0, 3), st.integers(1, 6))
def test_resource_accounting(bw, period, tti, pucch, prach_rbs):
    free = bw - 2 * pucch - prach_rbs
    assume(free >= 1)
    region = min(4, free)
    fm = build_frame_map(bw, PrachConfig(prach_period_sf=period),
                         CobaltConfig(region_rbs_per_tti=region, tti_period_sf=tti, bandwidth_rbs=bw,
                                      pucch_rbs_per_edge=pucch, prach_rbs=prach_rbs),
                         pucch_rbs_per_edge=pucch, prach_rbs=prach_rbs)
    c = fm.counts()
    assert sum(c.values()) == fm.grid.size
    assert c["PUCCH"] == 2 * pucch * fm.window_sf
    # PUCCH occupies both edges continuously
    if pucch:
        assert np.all(fm.grid[:, :pucch] == CellTag.PUCCH) and np.all(fm.grid[:, bw - pucch:] == CellTag.PUCCH)
    # PRACH recurs with the PRACH period
    rows = np.where((fm.grid == CellTag.PRACH).any(axis=1))[0]
    assert np.all(rows % period == 0)


def test_render_shape():
    fm = build_frame_map(25, PrachConfig(), CobaltConfig())
    lines = fm.render().splitlines()
    assert len(lines) == 25 and all(len(x) == 5 for x in lines)
    assert set("".join(lines)) == {".", "C", "R", "M"}


def test_one_device_delivered_first_tti():
    res = cobalt_transmit(_devs(1), CobaltConfig(region_rbs_per_tti=4), now=10)
    assert res[0].outcome is CobaltOutcome.DELIVERED and res[0].at == 11


def test_two_devices_one_rb_collide():
    res = cobalt_transmit(_devs(2), CobaltConfig(region_rbs_per_tti=1), now=0)
    assert all(r.outcome is CobaltOutcome.COLLISION_RETRY for r in res.values())
    assert all(0 <= r.backoff_ms <= 10 for r in res.values())


def test_no_pending_data():
    d = _devs(1)[0]
    d.payload = False
    with pytest.raises(NoPendingData):
        cobalt_transmit([d], CobaltConfig(), 0)


def test_exhausted_after_max_retries():
    devs = _devs(2)
    for d in devs:
        d.cobalt_collisions = 5
    res = cobalt_transmit(devs, CobaltConfig(region_rbs_per_tti=1, max_retries=5), 0)
    assert all(r.outcome is CobaltOutcome.EXHAUSTED for r in res.values())


@settings(max_examples=40)
@given(st.integers(1, 40), st.integers(1, 12), st.integers(0, 2**31))
def test_collision_outcomes_symmetric(n, rbs, seed):
    free = 25 - 4 - 6
    cfg = CobaltConfig(region_rbs_per_tti=min(rbs, free))
    res = cobalt_transmit(_devs(n, seed), cfg, 0)
    by_rb = {}
    for r in res.values():
        by_rb.setdefault(r.rb, set()).add(r.outcome is CobaltOutcome.DELIVERED)
    assert all(len(v) == 1 for v in by_rb.values())
    for rb, v in by_rb.items():
        users = sum(1 for r in res.values() if r.rb == rb)
        assert (True in v) == (users == 1)


def test_signaling_with_collisions():
    assert signaling_message_count("cobalt", DeliveryOutcome(collisions=3)) == 5
    assert signaling_message_count("legacy", DeliveryOutcome(msg1=3, msg2=2, msg3=2, msg4=1)) == 10


def _pair(seed, n=2000, rate=0.05):
    base = f'duration_sf = 30000\nN = {n}\nlaw = "poisson"\nrate_per_s = {rate}\n'
    leg = simulate(load_scenario_text('mode = "connected_mode"\n' + base), seed=seed)
    cob = simulate(load_scenario_text('mode = "cobalt"\ncobalt.region_rbs_per_tti = 4\n' + base), seed=seed)
    return leg, cob


def test_cobalt_cheaper_than_legacy_under_light_load():
    leg, cob = _pair(seed=1)
    assert leg.payloads == cob.payloads
    assert cob.signaling_per_payload < leg.signaling_per_payload
    assert cob.energy_per_payload_mj < leg.energy_per_payload_mj
    assert cob.cobalt_delivered > 0.9 * cob.delivered

import math

import pytest

from rachsim.analytic import analytic_compare_scenario
from rachsim.scenario import with_overrides
from rachsim.simulator import Simulation


def _same_row(a, b):
    ra, rb = a.row(), b.row()
    ra.pop("events_processed")
    rb.pop("events_processed")
    return all(x == y or (isinstance(x, float) and math.isnan(x) and math.isnan(y))
               for x, y in zip(ra.values(), rb.values()))


@pytest.mark.parametrize("M,U,p,saturated", [(2, 10, 0.3, True), (10, 10, 1.0, True), (5, 7, 0.5, False),
                                              (3, 20, "enb_broadcast", False), (2, 2, 1.0, False)])
def test_slot_fast_path_matches_event_path(M, U, p, saturated):
    """The slot-synchronous shortcut must reproduce the event-driven run exactly."""
    sc = analytic_compare_scenario(M, U, p, saturated=saturated, duration_sf=5 * 2000 + 3)
    sc = with_overrides(sc, {"measure_period_sf": 5})
    fast = Simulation(sc, trace=True).run_until()
    slow = Simulation(sc, trace=True, slot_synchronous=False).run_until()
    assert _same_row(fast, slow)
    assert fast.device_records == slow.device_records
    assert fast.backlog_log == slow.backlog_log
    assert fast.opp_log == slow.opp_log


@pytest.mark.parametrize("M,U,p,saturated", [(10, 10, 1.0, True), (5, 7, 0.5, False)])
def test_untraced_fast_path_matches_event_path(M, U, p, saturated):
    sc = analytic_compare_scenario(M, U, p, saturated=saturated, duration_sf=5 * 2000 + 3)
    fast = Simulation(sc).run_until()
    slow = Simulation(sc, slot_synchronous=False).run_until()
    assert _same_row(fast, slow)

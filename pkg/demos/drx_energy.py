"""Idle-mode energy of an hourly meter as the paging cycle grows.

Each device wakes once per hour for an uplink report and otherwise sleeps in
DRX. Longer paging cycles mean fewer wake-ups; the script tabulates the day's
energy per device in closed form, confirms the two shipped cycles by
simulation and turns the result into battery lifetime for a 5 Wh cell.
"""

import argparse

from rachsim import shipped_scenario, simulate, with_overrides
from rachsim.energy import MS_PER_DAY, battery_lifetime, idle_cycle_energy
from rachsim.rach import clean_access_energy

BATTERY_MJ = 5 * 3600 * 1000  # 5 Wh


def day_energy(sc):
    access = clean_access_energy(sc.prach, sc.power, True)
    return idle_cycle_energy(sc.drx, sc.power, MS_PER_DAY) + 24 * access


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--no-sim", action="store_true", help="closed form only")
    args = ap.parse_args()

    base = shipped_scenario("fig4d_drx_2560")
    ref = day_energy(base)
    print(f"{'cycle ms':>9}{'mJ/day':>11}{'gain':>7}{'years on 5 Wh':>15}")
    for k in range(6):
        cycle = 2560 * 2**k
        e = day_energy(with_overrides(base, {"drx.paging_cycle_ms": cycle}))
        years = battery_lifetime(e, BATTERY_MJ) / 365
        print(f"{cycle:9d}{e:11.1f}{ref / e:7.1f}{years:15.1f}")

    if not args.no_sim:
        print("\nsimulated day (20 devices each)")
        for name in ("fig4d_drx_2560", "fig4d_drx_81920"):
            sc = shipped_scenario(name)
            r = simulate(sc)
            print(f"  {name}: {r.energy_mean_mj:.1f} mJ per device, closed form {day_energy(sc):.1f}")


if __name__ == "__main__":
    main()

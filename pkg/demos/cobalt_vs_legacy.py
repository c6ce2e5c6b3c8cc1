"""Small uplink payloads: legacy RACH handshake vs a contention region on PUSCH.

Prints the uplink frame map with the reserved contention resource blocks, then
runs the shipped legacy and COBALT scenarios (10K devices, Poisson payloads)
under the same seed and compares signaling, energy and latency per payload.
"""

import argparse
from dataclasses import replace

from rachsim import shipped_scenario, simulate
from rachsim.cobalt import build_frame_map


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--devices", type=int, default=10000)
    args = ap.parse_args()

    legacy = shipped_scenario("fig4f_legacy")
    cobalt = shipped_scenario("fig4f_cobalt")
    if args.devices != 10000:
        legacy = replace(legacy, populations=(replace(legacy.populations[0], n=args.devices),))
        cobalt = replace(cobalt, populations=(replace(cobalt.populations[0], n=args.devices),))

    fm = build_frame_map(cobalt.cobalt.bandwidth_rbs, cobalt.prach, cobalt.cobalt)
    print("uplink grid, one column per subframe (C PUCCH, R PRACH, M contention region, . H2H PUSCH)")
    print(fm.render())
    print(fm.counts(), "\n")

    rows = []
    for label, sc in (("legacy", legacy), ("cobalt", cobalt)):
        r = simulate(sc, seed=args.seed)
        rows.append(r)
        print(f"{label:<7} delivered {r.delivered:6d}/{r.payloads:<6d} msgs/payload {r.signaling_per_payload:5.2f}  "
              f"mJ/payload {r.energy_per_payload_mj:6.2f}  p95 latency {r.delivery_latency_p95_ms:5.0f} ms")
    leg, cob = rows
    print(f"\nratios cobalt/legacy: signaling {cob.signaling_per_payload / leg.signaling_per_payload:.2f}, "
          f"energy {cob.energy_per_payload_mj / leg.energy_per_payload_mj:.2f}")


if __name__ == "__main__":
    main()

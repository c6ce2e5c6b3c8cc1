"""End-to-end acceptance checks, one per criterion.

Run as a script for a plain report::

    python tests/test_acceptance.py            # all criteria
    python tests/test_acceptance.py 2 6 7      # a subset

or through pytest (``pytest -m acceptance``), where each criterion is one test
and its PASS/FAIL line is written straight to the terminal. Full-size runs are
memoised so criteria sharing a configuration simulate it once per process.
"""

from __future__ import annotations

import math
import os
import subprocess
import sys
import tempfile
import time
from functools import lru_cache
from importlib.resources import files
from pathlib import Path

import numpy as np
import pytest

from rachsim import load_scenario_text, shipped_scenario, simulate
from rachsim.analytic import (
    ContentionModel,
    analytic_compare_scenario,
    exact_drain_time,
    optimize_retx_probability,
    slot_success_probability,
    slot_throughput,
)
from rachsim.energy import idle_cycle_energy
from rachsim.rach import clean_access_energy
from rachsim.scenario import with_overrides
from rachsim.simulator import Simulation
from rachsim.sweep import load_sweep, run_sweep

ROOT = Path(__file__).resolve().parents[1]
SEEDS = (1, 2, 3, 4, 5)
# replicate counts; the defaults are the ones the acceptance numbers were produced with
DRAIN_REPS = int(os.environ.get("RACHSIM_ACCEPT_DRAIN_REPS", 500))
OPT_REPS = int(os.environ.get("RACHSIM_ACCEPT_OPT_REPS", 200))


class Verdict:
    def __init__(self, number: int, ok: bool, detail: str, seconds: float = 0.0):
        self.number, self.ok, self.detail, self.seconds = number, ok, detail, seconds

    def line(self) -> str:
        return f"criterion {self.number}: {'PASS' if self.ok else 'FAIL'}  ({self.seconds:.0f} s)  {self.detail}"


def _fmt(xs, nd=4):
    return "[" + ", ".join(f"{x:.{nd}f}" for x in xs) + "]"


@lru_cache(maxsize=None)
def _run(text: str, seed: int):
    return simulate(load_scenario_text(text), seed=seed)


def _entry_text(low: int, high: int = 0, period_sf: int = 5, law: str = "beta", span_ms: int = 10000,
                bi: int = 20, pre: int = 0) -> str:
    shape = "alpha = 3.0\nbeta = 4.0\n" if law == "beta" else ""
    txt = (f'mode = "network_entry"\nprach.prach_period_sf = {period_sf}\n'
           f'prach.backoff_indicator_ms = {bi}\nprach.pre_backoff_ms = {pre}\n'
           f'[[population]]\nclass = "low"\nN = {low}\nlaw = "{law}"\nspan_ms = {span_ms}\n{shape}')
    if high:
        txt += f'[[population]]\nclass = "high"\nN = {high}\nlaw = "{law}"\nspan_ms = {span_ms}\n{shape}'
    return txt


# 1 ---------------------------------------------------------------------------


def criterion_1() -> Verdict:
    t0 = time.time()
    full, desk = [], []
    for seed in SEEDS:
        p = [_run(_entry_text(30000, h), seed).access_success_probability for h in (0, 3000, 12000)]
        d10, d40 = p[0] - p[1], p[0] - p[2]
        full.append((d10, d40, d40 >= 0.15 and d40 > 3 * d10))
        q = [_run(_entry_text(3000, h, period_sf=50), seed).access_success_probability for h in (0, 300, 1200)]
        e10, e40 = q[0] - q[1], q[0] - q[2]
        desk.append((e10, e40, e40 > 3 * e10))
    n_full = sum(ok for *_, ok in full)
    n_desk = sum(ok for *_, ok in desk)
    ok = n_full >= 4 and n_desk >= 4
    detail = (f"30K: drop(+40%)={_fmt([d for _, d, _ in full], 3)} drop(+10%)={_fmt([d for d, _, _ in full], 3)} "
              f"knee+drop held {n_full}/5; 3K desk knee held {n_desk}/5 (need 4/5 each)")
    return Verdict(1, ok, detail, time.time() - t0)


# 2 ---------------------------------------------------------------------------


def criterion_2() -> Verdict:
    t0 = time.time()
    rows, ok = [], True
    for seed in SEEDS:
        u = _run(_entry_text(30000, law="uniform", span_ms=60000), seed)
        b = _run(_entry_text(30000), seed)
        good = (u.access_success_probability >= 0.99 and b.access_success_probability < u.access_success_probability
                and b.collision_probability >= 5 * u.collision_probability)
        ok &= good
        rows.append((u.access_success_probability, b.access_success_probability,
                     b.collision_probability / u.collision_probability if u.collision_probability else math.inf))
    detail = (f"uniform success={_fmt([r[0] for r in rows])} beta success={_fmt([r[1] for r in rows])} "
              f"collision ratio={_fmt([r[2] for r in rows], 1)}")
    return Verdict(2, ok, detail, time.time() - t0)


# 3 ---------------------------------------------------------------------------


def criterion_3() -> Verdict:
    t0 = time.time()
    spec = load_sweep(Path(str(files("rachsim.scenarios").joinpath("fig4a_bi_sweep.toml"))))
    reps = run_sweep(spec)
    key = lambda r: (r.point["prach.backoff_indicator_ms"], r.point["prach.pre_backoff_ms"])  # noqa: E731
    by_point = {key(r): r for r in reps}
    base = by_point[(20, 0)]
    best_key = max(by_point, key=lambda k: by_point[k].access_success_probability)
    best = by_point[best_key]
    gain = best.access_success_probability - base.access_success_probability
    e_ratio = best.energy_mean_mj / base.energy_mean_mj
    ok = gain >= 0.10 and e_ratio <= 1.2
    detail = (f"best (BI, pre-backoff)={best_key}: success {best.access_success_probability:.4f} vs "
              f"{base.access_success_probability:.4f} (+{100 * gain:.1f} pp), energy ratio {e_ratio:.3f}")
    return Verdict(3, ok, detail, time.time() - t0)


# 4 ---------------------------------------------------------------------------

GRID4 = [(U, M, p) for U in (2, 3, 5, 10) for M in (2, 5, 10) for p in (0.3, 1.0)]


def criterion_4() -> Verdict:
    t0 = time.time()
    z_slot, z_drain = [], []
    for U, M, p in GRID4:
        sc = analytic_compare_scenario(M, U, p, saturated=True, duration_sf=5 * 100_000)
        rep = Simulation(sc).run_until()
        a = slot_success_probability(ContentionModel(M, U, p))
        z_slot.append(abs(rep.slot_success_mean - a) / rep.slot_success_se)
        sc = analytic_compare_scenario(M, U, p, duration_sf=10**7)
        drains = np.array([Simulation(sc, seed=s).run_until().drain_slots for s in range(1, DRAIN_REPS + 1)])
        se = drains.std(ddof=1) / math.sqrt(len(drains))
        exact = exact_drain_time(M, U, p).mean_drain_slots
        z_drain.append(abs(drains.mean() - exact) / se)
    elapsed = time.time() - t0
    ok = max(z_slot) <= 3 and max(z_drain) <= 3 and elapsed <= 120
    worst = GRID4[int(np.argmax(z_slot))]
    detail = (f"24 configs: max |z| slot success {max(z_slot):.2f} at (U,M,p)={worst} over 1e5 slots, "
              f"max |z| drain mean {max(z_drain):.2f} over {DRAIN_REPS} runs; runtime {elapsed:.0f} s (limit 120)")
    return Verdict(4, ok, detail, elapsed)


# 5 ---------------------------------------------------------------------------

SCALES = (0.5, 0.75, 1.0, 1.25, 1.5, 2.0)
FIXED_P = (0.1, 0.25, 0.5)


def _mean_drain(sc) -> float:
    return float(np.mean([Simulation(sc, seed=s).run_until().drain_slots for s in range(1, OPT_REPS + 1)]))


def criterion_5() -> Verdict:
    t0 = time.time()
    grid = np.arange(1, 10_001) * 1e-4
    closed_ok, sim_ok, notes = True, True, []
    for M in (5, 54):
        for k in (2, 5, 10):
            U = k * M
            best_g = float(np.max(U * grid * (1 - grid / M) ** (U - 1)))
            g = slot_throughput(M, U, optimize_retx_probability(M, U))
            closed_ok &= g >= best_g * (1 - 1e-4)
            # the M/U rule applied to the live backlog n is the adaptive policy min(1, M/n)
            base = analytic_compare_scenario(M, U, "enb_broadcast", duration_sf=10**7)
            drains = {("scale", c): _mean_drain(with_overrides(base, {"prach.retx_probability_scale": c}))
                      for c in SCALES}
            drains.update({("p", p): _mean_drain(analytic_compare_scenario(M, U, p, duration_sf=10**7))
                           for p in FIXED_P})
            opt = min(drains.values())
            ratio = drains[("scale", 1.0)] / opt
            sim_ok &= ratio <= 1.05
            notes.append(f"M={M},U={U}:{ratio:.3f}")
    detail = (f"closed-form identity {'holds' if closed_ok else 'violated'} on the 1e-4 grid; "
              f"simulated drain at p=M/n over grid optimum: {' '.join(notes)} (limit 1.050, {OPT_REPS} runs each)")
    return Verdict(5, closed_ok and sim_ok, detail, time.time() - t0)


# 6 ---------------------------------------------------------------------------


def _drx_closed_form(sc) -> float:
    (pop,) = sc.populations
    reports = sc.duration_sf // pop.traffic.period_ms
    return idle_cycle_energy(sc.drx, sc.power, sc.duration_sf) + reports * clean_access_energy(sc.prach, sc.power, True)


def criterion_6() -> Verdict:
    t0 = time.time()
    short, long_ = shipped_scenario("fig4d_drx_2560"), shipped_scenario("fig4d_drx_81920")
    c_s, c_l = _drx_closed_form(short), _drx_closed_form(long_)
    s_s, s_l = simulate(short).energy_mean_mj, simulate(long_).energy_mean_mj
    dev = max(abs(s_s - c_s) / c_s, abs(s_l - c_l) / c_l)
    ok = c_s / c_l >= 20 and dev <= 0.02
    detail = (f"closed-form ratio {c_s / c_l:.2f} (need >= 20), simulated ratio {s_s / s_l:.2f}; "
              f"per-device day energy sim vs closed form {s_s:.1f}/{c_s:.1f} and {s_l:.1f}/{c_l:.1f} mJ "
              f"(max deviation {100 * dev:.2f}%)")
    return Verdict(6, ok, detail, time.time() - t0)


# 7 ---------------------------------------------------------------------------


def criterion_7() -> Verdict:
    t0 = time.time()
    leg_sc, cob_sc = shipped_scenario("fig4f_legacy"), shipped_scenario("fig4f_cobalt")
    (pop,) = cob_sc.populations
    cob = cob_sc.cobalt
    load = pop.n * pop.traffic.rate_per_s / 1000 * cob.tti_period_sf / cob.region_rbs_per_tti
    held, notes = 0, []
    for seed in SEEDS:
        leg, c = simulate(leg_sc, seed=seed), simulate(cob_sc, seed=seed)
        a = c.signaling_per_payload / leg.signaling_per_payload
        b = c.energy_per_payload_mj / leg.energy_per_payload_mj
        lat = (c.delivery_latency_p95_ms, leg.delivery_latency_p95_ms)
        good = a <= 0.5 and b <= 0.7 and lat[0] <= lat[1]
        held += good
        notes.append(f"s{seed}:{a:.2f}/{b:.2f}/{lat[0]:.0f}v{lat[1]:.0f}ms")
    ok = load <= 0.5 and held >= 4
    detail = (f"offered load {load:.3f} payloads/RB/TTI; signaling/energy ratio and p95 latency per seed "
              f"{' '.join(notes)}; held {held}/5 (need 4)")
    return Verdict(7, ok, detail, time.time() - t0)


# 8 ---------------------------------------------------------------------------


def criterion_8() -> Verdict:
    t0 = time.time()
    # --runxfail makes the known-failing decile check count at its stated tolerance
    out = subprocess.run([sys.executable, "-m", "pytest", str(ROOT / "tests" / "test_oracles.py"), "-q",
                          "--runxfail", "-p", "no:cacheprovider"], capture_output=True, text=True, cwd=ROOT)
    tail = out.stdout.strip().splitlines()[-1] if out.stdout.strip() else out.stderr.strip()[-200:]
    failed = [ln.split("::")[-1].split(" ")[0] for ln in out.stdout.splitlines() if ln.startswith("FAILED")]
    detail = f"oracle suite: {tail}" + (f"; failing: {', '.join(failed)}" if failed else "")
    return Verdict(8, out.returncode == 0, detail, time.time() - t0)


# 9 ---------------------------------------------------------------------------

PIPE_SCENARIO = 'name = "determinism"\nseed = 11\nN = 2000\nlaw = "beta"\nspan_ms = 2000\n'
PIPE_SWEEP = ('base = "scenario.toml"\nseeds = 2\n\n[axes]\n"prach.backoff_indicator_ms" = [20, 240]\n'
              '"prach.pre_backoff_ms" = [0, 500]\n')


def _pipeline(workdir: Path) -> dict[str, bytes]:
    (workdir / "scenario.toml").write_text(PIPE_SCENARIO)
    (workdir / "sweep.toml").write_text(PIPE_SWEEP)
    steps = {
        "sim.csv": ["simulate", "scenario.toml", "--format", "csv", "--out", "sim.csv"],
        "sim.json": ["simulate", "scenario.toml", "--format", "json", "--trace", "--out", "sim.json"],
        "sweep.csv": ["sweep", "sweep.toml", "--format", "csv", "--out", "sweep.csv"],
        "analyze.json": ["analyze", "--M", "5", "--U", "20", "--p", "0.25", "--format", "json",
                         "--out", "analyze.json"],
        "fluid.csv": ["analyze", "--M", "54", "--U", "5000", "--p", "adaptive", "--out", "fluid.csv"],
        "optimize.txt": ["optimize", "--M", "54", "--U", "540"],
    }
    out = {}
    env = {k: v for k, v in os.environ.items() if k != "RACHSIM_SEED"}
    for name, argv in steps.items():
        res = subprocess.run([sys.executable, "-m", "rachsim", *argv], cwd=workdir, capture_output=True, env=env)
        if res.returncode != 0:
            raise RuntimeError(f"{' '.join(argv)} exited {res.returncode}: {res.stderr.decode()[-300:]}")
        out[name] = (workdir / name).read_bytes() if "--out" in argv else res.stdout
    # a report fed back as a scenario must reproduce itself
    res = subprocess.run([sys.executable, "-m", "rachsim", "simulate", "sim.csv"], cwd=workdir,
                         capture_output=True, env=env)
    out["rerun.csv"] = res.stdout
    return out


def criterion_9() -> Verdict:
    t0 = time.time()
    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        first, second = _pipeline(Path(a)), _pipeline(Path(b))
    same = [k for k in first if first[k] == second[k]]
    ok = len(same) == len(first) and first["rerun.csv"] == first["sim.csv"]
    detail = (f"{len(same)}/{len(first)} pipeline outputs byte-identical across two runs; report echo re-run "
              f"{'identical' if first['rerun.csv'] == first['sim.csv'] else 'differs'} "
              f"(checked on {sys.platform} only)")
    return Verdict(9, ok, detail, time.time() - t0)


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 10)}


@pytest.mark.acceptance
@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    verdict = CRITERIA[number]()
    with capsys.disabled():
        print("\n" + verdict.line())
    assert verdict.ok, verdict.line()


def main(argv: list[str]) -> int:
    wanted = [int(a) for a in argv] or sorted(CRITERIA)
    failed = 0
    for n in wanted:
        v = CRITERIA[n]()
        print(v.line(), flush=True)
        failed += not v.ok
    print(f"{len(wanted) - failed}/{len(wanted)} criteria pass")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))

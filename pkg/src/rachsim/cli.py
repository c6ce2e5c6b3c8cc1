"""Command-line entry point: ``rachsim simulate|sweep|analyze|optimize|validate``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys

from .analytic import (
    U_MAX,
    ContentionModel,
    adaptive_policy,
    exact_drain_time,
    fluid_drain_trajectory,
    optimize_retx_probability,
    slot_success_probability,
    slot_throughput,
)
from .errors import ParseError, ValidationError
from .report import MetricsReport, emit_report
from .scenario import dump_scenario, load_scenario
from .simulator import simulate
from .sweep import CapExceeded, load_sweep, run_sweep

log = logging.getLogger("rachsim")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _write(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    rep = simulate(sc, seed=args.seed, trace=args.trace)
    log.info("%s: %d devices, success %.4f", sc.name, rep.devices, rep.access_success_probability)
    _write(emit_report(rep, args.format, args.out), args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = load_sweep(args.spec)
    reps = run_sweep(spec, jobs=args.jobs)
    _write(emit_report(reps, args.format, args.out), args.out)
    return EXIT_OK


def _analytic_report(M: int, U: int, p: float | str) -> MetricsReport:
    if p == "adaptive":
        traj = fluid_drain_trajectory(M, U, adaptive_policy(M))
        rep = MetricsReport(scenario=f"fluid_M{M}_U{U}", mode="fluid", devices=U,
                            drain_slots=traj.drain_time if traj.drain_time is not None else math.nan)
        rep.slot_success_mean = slot_success_probability(ContentionModel(M, U, min(1.0, M / max(U, 1))))
    else:
        p = float(p)
        model = ContentionModel(M, U, p)
        rep = MetricsReport(scenario=f"analytic_M{M}_U{U}", mode="analytic", devices=U)
        rep.slot_success_mean = slot_success_probability(model)
        if U <= U_MAX:
            prof = exact_drain_time(M, U, p)
            rep.drain_slots = prof.mean_drain_slots
            rep.mean_delay_slots = prof.mean_delay_slots
        else:
            rep.mode = "fluid"
            traj = fluid_drain_trajectory(M, U, p)
            rep.drain_slots = traj.drain_time if traj.drain_time is not None else math.nan
    rep.point = {"M": M, "U": U, "p": p, "throughput": slot_throughput(M, U, min(1.0, M / U) if p == "adaptive" else p)}
    rep.header = {"scenario_toml": f"M = {M}\nU = {U}\np = {p!r}\n" if isinstance(p, float) else
                  f'M = {M}\nU = {U}\np = "{p}"\n'}
    return rep


def cmd_analyze(args) -> int:
    p = args.p if args.p == "adaptive" else float(args.p)
    rep = _analytic_report(args.M, args.U, p)
    _write(emit_report(rep, args.format, args.out), args.out)
    return EXIT_OK


def cmd_optimize(args) -> int:
    p_star = optimize_retx_probability(args.M, args.U)
    log.info("p* = %.6g, throughput %.6g per slot", p_star, slot_throughput(args.M, args.U, p_star))
    rep = _analytic_report(args.M, args.U, p_star)
    _write(emit_report(rep, args.format, args.out), args.out)
    return EXIT_OK


def cmd_validate(args) -> int:
    sc = load_scenario(args.scenario)
    sys.stdout.write(dump_scenario(sc))
    log.info("%s: valid (%d devices, %d sf)", sc.name, sc.n_devices, sc.duration_sf)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log progress to stderr")
    ap = argparse.ArgumentParser(prog="rachsim", description=__doc__.splitlines()[0], parents=[common])
    sub = ap.add_subparsers(dest="command", required=True)

    def outputs(p):
        p.add_argument("--out", help="write the report here instead of stdout")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("simulate", parents=[common], help="run one scenario")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=None, help="overrides the file and RACHSIM_SEED")
    p.add_argument("--trace", action="store_true", help="include per-device records (json)")
    outputs(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", parents=[common], help="run a parameter sweep")
    p.add_argument("spec")
    p.add_argument("--jobs", type=int, default=1)
    outputs(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", parents=[common], help="analytic contention model for one (M, U, p)")
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--U", type=int, required=True)
    p.add_argument("--p", default="1.0", help='probability, or "adaptive" for min(1, M/n) (fluid model)')
    outputs(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("optimize", parents=[common], help="throughput-optimal retransmission probability")
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--U", type=int, required=True)
    outputs(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("validate", parents=[common], help="check a scenario and print its effective configuration")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ParseError, ValidationError, CapExceeded, FileNotFoundError, IsADirectoryError) as exc:
        print(f"rachsim: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BrokenPipeError:
        # downstream closed early (e.g. piped into head); not an error of ours
        sys.stderr.close()
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"rachsim: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

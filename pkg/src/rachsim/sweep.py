"""Parameter sweeps: a base scenario, a grid of dotted-key overrides, replicate seeds.

A sweep file::

    base = "fig4a_beta30k"        # shipped scenario name, or a path relative to this file
    seeds = 5                     # count (base seed, base seed + 1, ...) or an explicit list
    cap = 500                     # optional bound on points x seeds

    [axes]
    "prach.backoff_indicator_ms" = [0, 20, 40, 80]
    "prach.pre_backoff_ms" = [0, 1000]

Runs are ordered grid-major (last axis fastest), seed-minor.
"""

from __future__ import annotations

import itertools
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python < 3.11
    import tomli

from .errors import ParseError, ValidationError
from .report import MetricsReport
from .scenario import Scenario, load_scenario, scenario_from_dict, shipped_scenario, with_overrides
from .simulator import simulate

__all__ = ["SweepSpec", "CapExceeded", "DEFAULT_CAP", "load_sweep", "run_sweep", "sweep_points"]

DEFAULT_CAP = 1000


class CapExceeded(ValueError):
    pass


@dataclass
class SweepSpec:
    base: Scenario
    axes: list[tuple[str, list[Any]]] = field(default_factory=list)
    seeds: list[int] | int = 1
    cap: int = DEFAULT_CAP

    def seed_list(self) -> list[int]:
        if isinstance(self.seeds, int):
            return [self.base.seed + i for i in range(self.seeds)]
        return list(self.seeds)

    def size(self) -> int:
        n = len(self.seed_list())
        for _, values in self.axes:
            n *= len(values)
        return n


def load_sweep(path: str | os.PathLike) -> SweepSpec:
    p = Path(path)
    try:
        doc = tomli.loads(p.read_text())
    except tomli.TOMLDecodeError as exc:
        raise ParseError(getattr(exc, "msg", str(exc)), getattr(exc, "lineno", None),
                         getattr(exc, "colno", None)) from None
    unknown = set(doc) - {"base", "seeds", "cap", "axes", "scenario"}
    if unknown:
        raise ValidationError(sorted(unknown)[0], "unknown key")
    if "scenario" in doc:
        base = scenario_from_dict(doc["scenario"])
    elif "base" in doc:
        ref = doc["base"]
        candidate = p.parent / ref
        base = load_scenario(candidate) if candidate.is_file() else shipped_scenario(ref)
    else:
        raise ValidationError("base", "required")
    axes = [(k, list(v)) for k, v in doc.get("axes", {}).items()]
    for key, values in axes:
        if not values:
            raise ValidationError(f"axes.{key}", "needs at least one value")
    seeds = doc.get("seeds", 1)
    if isinstance(seeds, int) and seeds < 1:
        raise ValidationError("seeds", "must be >= 1")
    return SweepSpec(base, axes, seeds, int(doc.get("cap", DEFAULT_CAP)))


def sweep_points(spec: SweepSpec) -> list[dict[str, Any]]:
    keys = [k for k, _ in spec.axes]
    return [dict(zip(keys, combo)) for combo in itertools.product(*(v for _, v in spec.axes))]


def _run_one(args: tuple[Scenario, int, dict]) -> MetricsReport:
    scenario, seed, point = args
    rep = simulate(scenario, seed=seed)
    rep.point = point
    rep.delays = rep.device_energy = None
    rep.opp_log = []
    rep.backlog_log = []
    return rep


def run_sweep(spec: SweepSpec, jobs: int = 1) -> list[MetricsReport]:
    """Run every grid point with every seed; raises :class:`CapExceeded` before running anything."""
    if spec.size() > spec.cap:
        raise CapExceeded(f"{spec.size()} runs exceed the cap of {spec.cap}")
    tasks = []
    for i, point in enumerate(sweep_points(spec)):
        scenario = with_overrides(spec.base, point) if point else spec.base
        for seed in spec.seed_list():
            tasks.append((scenario, seed, {"point": i, **point}))
    if jobs <= 1 or len(tasks) <= 1:
        return [_run_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, tasks))

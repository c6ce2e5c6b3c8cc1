"""Scenario files: TOML with dotted keys, validated into :class:`Scenario`.

A scenario file looks like::

    name = "fig4a_beta30k"
    seed = 1
    mode = "network_entry"
    prach.backoff_indicator_ms = 20

    [[population]]
    class = "low"
    N = 30000
    law = "beta"
    span_ms = 10000

A single population may also be given inline with top-level ``N``/``law``
(plus its law parameters). Every key left out takes its default, and
:func:`dump_scenario` writes the complete effective configuration back out in
the same syntax, so an echoed report header reloads to the identical scenario.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable

try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python < 3.11
    import tomli

from .cobalt import CobaltConfig
from .energy import DrxConfig, PowerModel
from .errors import ParseError, ValidationError, check
from .rach import EabConfig, PrachConfig
from .traffic import Law, PriorityClass, TrafficModel

__all__ = [
    "Mode",
    "Population",
    "Scenario",
    "load_scenario",
    "load_scenario_text",
    "scenario_from_dict",
    "dump_scenario",
    "flatten_scenario",
    "with_overrides",
    "shipped_scenario",
    "SEED_ENV",
]

SEED_ENV = "RACHSIM_SEED"
DEFAULT_SEED = 1
DRAIN_MARGIN_SF = 20_000


class Mode(str, Enum):
    NETWORK_ENTRY = "network_entry"
    CONNECTED_MODE = "connected_mode"
    COBALT = "cobalt"
    ANALYTIC_COMPARE = "analytic_compare"


@dataclass(frozen=True)
class Population:
    pclass: PriorityClass
    n: int
    traffic: TrafficModel

    def __post_init__(self):
        object.__setattr__(self, "pclass", PriorityClass(self.pclass))
        check(self.n >= 0, "population.N", "must be >= 0")


@dataclass(frozen=True)
class Scenario:
    """Everything a run needs. ``duration_sf`` is the simulated horizon.

    ``saturated`` only matters in analytic_compare mode: each device restarts
    a fresh access as soon as it succeeds, holding the backlog constant.
    ``measure_period_sf > 0`` samples the backlog on a fixed grid.
    """

    name: str = "scenario"
    seed: int = DEFAULT_SEED
    mode: Mode = Mode.NETWORK_ENTRY
    duration_sf: int = 0
    populations: tuple[Population, ...] = ()
    prach: PrachConfig = field(default_factory=PrachConfig)
    eab: EabConfig = field(default_factory=EabConfig)
    power: PowerModel = field(default_factory=PowerModel)
    drx: DrxConfig = field(default_factory=DrxConfig)
    cobalt: CobaltConfig | None = None
    saturated: bool = False
    measure_period_sf: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "populations", tuple(self.populations))
        if self.duration_sf == 0:
            object.__setattr__(self, "duration_sf", self.default_duration())
        check(self.duration_sf >= 1, "duration_sf", "must be >= 1")
        spans = [p.traffic.span_ms for p in self.populations if p.traffic.one_shot and p.n]
        if spans and self.mode is not Mode.ANALYTIC_COMPARE:
            check(self.duration_sf >= max(spans), "duration_sf", "must cover the traffic span")
        check(self.measure_period_sf >= 0, "measure_period_sf", "must be >= 0")
        if self.mode is Mode.COBALT:
            check(self.cobalt is not None, "cobalt", "cobalt mode needs a [cobalt] section")

    def default_duration(self) -> int:
        spans = [p.traffic.span_ms for p in self.populations if p.traffic.one_shot]
        return (max(spans) if spans else 0) + DRAIN_MARGIN_SF

    @property
    def n_devices(self) -> int:
        return sum(p.n for p in self.populations)


_POP_KEYS = {"class", "N", "law", "span_ms", "alpha", "beta", "rate_per_s", "period_ms", "jitter_ms"}
_TRAFFIC_FIELDS = ("span_ms", "alpha", "beta", "rate_per_s", "period_ms", "jitter_ms")
_SECTIONS = {
    "prach": PrachConfig,
    "eab": EabConfig,
    "power": PowerModel,
    "drx": DrxConfig,
    "cobalt": CobaltConfig,
}
_TOP_KEYS = {"name", "seed", "mode", "duration_sf", "saturated", "measure_period_sf"}


def _population(raw: dict, where: str) -> Population:
    unknown = set(raw) - _POP_KEYS
    if unknown:
        raise ValidationError(f"{where}.{sorted(unknown)[0]}", "unknown key")
    if "N" not in raw:
        raise ValidationError(f"{where}.N", "required")
    kwargs = {k: raw[k] for k in _TRAFFIC_FIELDS if k in raw}
    try:
        law = Law(raw.get("law", "uniform"))
    except ValueError:
        raise ValidationError(f"{where}.law", f"unknown law {raw.get('law')!r}") from None
    try:
        traffic = TrafficModel(law=law, **kwargs)
    except ValidationError as exc:
        raise ValidationError(f"{where}.{exc.key}", exc.constraint) from None
    try:
        pclass = PriorityClass(raw.get("class", "low"))
    except ValueError:
        raise ValidationError(f"{where}.class", f"unknown class {raw.get('class')!r}") from None
    return Population(pclass, int(raw["N"]), traffic)


def _section(name: str, raw: Any):
    cls = _SECTIONS[name]
    if not isinstance(raw, dict):
        raise ValidationError(name, "must be a table")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            raise ValidationError(f"{name}.{key}", "unknown key")
    try:
        return cls(**raw)
    except ValidationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError(name, str(exc)) from None


def scenario_from_dict(data: dict, seed_env: str | None = None) -> Scenario:
    """Validate a parsed document. ``seed_env`` overrides the environment lookup."""
    data = dict(data)
    pops_raw = data.pop("population", None)
    inline = {k: data.pop(k) for k in list(data) if k in _POP_KEYS}
    if pops_raw is not None and inline:
        raise ValidationError(sorted(inline)[0], "inline population conflicts with [[population]] tables")
    pops = []
    if inline:
        pops.append(_population(inline, "population[0]"))
    for i, raw in enumerate(pops_raw or []):
        pops.append(_population(raw, f"population[{i}]"))

    kwargs: dict[str, Any] = {"populations": tuple(pops)}
    for name in _SECTIONS:
        if name in data:
            kwargs[name] = _section(name, data.pop(name))
    for key in list(data):
        if key not in _TOP_KEYS:
            raise ValidationError(key, "unknown key")
        kwargs[key] = data.pop(key)
    if "seed" not in kwargs:
        env = os.environ.get(SEED_ENV) if seed_env is None else seed_env
        kwargs["seed"] = int(env) if env else DEFAULT_SEED
    if "mode" in kwargs:
        try:
            kwargs["mode"] = Mode(kwargs["mode"])
        except ValueError:
            raise ValidationError("mode", f"unknown mode {kwargs['mode']!r}") from None
    try:
        return Scenario(**kwargs)
    except ValidationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError("scenario", str(exc)) from None


def _parse(text: str) -> dict:
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        col = getattr(exc, "colno", None)
        msg = getattr(exc, "msg", str(exc))
        raise ParseError(msg, line, col) from None


def load_scenario_text(text: str) -> Scenario:
    return scenario_from_dict(_parse(text))


def load_scenario(path: str | os.PathLike) -> Scenario:
    """Read and validate a scenario file, or the echoed header of a CSV/JSON report."""
    p = Path(path)
    text = p.read_text()
    if p.suffix == ".json":
        return load_scenario_text(json.loads(text)["header"]["scenario_toml"])
    if p.suffix == ".csv":
        # CSV reports carry the echo as "# " prefixed lines ahead of the column header
        text = "\n".join(ln[2:] for ln in text.splitlines() if ln.startswith("# "))
    return load_scenario_text(text)


# Echo -------------------------------------------------------------------------


def _toml_value(v: Any) -> str:
    if isinstance(v, Enum):
        v = v.value
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple, frozenset, set)):
        items = sorted(v, key=lambda x: x.value if isinstance(x, Enum) else x) if isinstance(v, (set, frozenset)) else v
        return "[" + ", ".join(_toml_value(x) for x in items) + "]"
    raise TypeError(f"cannot echo {v!r}")


def flatten_scenario(sc: Scenario) -> dict[str, Any]:
    """Effective parameters as ``dotted.key -> value`` (populations excluded)."""
    out: dict[str, Any] = {
        "name": sc.name,
        "seed": sc.seed,
        "mode": sc.mode.value,
        "duration_sf": sc.duration_sf,
        "saturated": sc.saturated,
        "measure_period_sf": sc.measure_period_sf,
    }
    for name in _SECTIONS:
        obj = getattr(sc, name)
        if obj is None:
            continue
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if v is None:
                continue
            if isinstance(v, Enum):
                v = v.value
            elif isinstance(v, frozenset):
                v = sorted(x.value if isinstance(x, Enum) else x for x in v)
            out[f"{name}.{f.name}"] = v
    return out


def _population_lines(pop: Population) -> list[str]:
    t = pop.traffic
    lines = ["[[population]]", f"class = {_toml_value(pop.pclass)}", f"N = {pop.n}", f"law = {_toml_value(t.law)}"]
    if t.law in (Law.UNIFORM, Law.BETA):
        lines.append(f"span_ms = {t.span_ms!r}")
    if t.law is Law.BETA:
        lines += [f"alpha = {t.alpha!r}", f"beta = {t.beta!r}"]
    if t.law is Law.POISSON:
        lines.append(f"rate_per_s = {t.rate_per_s!r}")
    if t.law is Law.PERIODIC:
        lines += [f"period_ms = {t.period_ms!r}", f"jitter_ms = {t.jitter_ms!r}"]
    return lines


def dump_scenario(sc: Scenario) -> str:
    lines = [f"{k} = {_toml_value(v)}" for k, v in flatten_scenario(sc).items()]
    for pop in sc.populations:
        lines.append("")
        lines += _population_lines(pop)
    return "\n".join(lines) + "\n"


# Helpers ----------------------------------------------------------------------


def with_overrides(sc: Scenario, overrides: dict[str, Any] | Iterable[tuple[str, Any]]) -> Scenario:
    """Copy of ``sc`` with dotted-key overrides applied (re-validated).

    ``population[i].KEY`` addresses one population; ``population.KEY`` all of them.
    """
    doc = tomli.loads(dump_scenario(sc))
    items = list(overrides.items() if isinstance(overrides, dict) else overrides)
    for key, value in items:
        if key.startswith("population"):
            head, _, leaf = key.partition(".")
            pops = doc.setdefault("population", [])
            if head == "population":
                targets = pops
            else:
                idx = int(head[len("population["):-1])
                targets = [pops[idx]]
            for p in targets:
                p[leaf] = value
            continue
        parts = key.split(".")
        node = doc
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    if "duration_sf" not in dict(items) and sc.duration_sf == sc.default_duration():
        # keep an auto-sized horizon in step with a changed traffic span
        doc.pop("duration_sf", None)
    return scenario_from_dict(doc)


def shipped_scenario(name: str) -> Scenario:
    """Load one of the scenario files bundled with the package."""
    from importlib.resources import files

    fname = name if name.endswith(".toml") else f"{name}.toml"
    return load_scenario_text(files("rachsim.scenarios").joinpath(fname).read_text())

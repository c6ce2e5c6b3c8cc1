"""Analysis of the multichannel contention model.

``U`` backlogged devices share ``M`` channels (preambles). In every slot each
device transmits with probability ``p`` on a channel drawn uniformly; a device
succeeds when it is alone on its channel and then leaves the backlog. This
module provides the per-slot success probability and its optimal ``p``, the
exact Markov analysis of a closed population draining to zero, a fluid (drift
ODE) approximation, and helpers comparing all of these against the simulator's
analytic-comparable mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import ValidationError, check

__all__ = [
    "ContentionModel",
    "LatencyProfile",
    "FluidTrajectory",
    "Deviation",
    "DeviationReport",
    "InstanceTooLarge",
    "NonConvergence",
    "IncompatibleConfig",
    "U_MAX",
    "slot_success_probability",
    "slot_throughput",
    "optimize_retx_probability",
    "success_count_distribution",
    "exact_drain_time",
    "adaptive_policy",
    "fluid_drain_trajectory",
    "stability_boundary",
    "compare_with_simulation",
    "analytic_compare_scenario",
]

U_MAX = 2000
FLUID_STEP = 0.1


class InstanceTooLarge(ValueError):
    pass


class NonConvergence(RuntimeError):
    pass


class IncompatibleConfig(ValueError):
    pass


@dataclass(frozen=True)
class ContentionModel:
    M: int
    U: int
    p: float = 1.0

    def __post_init__(self):
        check(self.M >= 1, "M", "must be >= 1")
        check(self.U >= 0, "U", "must be >= 0")
        check(0.0 < self.p <= 1.0, "p", "must be in (0, 1]")


@dataclass
class LatencyProfile:
    """Absorption-time and tagged-device statistics, in slots."""

    mean_drain_slots: float
    drain_quantiles: dict[float, float]
    mean_delay_slots: float
    delay_quantiles: dict[float, float]
    slot_success_probability: float
    drain_pmf: np.ndarray = field(repr=False, default=None)
    delay_pmf: np.ndarray = field(repr=False, default=None)

    def check_invariants(self) -> None:
        for q in (self.drain_quantiles, self.delay_quantiles):
            vals = [q[k] for k in sorted(q)]
            assert all(a <= b for a, b in zip(vals, vals[1:]))
        if self.drain_pmf is not None and self.drain_pmf.sum() > 1 - 1e-9:
            mean = float(np.arange(len(self.drain_pmf)) @ self.drain_pmf)
            assert math.isclose(mean, self.mean_drain_slots, rel_tol=1e-6)


# Closed forms -----------------------------------------------------------------


def slot_success_probability(model: ContentionModel) -> float:
    """Probability a tagged device among ``U`` backlogged ones succeeds in a slot."""
    if model.U == 0:
        return 0.0
    return model.p * (1.0 - model.p / model.M) ** (model.U - 1)


def slot_throughput(M: int, U: float, p: float) -> float:
    """Expected successes per slot, ``U p (1 - p/M)^(U-1)`` (``U`` may be fractional)."""
    if U <= 0:
        return 0.0
    return U * p * (1.0 - p / M) ** (U - 1)


def optimize_retx_probability(M: int, U: int) -> float:
    """Throughput-maximising transmit probability, ``min(1, M/U)``.

    Setting the derivative of ``log(U p (1-p/M)^(U-1))`` to zero gives
    ``1/p = (U-1)/(M-p)``, i.e. ``p = M/U``; the objective is unimodal so the
    optimum is clipped to 1 when ``U <= M``.
    """
    check(M >= 1, "M", "must be >= 1")
    check(U >= 1, "U", "must be >= 1")
    return min(1.0, M / U)


# Exact Markov analysis -------------------------------------------------------


def _log_no_singleton_table(n_max: int, M: int, p: float) -> np.ndarray:
    """``log F[m, k]``: probability that ``k`` devices produce no singleton on ``m`` channels.

    Each device is silent with probability ``1-p`` or lands on one particular
    channel with probability ``a = p/M`` (the remaining channels are excluded,
    i.e. the event requires nobody lands there). Built channel by channel::

        F[0, k] = (1-p)^k
        F[m, k] = sum_{i != 1} C(k, i) a^i F[m-1, k-i]
    """
    a = p / M
    k = np.arange(n_max + 1)
    log_a = math.log(a)
    F = np.full((M + 1, n_max + 1), -np.inf)
    F[0, 0] = 0.0
    if p < 1:
        F[0] = k * math.log1p(-p)
    # term[k, i] = log C(k, i) + i log a, only for i <= k and i != 1
    K, I = np.meshgrid(k, k, indexing="ij")
    valid = (I <= K) & (I != 1)
    logc = np.where(valid, gammaln(K + 1) - gammaln(I + 1) - gammaln(np.maximum(K - I, 0) + 1) + I * log_a, -np.inf)
    idx = np.where(valid, K - I, 0)
    for m in range(1, M + 1):
        terms = logc + F[m - 1][idx]
        terms[~valid] = -np.inf
        F[m] = logsumexp(terms, axis=1)
    return F


def _kernel_from_table(F: np.ndarray, n_max: int, M: int, p: float) -> np.ndarray:
    a = p / M
    S = min(M, n_max)
    P = np.zeros((n_max + 1, S + 1))
    P[0, 0] = 1.0
    for n in range(1, n_max + 1):
        s = np.arange(min(n, M) + 1)
        with np.errstate(divide="ignore"):
            logp = (gammaln(M + 1) - gammaln(s + 1) - gammaln(M - s + 1)
                    + gammaln(n + 1) - gammaln(n - s + 1) + s * math.log(a)
                    + F[M - s, n - s])
        row = np.exp(logp)
        P[n, : len(row)] = row / row.sum()
    return P


def success_count_distribution(n: int, M: int, p: float) -> np.ndarray:
    """``P[s]``: probability of exactly ``s`` successes in one slot with ``n`` contenders.

    With ``a = p/M``, choosing which ``s`` channels hold singletons and which
    devices sit on them gives ``C(M,s) n!/(n-s)! a^s F[M-s, n-s]`` (see
    :func:`_log_no_singleton_table`).
    """
    ContentionModel(M, n, p)
    if n > U_MAX:
        raise InstanceTooLarge(f"n={n} exceeds U_max={U_MAX}")
    F = _log_no_singleton_table(n, M, p)
    return _kernel_from_table(F, n, M, p)[n, : min(n, M) + 1]


def _quantiles(pmf: np.ndarray, qs: Sequence[float]) -> dict[float, float]:
    cdf = np.cumsum(pmf)
    out = {}
    for q in qs:
        hit = np.nonzero(cdf >= q - 1e-12)[0]
        out[q] = float(hit[0]) if len(hit) else math.inf
    return out


def exact_drain_time(
    M: int,
    U: int,
    p: float,
    quantiles: Sequence[float] = (0.5, 0.9, 0.95, 0.99),
    max_steps: int = 200_000,
    tail_mass: float = 1e-10,
) -> LatencyProfile:
    """Absorption statistics of the backlog chain ``n -> n - S`` started at ``U``.

    Means are solved by back-substitution (the chain only moves down).
    Quantiles come from propagating the state distribution forward until all
    but ``tail_mass`` has been absorbed, or ``max_steps`` slots have elapsed.
    The tagged-device delay uses ``P(tagged among the s winners) = s/n``.
    """
    model = ContentionModel(M, U, p)
    if U > U_MAX:
        raise InstanceTooLarge(f"U={U} exceeds U_max={U_MAX}; use the fluid model")
    if U == 0:
        return LatencyProfile(0.0, {q: 0.0 for q in quantiles}, 0.0, {q: 0.0 for q in quantiles}, 0.0,
                              np.array([1.0]), np.array([1.0]))
    F = _log_no_singleton_table(U, M, p)
    P = _kernel_from_table(F, U, M, p)
    S = P.shape[1] - 1

    T = np.zeros(U + 1)  # mean remaining drain time
    D = np.zeros(U + 1)  # mean remaining delay of a tagged device still in the backlog
    for n in range(1, U + 1):
        stay = P[n, 0]
        if stay >= 1.0:
            T[n:] = D[n:] = math.inf
            break
        s = np.arange(1, min(n, S) + 1)
        T[n] = (1.0 + P[n, s] @ T[n - s]) / (1.0 - stay)
        D[n] = (1.0 + (P[n, s] * (1.0 - s / n)) @ D[n - s]) / (1.0 - stay)

    drain_pmf, delay_pmf = _forward(P, U, max_steps, tail_mass)
    return LatencyProfile(
        mean_drain_slots=float(T[U]),
        drain_quantiles=_quantiles(drain_pmf, quantiles),
        mean_delay_slots=float(D[U]),
        delay_quantiles=_quantiles(delay_pmf, quantiles),
        slot_success_probability=slot_success_probability(model),
        drain_pmf=drain_pmf,
        delay_pmf=delay_pmf,
    )


def _forward(P: np.ndarray, U: int, max_steps: int, tail_mass: float) -> tuple[np.ndarray, np.ndarray]:
    """Slot-by-slot distribution of the drain time and of a tagged device's delay."""
    S = P.shape[1] - 1
    n = np.arange(U + 1)
    frac = np.arange(S + 1)[None, :] / np.maximum(n, 1)[:, None]
    x = np.zeros(U + 1)  # backlog distribution
    x[U] = 1.0
    y = np.zeros(U + 1)  # tagged device still waiting, joint with backlog
    y[U] = 1.0
    drain, delay = [0.0], [0.0]
    for _ in range(max_steps):
        nx = np.zeros(U + 1)
        ny = np.zeros(U + 1)
        won = 0.0
        for s in range(S + 1):
            w = P[s:, s] * x[s:]
            nx[: U + 1 - s] += w
            wy = P[s:, s] * y[s:]
            won += float(wy @ frac[s:, s])
            ny[: U + 1 - s] += wy * (1.0 - frac[s:, s])
        drain.append(nx[0] - x[0])
        delay.append(won)
        x, y = nx, ny
        if 1.0 - x[0] < tail_mass and y.sum() < tail_mass:
            break
    return np.array(drain), np.array(delay)


# Fluid approximation ---------------------------------------------------------

Policy = Union[float, Callable[[float], float]]
Rate = Union[float, Callable[[float], float]]


def adaptive_policy(M: int, scale: float = 1.0) -> Callable[[float], float]:
    """``p(n) = min(1, scale * M / n)``: every device knows the current backlog."""

    def p_of(n: float) -> float:
        return 1.0 if n <= scale * M else scale * M / n

    p_of.__name__ = f"adaptive_{scale:g}"
    return p_of


def _p(policy: Policy, n: float) -> float:
    return policy(n) if callable(policy) else policy


def _drift(M: int, policy: Policy, rate: Rate, t: float, n: float) -> float:
    lam = rate(t) if callable(rate) else rate
    n = max(n, 0.0)
    p = _p(policy, n)
    return lam - slot_throughput(M, n, p)


@dataclass
class FluidTrajectory:
    t: np.ndarray
    n: np.ndarray
    stable: bool
    equilibrium: float | None
    drain_time: float | None

    def at(self, t: float) -> float:
        return float(np.interp(t, self.t, self.n))


def fluid_drain_trajectory(
    M: int,
    n0: float = 0.0,
    p: Policy = 1.0,
    lam: Rate = 0.0,
    t_end: float | None = None,
    step: float = FLUID_STEP,
    drain_level: float = 0.5,
    divergence_factor: float = 100.0,
) -> FluidTrajectory:
    """Integrate ``dn/dt = lam(t) - n p (1 - p/M)^(n-1)`` with classical RK4.

    Time is in slots. Without ``t_end`` a closed system (``lam == 0``) runs
    until the backlog falls below ``drain_level``, whose crossing time is
    reported as ``drain_time``. The run is flagged unstable when the backlog
    exceeds ``divergence_factor`` times its starting scale.
    """
    check(M >= 1, "M", "must be >= 1")
    check(n0 >= 0, "n0", "must be >= 0")
    closed = not callable(lam) and lam == 0.0
    if t_end is None:
        if not closed:
            raise ValidationError("t_end", "required for an open system")
        t_end = math.inf
    cap = divergence_factor * max(n0, M, 1.0)
    ts, ns = [0.0], [float(n0)]
    t, n = 0.0, float(n0)
    drain_time = 0.0 if closed and n0 < drain_level else None
    f = lambda tt, nn: _drift(M, p, lam, tt, nn)  # noqa: E731
    max_steps = 50_000_000
    for _ in range(max_steps):
        if t >= t_end or (closed and drain_time is not None):
            break
        k1 = f(t, n)
        k2 = f(t + step / 2, n + step * k1 / 2)
        k3 = f(t + step / 2, n + step * k2 / 2)
        k4 = f(t + step, n + step * k3)
        n_new = max(0.0, n + step * (k1 + 2 * k2 + 2 * k3 + k4) / 6)
        if not math.isfinite(n_new):
            raise NonConvergence(f"backlog became {n_new} at t={t}")
        if closed and drain_time is None and n_new < drain_level:
            drain_time = t + step * (n - drain_level) / (n - n_new)
        t += step
        n = n_new
        ts.append(t)
        ns.append(n)
        if n > cap:
            break
    else:
        raise NonConvergence("step budget exhausted")
    stable = n <= cap
    equilibrium = None
    if stable:
        tail = abs(_drift(M, p, lam, t, n))
        if tail < 1e-6 * max(1.0, n):
            equilibrium = n
    return FluidTrajectory(np.array(ts), np.array(ns), stable, equilibrium, drain_time)


def _max_throughput(M: int, policy: Policy, n_max: float) -> float:
    grid = np.concatenate([np.linspace(0.0, 4.0 * M, 4001), np.geomspace(4.0 * M, max(n_max, 8.0 * M), 2001)])
    return max(slot_throughput(M, float(n), _p(policy, float(n))) for n in grid)


def stability_boundary(M: int, p: Policy = 1.0, rel_tol: float = 1e-3, n_max: float = 1e6) -> float:
    """Largest constant arrival rate for which a fluid backlog starting empty settles.

    Starting from ``n = 0`` the backlog grows until the throughput curve
    reaches ``lam``; it settles iff such a point exists. The boundary is
    located by bisection on ``lam`` to ``rel_tol``.
    """
    g_max = _max_throughput(M, p, n_max)

    def settles(lam: float) -> bool:
        return lam <= g_max

    lo, hi = 0.0, float(M)
    while settles(hi):
        hi *= 2
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if settles(mid):
            lo = mid
        else:
            hi = mid
    return lo


# Simulator bridge ------------------------------------------------------------


@dataclass
class Deviation:
    metric: str
    simulated: float
    analytic: float
    deviation: float
    tolerance: float
    ok: bool


@dataclass
class DeviationReport:
    model: ContentionModel
    deviations: list[Deviation]

    @property
    def ok(self) -> bool:
        return all(d.ok for d in self.deviations)

    def __getitem__(self, metric: str) -> Deviation:
        for d in self.deviations:
            if d.metric == metric:
                return d
        raise KeyError(metric)


_REQUIRED = {
    "mode": "analytic_compare",
    "prach.collision_model": "destroyed_at_msg1",
    "prach.detection_model": "always_detected",
    "prach.backoff_indicator_ms": 0,
    "prach.pre_backoff_ms": 0,
}


def _check_compatible(flat: dict) -> None:
    for key, want in _REQUIRED.items():
        if flat.get(key) != want:
            raise IncompatibleConfig(f"{key} = {flat.get(key)!r}; the contention model needs {want!r}")
    if flat.get("prach.msg1_retx_probability") is None and flat.get("prach.retx_probability_mode", "fixed") == "fixed":
        raise IncompatibleConfig("persistent-probability mode is not enabled")
    if flat.get("eab.enabled"):
        raise IncompatibleConfig("access barring is outside the contention model")
    if flat.get("prach.rar_grant_capacity_per_opportunity", 0):
        raise IncompatibleConfig("finite grant capacity is outside the contention model")
    lag = flat["prach.rar_response_delay_sf"] + flat["prach.msg2_to_msg3_delay_sf"] + flat["prach.msg4_delay_sf"]
    lost = flat["prach.rar_response_delay_sf"] + flat["prach.rar_window_sf"]
    if max(lag, lost) >= flat["prach.prach_period_sf"]:
        raise IncompatibleConfig("handshake does not complete within one PRACH period")


def compare_with_simulation(model: ContentionModel, sim_report, se_factor: float = 3.0,
                            rel_tol: float = 0.05) -> DeviationReport:
    """Deviation of simulated analytic-comparable run(s) from the model.

    ``sim_report`` is one report or a sequence of replicate reports of the
    same scenario. Per-slot success (saturated runs only, where the backlog
    stays at U) is judged in standard errors of the simulated mean. Drain time
    and tagged delay (draining runs) are averaged over the replicates and
    judged by relative deviation.
    """
    reports = list(sim_report) if isinstance(sim_report, (list, tuple)) else [sim_report]
    if not reports:
        raise ValueError("no simulation report to compare")
    flat = reports[0].header.get("scenario", {})
    _check_compatible(flat)
    for r in reports[1:]:
        other = {k: v for k, v in r.header.get("scenario", {}).items() if k != "seed"}
        if other != {k: v for k, v in flat.items() if k != "seed"}:
            raise IncompatibleConfig("replicate reports come from different scenarios")
    out = []
    if flat.get("saturated"):
        a = slot_success_probability(model)
        means = np.array([r.slot_success_mean for r in reports], dtype=float)
        if len(reports) == 1:
            sim, se = means[0], reports[0].slot_success_se
        else:
            sim, se = means.mean(), means.std(ddof=1) / math.sqrt(len(means))
        z = abs(sim - a) / se if se and not math.isnan(se) and se > 0 else (0.0 if sim == a else math.inf)
        out.append(Deviation("slot_success_probability", float(sim), a, z, se_factor, z <= se_factor))
    elif model.U <= U_MAX:
        prof = exact_drain_time(model.M, model.U, model.p)
        for name, anv in (("drain_slots", prof.mean_drain_slots), ("mean_delay_slots", prof.mean_delay_slots)):
            vals = np.array([getattr(r, name) for r in reports], dtype=float)
            if np.isnan(vals).any():
                continue
            simv = float(vals.mean())
            rel = abs(simv - anv) / anv
            out.append(Deviation(name, simv, anv, rel, rel_tol, rel <= rel_tol))
    return DeviationReport(model, out)


def analytic_compare_scenario(M: int, U: int, p: float | str, *, saturated: bool = False,
                              duration_sf: int | None = None, seed: int = 1, name: str = "analytic_compare"):
    """Scenario in which the simulator reproduces the contention model.

    ``p`` is a fixed probability, or ``"enb_broadcast"`` / ``"local_estimate"``
    for the backlog-adaptive ``min(1, M/n)`` policies.
    """
    from .scenario import scenario_from_dict

    prach = {
        "num_preambles": M,
        "prach_period_sf": 5,
        "backoff_indicator_ms": 0,
        "pre_backoff_ms": 0,
        "max_preamble_tx": 1_000_000,
        "rar_response_delay_sf": 1,
        "rar_window_sf": 1,
        "msg2_to_msg3_delay_sf": 1,
        "msg4_delay_sf": 1,
        "detection_model": "always_detected",
        "collision_model": "destroyed_at_msg1",
    }
    if isinstance(p, str):
        prach["retx_probability_mode"] = p
    else:
        prach["msg1_retx_probability"] = float(p)
    doc = {"name": name, "seed": seed, "mode": "analytic_compare", "saturated": saturated,
           "prach": prach, "N": U, "law": "uniform", "span_ms": 1}
    if duration_sf is not None:
        doc["duration_sf"] = duration_sf
    return scenario_from_dict(doc)

"""Brute-force and Monte Carlo reference computations used by the oracle tests.

Nothing here imports the package under test: every helper recomputes its
quantity from first principles so that agreement is meaningful.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def enumerate_slot_success(U: int, M: int, p: float) -> float:
    """P(tagged device 0 succeeds in one slot), by enumerating every outcome.

    Each device either stays silent (weight 1 - p) or transmits on one of M
    channels (weight p / M each). Device 0 succeeds if it transmits and no
    other transmitter chose its channel.
    """
    choices = [None] + list(range(M))
    weight = {None: 1.0 - p, **{c: p / M for c in range(M)}}
    total = 0.0
    for combo in itertools.product(choices, repeat=U):
        w = math.prod(weight[c] for c in combo)
        if w == 0.0 or combo[0] is None:
            continue
        if sum(1 for c in combo if c == combo[0]) == 1:
            total += w
    return total


def mean_singletons(balls: int, bins: int) -> float:
    """Expected number of bins holding exactly one ball (linearity of expectation)."""
    if balls == 0:
        return 0.0
    return balls * (1.0 - 1.0 / bins) ** (balls - 1)


def mc_singletons(balls: int, bins: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Per-trial count of balls landing alone in their bin."""
    picks = rng.integers(0, bins, size=(trials, balls))
    load = np.zeros((trials, bins), dtype=np.int64)
    np.add.at(load, (np.arange(trials)[:, None], picks), 1)
    return (np.take_along_axis(load, picks, axis=1) == 1).sum(axis=1)


def mc_drain(M: int, U: int, p: float, trials: int, rng: np.random.Generator):
    """Slotted multichannel contention until every device has succeeded.

    Returns (drain slots, per-trial mean success slot) arrays of length ``trials``.
    """
    active = np.ones((trials, U), dtype=bool)
    done_at = np.zeros((trials, U))
    rows = np.arange(trials)[:, None]
    cols = np.arange(U)[None, :]
    t = 0
    while active.any():
        t += 1
        tx = active & (rng.random((trials, U)) < p)
        ch = rng.integers(0, M, size=(trials, U))
        occ = np.zeros((trials, U, M), dtype=bool)
        occ[rows, cols, ch] = True
        occ &= tx[:, :, None]
        load = occ.sum(axis=1)
        win = tx & (np.take_along_axis(load, ch, axis=1) == 1)
        done_at[win] = t
        active &= ~win
    return done_at.max(axis=1), done_at.mean(axis=1)


def drx_day_energy_by_cycles(cycle_ms: int, on_ms: int, p_rx: float, p_off: float,
                             wakeup_mj: float, horizon_ms: int) -> float:
    """Idle energy (mJ) by walking the horizon one paging cycle at a time."""
    e = 0.0
    t = 0
    while t < horizon_ms:
        span = min(cycle_ms, horizon_ms - t)
        on = min(on_ms, span)
        e += wakeup_mj + (on * p_rx + (span - on) * p_off) / 1000.0
        t += span
    return e

"""Feasibility masks (local, one/two-step lookahead, exact) and a small exact solver."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import kernels
from .env import ConstructionState
from .instances import Instance, NonUnitDemandError, RawTsptw, TspdlInstance, distance_matrix

EXACT_MASK_MAX_REMAINING = 15
EXACT_SOLVE_MAX_N = 12
BENCH_SOLVE_MAX_N = 22


class Level(str, enum.Enum):
    LOCAL = "Local"
    PI1 = "PI1"
    PI2 = "PI2"
    EXACT = "Exact"
    PREDICTED = "Predicted"


@dataclass(frozen=True, eq=False)
class Mask:
    selectable: np.ndarray
    level: Level

    def nodes(self) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.selectable)]

    def bitstring(self) -> str:
        return "".join("1" if s else "0" for s in self.selectable)

    def __len__(self):
        return int(self.selectable.sum())


class TooLarge(ValueError):
    """Refused by an exponential-size guard."""


def _state_args(state: ConstructionState):
    dist, travel, lo, hi = state.instance.kernel_arrays()
    return state.current, float(state.resource), state.visited_array(), travel, lo, hi


def local_mask(state: ConstructionState) -> Mask:
    cur, r, visited, travel, lo, hi = _state_args(state)
    out = np.empty(len(visited), dtype=np.bool_)
    kernels.local_mask(cur, r, visited, travel, hi, out)
    return Mask(out, Level.LOCAL)


def pi_mask(state: ConstructionState, k: int) -> Mask:
    if k not in (0, 1, 2):
        raise ValueError(f"lookahead depth must be 0, 1 or 2, got {k}")
    cur, r, visited, travel, lo, hi = _state_args(state)
    out = np.empty(len(visited), dtype=np.bool_)
    kernels.pi_mask(cur, r, visited, travel, lo, hi, k, out)
    return Mask(out, (Level.LOCAL, Level.PI1, Level.PI2)[k])


def exact_mask_tsptw(state: ConstructionState) -> Mask:
    cur, r, visited, travel, lo, hi = _state_args(state)
    m = int((~visited).sum())
    if m > EXACT_MASK_MAX_REMAINING:
        raise TooLarge(f"{m} remaining nodes exceeds the exact-mask limit {EXACT_MASK_MAX_REMAINING}")
    out = np.empty(len(visited), dtype=np.bool_)
    kernels.exact_mask_dp(cur, r, visited, travel, lo, hi, out)
    return Mask(out, Level.EXACT)


def _require_unit(inst: TspdlInstance):
    if inst.demand[0] != 0 or not np.all(inst.demand[1:] == 1):
        raise NonUnitDemandError("exact TSPDL mask needs unit customer demands")


def exact_mask_tspdl(state: ConstructionState) -> Mask:
    if not isinstance(state.instance, TspdlInstance):
        raise TypeError("exact_mask_tspdl needs a TSPDL state")
    _require_unit(state.instance)
    cur, r, visited, travel, lo, hi = _state_args(state)
    out = np.empty(len(visited), dtype=np.bool_)
    kernels.exact_mask_hall(cur, r, visited, travel, hi, out)
    return Mask(out, Level.EXACT)


def exact_mask(state: ConstructionState) -> Mask:
    if isinstance(state.instance, TspdlInstance):
        return exact_mask_tspdl(state)
    return exact_mask_tsptw(state)


def depot_return_ok(state: ConstructionState) -> bool:
    cur, r, visited, travel, lo, hi = _state_args(state)
    return bool(kernels.depot_return_ok(cur, r, travel, hi))


def has_feasible_completion(state: ConstructionState) -> bool:
    if state.done:
        return state.j_in == 0 and depot_return_ok(state)
    return state.j_in == 0 and len(exact_mask(state)) > 0


def _solve(inst: Instance):
    dist, travel, lo, hi = inst.kernel_arrays()
    tour = np.zeros(inst.n + 1, dtype=np.int64)
    best = kernels.exact_solve_kernel(dist, travel, lo, hi, tour)
    if not np.isfinite(best):
        return None, float("inf")
    return tuple(int(x) for x in tour), float(best)


def exact_solve_small(inst: Instance):
    """Shortest violation-free tour, or ``(None, inf)`` when none exists.

    Ties go to the lexicographically smallest tour.
    """
    if inst.n > EXACT_SOLVE_MAX_N:
        raise TooLarge(f"n={inst.n} exceeds the exact solver limit {EXACT_SOLVE_MAX_N}")
    return _solve(inst)


def benchmark_arrays(raw: RawTsptw, rounding: str = "none"):
    """(dist, travel, lo, hi) in raw units; ``floor`` mimics the historical truncated distances."""
    d = distance_matrix(raw.coords)
    if rounding == "floor":
        d = np.floor(d)
    elif rounding != "none":
        raise ValueError(f"unknown rounding {rounding!r}")
    return d, d, np.asarray(raw.tw_lo, dtype=np.float64), np.asarray(raw.tw_hi, dtype=np.float64)


def solve_benchmark(raw: RawTsptw, rounding: str = "none"):
    """Optimal violation-free tour of a parsed benchmark file, length in raw units.

    Same branch and bound as :func:`exact_solve_small`; tight benchmark
    windows keep the search small, so the size limit is looser.
    """
    if raw.n > BENCH_SOLVE_MAX_N:
        raise TooLarge(f"n={raw.n} exceeds the benchmark solver limit {BENCH_SOLVE_MAX_N}")
    dist, travel, lo, hi = benchmark_arrays(raw, rounding)
    tour = np.zeros(raw.n + 1, dtype=np.int64)
    best = kernels.exact_solve_kernel(dist, travel, lo, hi, tour)
    if not np.isfinite(best):
        return None, float("inf")
    return tuple(int(x) for x in tour), float(best)


def validate_benchmark_tour(raw: RawTsptw, tour, rounding: str = "none"):
    """(length, violated nodes) of a tour on the raw benchmark data."""
    dist, travel, lo, hi = benchmark_arrays(raw, rounding)
    t = np.asarray(tour, dtype=np.int64)
    if sorted(t.tolist()) != list(range(raw.n + 1)) or t[0] != 0:
        raise ValueError("tour is not a permutation starting at the depot")
    length, _, nviol = kernels.replay_kernel(t, dist, travel, lo, hi)
    return float(length), int(nviol)


def dump_line(t: int, mask: Mask) -> str:
    return f"step {t}: level={mask.level.value} selectable={mask.bitstring()}"


def audit(instances, samples_per_instance: int, seed: int):
    """Random local-feasible walks comparing every mask level on each visited state.

    Returns a dict of counters; a sound and nested mask family has zero
    ``nest_violations``, ``unsound_pi1`` and ``unsound_pi2``.
    """
    rng = np.random.default_rng(seed)
    counts = np.zeros(6, dtype=np.int64)
    for inst in instances:
        if isinstance(inst, TspdlInstance):
            _require_unit(inst)
            variant = 1
        else:
            if inst.n > EXACT_MASK_MAX_REMAINING:
                raise TooLarge(f"audit needs n <= {EXACT_MASK_MAX_REMAINING}")
            variant = 0
        _, travel, lo, hi = inst.kernel_arrays()
        u = rng.random((samples_per_instance, inst.n))
        for row in u:
            kernels.audit_kernel(travel, lo, hi, variant, row, counts)
    keys = ("states", "nest_violations", "unsound_pi1", "unsound_pi2",
            "pi1_looser_than_exact", "pi2_tighter_than_pi1")
    return dict(zip(keys, (int(c) for c in counts)))
